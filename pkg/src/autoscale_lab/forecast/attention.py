"""Linear-complexity flow attention with a hand-derived backward pass.

Queries and keys go through a logistic feature map.  With ``Qs = s(Q)`` and
``Ks = s(K)``:

* incoming flow  ``I_i = Qs_i . sum_j Ks_j``, outgoing ``O_j = Ks_j . sum_i Qs_i``
* conserved flows ``Ihat_i = Qs_i . sum_j Ks_j / O_j`` and
  ``Ohat_j = Ks_j . sum_i Qs_i / I_i``
* competition  ``Vt = m * softmax(Ohat)[:, None] * V``
* aggregation  ``Agg = diag(1/I) Qs (Ks^T Vt)``
* allocation   ``Out = s(Ihat)[:, None] * Agg``

No ``n x m`` matrix is formed.  All arrays carry a leading batch axis.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def flow_attention(Q, K, V, return_cache: bool = False):
    """``Q: (B, n, d)``, ``K: (B, m, d)``, ``V: (B, m, v)`` -> ``(B, n, v)``.

    2-d inputs are treated as a batch of one.
    """
    squeeze = np.ndim(Q) == 2
    if squeeze:
        Q, K, V = Q[None], K[None], V[None]
    Q, K, V = (np.asarray(a, dtype=float) for a in (Q, K, V))
    if Q.shape[0] != K.shape[0] or K.shape[:2] != V.shape[:2] or Q.shape[2] != K.shape[2]:
        raise ValueError(f"non-conformable shapes Q{Q.shape} K{K.shape} V{V.shape}")
    m = K.shape[1]

    Qs, Ks = sigmoid(Q), sigmoid(K)
    sK, sQ = Ks.sum(1), Qs.sum(1)
    I = (Qs @ sK[..., None])[..., 0]
    O = (Ks @ sQ[..., None])[..., 0]
    a = ((1.0 / O)[:, None, :] @ Ks)[:, 0]
    bvec = ((1.0 / I)[:, None, :] @ Qs)[:, 0]
    Ihat = (Qs @ a[..., None])[..., 0]
    Ohat = (Ks @ bvec[..., None])[..., 0]
    p = np.exp(Ohat - Ohat.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    Vt = m * p[..., None] * V
    KV = Ks.transpose(0, 2, 1) @ Vt
    num = Qs @ KV
    agg = num / I[..., None]
    g = sigmoid(Ihat)
    out = g[..., None] * agg

    if squeeze:
        out = out[0]
    if not return_cache:
        return out
    cache = dict(Qs=Qs, Ks=Ks, V=V, sK=sK, sQ=sQ, I=I, O=O, a=a, b=bvec,
                 p=p, Vt=Vt, KV=KV, agg=agg, g=g, m=m, squeeze=squeeze)
    return out, cache


def flow_attention_backward(dout, cache):
    """Gradients ``(dQ, dK, dV)`` of a scalar loss given ``dL/dOut``."""
    c = cache
    if c["squeeze"]:
        dout = dout[None]
    Qs, Ks, V, I, O, p, g, agg, m = c["Qs"], c["Ks"], c["V"], c["I"], c["O"], c["p"], c["g"], c["agg"], c["m"]

    dg = np.sum(dout * agg, axis=-1)
    dagg = dout * g[..., None]
    dIhat = dg * g * (1.0 - g)
    dnum = dagg / I[..., None]
    dI = -np.sum(dagg * agg, axis=-1) / I

    dQs = dnum @ c["KV"].transpose(0, 2, 1)
    dKV = Qs.transpose(0, 2, 1) @ dnum
    dKs = c["Vt"] @ dKV.transpose(0, 2, 1)
    dVt = Ks @ dKV
    dV = m * p[..., None] * dVt
    dp = m * np.sum(dVt * V, axis=-1)
    dOhat = p * (dp - np.sum(dp * p, axis=1, keepdims=True))

    # Ohat = Ks @ b,  b = sum_i Qs_i / I_i
    dKs += dOhat[..., None] * c["b"][:, None, :]
    db = (dOhat[:, None, :] @ Ks)[:, 0]
    dQs += db[:, None, :] / I[..., None]
    dI -= (Qs @ db[..., None])[..., 0] / I**2

    # Ihat = Qs @ a,  a = sum_j Ks_j / O_j
    dQs += dIhat[..., None] * c["a"][:, None, :]
    da = (dIhat[:, None, :] @ Qs)[:, 0]
    dKs += da[:, None, :] / O[..., None]
    dO = -(Ks @ da[..., None])[..., 0] / O**2

    # I = Qs @ sK,  O = Ks @ sQ
    dQs += dI[..., None] * c["sK"][:, None, :]
    dKs += dO[..., None] * c["sQ"][:, None, :]
    dKs += (dI[:, None, :] @ Qs)[:, 0][:, None, :]
    dQs += (dO[:, None, :] @ Ks)[:, 0][:, None, :]

    dQ = dQs * Qs * (1.0 - Qs)
    dK = dKs * Ks * (1.0 - Ks)
    if c["squeeze"]:
        return dQ[0], dK[0], dV[0]
    return dQ, dK, dV
