"""Desk-scale autoscaling laboratory.

Workload forecasting, a heteroscedastic CPU estimator with online
correction, a chance-constrained MPC planner, baseline autoscalers and a
minute-resolution cluster simulator, tied together by a JSON-configured CLI.
"""

__version__ = "0.1.0"
