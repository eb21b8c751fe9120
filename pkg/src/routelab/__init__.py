"""routelab: a desk-scale laboratory for personalized multi-channel
customer-service request routing.

Subpackages: env (queueing simulator), user_model (preference model),
nn (from-scratch networks), replay (experience buffers), agents (Q-learning
variants and baselines), forecast (flow forecasting), datagen (synthetic
data), metrics (evaluation battery), cli (batch commands).
"""

__version__ = "0.1.0"
