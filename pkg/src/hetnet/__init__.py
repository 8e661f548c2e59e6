"""Wi-Fi/LiFi offload selection: trace analysis, channel model, KPI predictors
and the contextual-bandit antenna controller."""

__version__ = "0.1.0"
