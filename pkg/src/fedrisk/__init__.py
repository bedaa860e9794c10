"""Federated-learning simulation harness for at-risk student prediction.

The package ingests OULAD-format CSV tables (or generates a synthetic
corpus in the same shape), engineers early-performance and engagement
features, and trains logistic-regression and MLP classifiers either
centrally or under FedAvg orchestration with per-round evaluation on a
held-out test set. Every stage is seeded and deterministic.
"""

__version__ = "0.1.0"
