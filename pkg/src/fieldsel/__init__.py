"""Feature-field selection for categorical click-prediction models.

Path-averaged gradient importance with per-sample smoothing baselines, an
importance regularizer for training, reference estimators and small
reproducible bias demonstrations.
"""

__version__ = "0.1.0"
