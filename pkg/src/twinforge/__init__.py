"""twinforge: a digital twin of a small data center.

Synthetic thermal/electrical plant, graph-network anomaly scoring, Q-learning
retrain control, checkpointable hyperparameter search, energy and carbon
accounting, and a what-if engine, exposed through a CLI and an HTTP service.
"""

__version__ = "0.1.0"
