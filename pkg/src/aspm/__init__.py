"""Sleep-apnea screening from respiration-belt signals: preprocessing,
period classifiers, per-subject AHI estimation and int8 inference."""

__version__ = "0.1.0"
