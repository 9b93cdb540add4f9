"""Few-step flow-matching samplers (MeanFlow, ReFlow Euler, HybridFlow) on synthetic tasks."""

__version__ = "0.1.0"
