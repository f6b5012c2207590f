"""Augmentation-based model re-adaptation toolkit.

Deterministic augmentation engine, moment-based angle-adaptive cropping,
a dual-metric evaluation harness and the evolving augmentation pool loop,
exercised on synthetic code-like images.
"""

__version__ = "0.1.0"
