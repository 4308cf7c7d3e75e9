"""Complementary-label learning with kNN complementary-label augmentation."""

__version__ = "0.1.0"
