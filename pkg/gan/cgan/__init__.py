"""Conditional DCGAN toolkit on a small numpy reverse-mode autodiff core."""
__version__ = '0.1.0'
