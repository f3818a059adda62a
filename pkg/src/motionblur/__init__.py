"""Linear-motion reblurring and variational self-supervised deblurring."""

__version__ = "0.1.0"
