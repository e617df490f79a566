"""noforge: neural operators for brain displacement fields, with hand-derived gradients."""

__version__ = "0.1.0"
