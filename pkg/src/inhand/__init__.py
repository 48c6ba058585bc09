"""Planning and control of in-hand tool manipulation with a multifingered hand."""

__version__ = "0.1.0"
