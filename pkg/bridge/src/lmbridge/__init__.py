"""Socket bridge exposing pretrained LMs as word-level conditional scorers."""

__version__ = "0.1.0"
