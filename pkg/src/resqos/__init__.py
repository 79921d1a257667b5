"""QoS prediction from invocation histories: PLRes residual network and a UIPCC baseline."""

__version__ = "0.1.0"
