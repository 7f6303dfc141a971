"""Channel-wise subband (CWS) voice/accompaniment separation toolkit."""

__version__ = "0.1.0"
