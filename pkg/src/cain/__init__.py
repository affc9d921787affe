"""Context-aware interest network for CTR prediction over lifelong behavior sequences."""

__version__ = "0.1.0"
