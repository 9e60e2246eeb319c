"""IPv6 reconnaissance for residential ISP networks."""

from .addr import Prefix, format_address, parse_address, parse_prefix

__version__ = "0.1.0"

__all__ = ["Prefix", "format_address", "parse_address", "parse_prefix", "__version__"]
