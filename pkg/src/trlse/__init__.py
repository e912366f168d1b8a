"""Active level set estimation with trust regions and local/global GP surrogates."""

__version__ = "0.1.0"
