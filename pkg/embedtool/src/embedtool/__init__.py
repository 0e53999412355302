"""Offline embedding exporter.

Encodes category label text with pre-trained encoders (word-vector averaging
or sentence encoders) and writes the ``key,v_1,...,v_E`` CSV consumed by the
risk-factor reduction pipeline.
"""

__version__ = "0.1.0"


class EmbedToolError(Exception):
    """Base class for exporter errors."""


class ModelUnavailable(EmbedToolError):
    """The requested pre-trained model cannot be loaded."""


class OOVLabel(EmbedToolError):
    """Every token of a label is unknown to the word encoder."""


class TooFewRows(EmbedToolError):
    """The 2-D projection needs at least three rows."""


class LabelFileError(EmbedToolError):
    """Malformed label file (duplicate keys, empty labels, bad header)."""
