"""Error taxonomy for the exporter."""


class ExportError(Exception):
    """Bad job description, missing weights, unreadable inputs."""


class TensorFormatError(ExportError):
    """Malformed or truncated tensor container file."""
