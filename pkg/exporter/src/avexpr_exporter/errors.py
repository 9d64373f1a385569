class ExporterError(Exception):
    """Base for everything this package raises on purpose."""


class ManifestError(ExporterError):
    pass


class InputError(ExporterError):
    pass


class EncoderUnavailable(ExporterError):
    """Requested encoder needs optional dependencies that are not installed."""
