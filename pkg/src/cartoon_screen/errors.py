"""Exception hierarchy shared by the pipeline stages."""


class ScreenError(Exception):
    """Base class for all pipeline errors."""


class ManifestError(ScreenError):
    """Malformed manifest: bad JSON, unknown label, duplicate id."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VideoDecodeError(ScreenError):
    """A video could not be opened or decoded."""


class NoMotionDataError(ScreenError):
    """The codec does not carry compressed-domain motion vectors."""


class ConfigurationError(ScreenError):
    """Descriptor, weights or pipeline configuration is inconsistent."""


class FeatureError(ScreenError):
    """Feature pooling or cache failure."""


class TrainingError(ScreenError):
    """Classifier training received unusable data."""


class UndefinedMetricError(ScreenError):
    """A metric is undefined for the given confusion counts."""
