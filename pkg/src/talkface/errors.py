"""Exception hierarchy shared by every stage of the pipeline."""


class TalkfaceError(Exception):
    """Base class; ``code`` is the machine-parsable tag printed by the CLI."""

    code = "error"


class AlignmentDegenerateError(TalkfaceError):
    code = "alignment-degenerate"


class DegenerateCylinderError(TalkfaceError):
    code = "degenerate-cylinder"


class UndefinedAzimuthError(TalkfaceError):
    code = "undefined-azimuth"


class ShapeError(TalkfaceError, ValueError):
    code = "shape-mismatch"


class FormatError(TalkfaceError):
    code = "bad-format"


class AudioError(TalkfaceError):
    code = "audio"


class ConfigError(TalkfaceError):
    code = "config"


class TrainingError(TalkfaceError):
    code = "training"
