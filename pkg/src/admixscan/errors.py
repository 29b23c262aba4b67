"""Exception types shared across the package."""


class AdmixscanError(Exception):
    """Base class for package-specific failures."""


class DataFormatError(AdmixscanError, ValueError):
    """An input file violates the documented tabular format."""


class AlignmentError(AdmixscanError, ValueError):
    """Subject or marker identifiers do not line up between inputs."""


class DegenerateDesignError(AdmixscanError, ValueError):
    """A regression design is singular, e.g. a constant ancestry column."""


class ForwardUnderflowError(AdmixscanError, FloatingPointError):
    """The forward pass lost all probability mass at some locus."""

    def __init__(self, subject, locus, message=None):
        self.subject = int(subject)
        self.locus = int(locus)
        super().__init__(
            message
            or f"zero forward mass at subject {self.subject}, locus {self.locus}"
        )


class DrawsFileError(AdmixscanError, ValueError):
    """An ancestry-draws file is corrupt, truncated or has a bad version."""
