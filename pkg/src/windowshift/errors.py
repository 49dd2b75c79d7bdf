"""Exception types shared across the toolkit."""


class WindowshiftError(Exception):
    """Base class for all toolkit errors."""


class CalibrationError(WindowshiftError):
    """Attenuation-to-HU conversion received invalid inputs."""


class VolumeIOError(WindowshiftError):
    """Base class for volume file errors."""


class MalformedHeaderError(VolumeIOError):
    """A file header field is inconsistent or corrupt. Names the field."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        msg = f"malformed header field {field!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class UnsupportedDatatypeError(VolumeIOError):
    """The file stores voxels in a datatype the toolkit does not read."""

    def __init__(self, field: str, value):
        self.field = field
        self.value = value
        super().__init__(f"unsupported {field}: {value!r}")


class DimensionMismatchError(VolumeIOError):
    """Image and mask (or header and payload) disagree on dimensions."""

    def __init__(self, field: str, expected, actual):
        self.field = field
        self.expected = expected
        self.actual = actual
        super().__init__(f"dimension mismatch on {field}: expected {expected}, got {actual}")


class EmptyStatsError(WindowshiftError):
    """A statistic was requested from stats with no accumulated foreground."""


class BinningMismatchError(WindowshiftError):
    """Two stats objects use different histogram binning and cannot merge."""


class DegenerateWindowError(WindowshiftError):
    """The derived viewing window would have zero width."""


class MissingClassError(WindowshiftError):
    """A requested label class has no voxels (or no median entries)."""


class StageContractError(WindowshiftError):
    """An operation received pixels at the wrong preprocessing stage."""


class GeometryError(WindowshiftError):
    """Phantom geometry is infeasible for the requested dimensions."""


class SchemaError(WindowshiftError):
    """A serialized document is missing fields or has a bad version. Names the field."""

    def __init__(self, field: str, detail: str = ""):
        self.field = field
        msg = f"invalid document field {field!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
