"""Exception types shared across the selection engine.

Every error that names a row or byte offset carries it as an attribute so
callers (and the CLI) can report exactly where a file or table went bad.
"""


class CoreselectError(Exception):
    """Base class for all engine errors."""


class MagicMismatch(CoreselectError):
    def __init__(self, expected: bytes, found: bytes):
        self.expected = expected
        self.found = found
        super().__init__(f"bad magic: expected {expected!r}, found {found!r}")


class VersionUnsupported(CoreselectError):
    def __init__(self, version: int):
        self.version = version
        super().__init__(f"unsupported format version {version}")


class TruncatedFile(CoreselectError):
    def __init__(self, offset: int, wanted: int, available: int):
        self.offset = offset
        self.wanted = wanted
        self.available = available
        super().__init__(
            f"file truncated at offset {offset}: wanted {wanted} bytes, got {available}"
        )


class TrailingBytes(CoreselectError):
    def __init__(self, offset: int, extra: int):
        self.offset = offset
        self.extra = extra
        super().__init__(f"{extra} unexpected trailing bytes after offset {offset}")


class LabelOutOfRange(CoreselectError):
    def __init__(self, row: int, label: int, k: int):
        self.row = row
        self.label = label
        self.k = k
        super().__init__(f"row {row}: label {label} outside [0, {k})")


class NonFiniteValue(CoreselectError):
    def __init__(self, where: str, row: int):
        self.where = where
        self.row = row
        super().__init__(f"non-finite value in {where}, row {row}")


class ZeroNormRow(CoreselectError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} has zero L2 norm")


class DimensionMismatch(CoreselectError):
    pass


class EmptyBatch(CoreselectError):
    pass


class NonFiniteLoss(CoreselectError):
    pass


class LengthMismatch(CoreselectError):
    pass


class RatioOutOfRange(CoreselectError):
    def __init__(self, ratio: float):
        self.ratio = ratio
        super().__init__(f"selection ratio must lie in (0, 1), got {ratio}")


class ClassTooSmall(CoreselectError):
    def __init__(self, label: int, size: int):
        self.label = label
        self.size = size
        super().__init__(f"class {label} has {size} sample(s), need at least 2")


class SpecInvalid(CoreselectError):
    pass


class ConfigInvalid(CoreselectError):
    pass
