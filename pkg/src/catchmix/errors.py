"""Exception types shared across the package.

Every error that a caller may want to catch programmatically gets its own
class; all inherit from :class:`CatchmixError`. Loading/validation errors
carry enough context (file, row, column) to locate the offending input.
"""

from __future__ import annotations


class CatchmixError(Exception):
    """Base class for all package-specific errors."""


# --- ingestion -----------------------------------------------------------

class MissingFile(CatchmixError):
    pass


class MissingColumn(CatchmixError):
    def __init__(self, file: str, column: str):
        super().__init__(f"{file}: missing required column {column!r}")
        self.file = file
        self.column = column


class UnknownSiteReference(CatchmixError):
    def __init__(self, site_id: str, row: int, file: str = ""):
        super().__init__(f"{file} row {row}: unknown site {site_id!r}")
        self.site_id = site_id
        self.row = row
        self.file = file


class UnknownCatchmentReference(CatchmixError):
    def __init__(self, catchment_id: str, row: int, file: str = ""):
        super().__init__(f"{file} row {row}: unknown catchment {catchment_id!r}")
        self.catchment_id = catchment_id
        self.row = row
        self.file = file


class NonFiniteValue(CatchmixError):
    def __init__(self, file: str, row: int, column: str, raw: str = ""):
        super().__init__(f"{file} row {row}, column {column!r}: non-finite or unparseable value {raw!r}")
        self.file = file
        self.row = row
        self.column = column


class CompositionNotNormalized(CatchmixError):
    def __init__(self, catchment_id: str, detail: str, row: int = -1):
        super().__init__(f"composition for {catchment_id!r}: {detail}")
        self.catchment_id = catchment_id
        self.row = row


class DuplicateSiteId(CatchmixError):
    pass


class TooSparse(CatchmixError):
    pass


# --- lattice -------------------------------------------------------------

class DuplicateSites(CatchmixError):
    pass


class DegenerateBox(CatchmixError):
    pass


class IndexOutOfRange(CatchmixError):
    pass


class SelfEdge(CatchmixError):
    pass


class NoPolygons(CatchmixError):
    pass


# --- numerics ------------------------------------------------------------

class LengthMismatch(CatchmixError):
    pass


class SpanTooSmall(CatchmixError):
    pass


class SeriesTooShort(CatchmixError):
    pass


class EmptyComponent(CatchmixError):
    pass


class EmptyBasis(CatchmixError):
    pass


class FixedPointDiverged(CatchmixError):
    pass


class SingularDesign(CatchmixError):
    pass


class TooLarge(CatchmixError):
    pass


class ZeroComponent(CatchmixError):
    pass


class AlignmentMismatch(CatchmixError):
    pass


class CategoryMismatch(CatchmixError):
    pass


class EmptyChain(CatchmixError):
    pass


class ConfigError(CatchmixError):
    pass


#: Errors caused by bad user input rather than by a failure during compute.
#: The CLI maps these to exit code 1 and everything else to exit code 2.
INPUT_ERRORS = (
    MissingFile,
    MissingColumn,
    UnknownSiteReference,
    UnknownCatchmentReference,
    NonFiniteValue,
    CompositionNotNormalized,
    DuplicateSiteId,
    DuplicateSites,
    DegenerateBox,
    CategoryMismatch,
    ConfigError,
)
