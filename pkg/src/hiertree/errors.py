"""Exception hierarchy shared across the package.

Every error raised by hiertree derives from :class:`HiertreeError` so callers
can catch one base type at API boundaries (service handlers, CLI).
"""
from __future__ import annotations


class HiertreeError(Exception):
    """Base class for all hiertree errors."""


class ConfigError(HiertreeError):
    """Invalid or missing configuration (bad file, bad flag value, bad spec)."""


# --- vectors ---------------------------------------------------------------

class ZeroVector(HiertreeError):
    """A vector with (numerically) zero norm cannot be normalized."""


class DimensionMismatch(HiertreeError):
    """Two vectors or vector collections disagree on dimensionality."""


class EmptyInput(HiertreeError):
    """An operation requiring at least one element received none."""


# --- clustering ------------------------------------------------------------

class TooFewPoints(HiertreeError):
    """Fewer points than requested clusters."""


class DegenerateClustering(HiertreeError):
    """The class set cannot be split into two or more groups."""


# --- description gateway ----------------------------------------------------

class ProviderUnavailable(HiertreeError):
    """The description provider could not be reached or keeps failing."""


class ParseFailure(HiertreeError):
    """Provider output did not follow the required response format."""


class MissingClassInResponse(ParseFailure):
    """A class expected in the comparative response was absent."""


class CacheMiss(HiertreeError):
    """Replay provider has no recorded response for this request."""


class InvalidClassId(HiertreeError):
    """A class identifier is empty or otherwise unusable."""


class InvalidInput(HiertreeError):
    """A gateway operation received an empty or malformed argument."""


# --- tree ------------------------------------------------------------------

class UnknownClass(HiertreeError):
    """The requested class is not part of the tree."""


# --- scoring ---------------------------------------------------------------

class EmptyClassSet(HiertreeError):
    """Classification requires at least one candidate class."""


class LengthMismatch(HiertreeError):
    """Trace levels and description levels are not aligned."""


# --- persistence -----------------------------------------------------------

class BadMagic(HiertreeError):
    """Embedding file does not start with the expected magic bytes."""


class VersionMismatch(HiertreeError):
    """Embedding file was written by an unsupported format version."""


class DuplicateId(HiertreeError):
    """An id occurs more than once where ids must be unique."""


class TruncatedFile(HiertreeError):
    """Embedding file ended mid-record."""


class InvalidSpec(HiertreeError):
    """Synthetic embedding specification is malformed."""


class Transport(ProviderUnavailable):
    """A network-level failure talking to an HTTP endpoint."""


class SchemaMismatch(HiertreeError):
    """An HTTP response did not match the expected wire schema."""


# --- evaluation ------------------------------------------------------------

class MissingEmbedding(HiertreeError):
    """A manifest item or class has no embedding."""


class ClassSetMismatch(HiertreeError):
    """Tree, manifest, or label embeddings disagree on the class set."""


class ShapeMismatch(HiertreeError):
    """Two evaluation results are not comparable cell by cell."""
