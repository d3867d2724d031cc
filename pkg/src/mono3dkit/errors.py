"""Exception types shared across the toolkit."""


class NonRepresentable(ValueError):
    """A decimal value cannot be expressed as a whole number of micrometers."""


class NonRenderable(ValueError):
    """A length cannot be written in the target unit within six fractional digits."""


class FormatError(ValueError):
    """A binary container is structurally malformed (magic, version, lengths)."""


class DataError(ValueError):
    """A container parses but violates a data invariant (NaN/Inf, empty mask)."""


class ShapeMismatch(ValueError):
    """Operands disagree on dimensions."""


class MaskMismatch(ValueError):
    """Paired bundles carry different validity masks."""


class ZeroNormRow(ValueError):
    """A masked-in embedding row has zero norm, so cosine is undefined."""


class NonFinite(ValueError):
    """An input or result contains NaN or infinity."""


class InvalidProbability(ValueError):
    """A probability vector has entries outside (0, 1] or does not sum to one."""


class DegenerateBox(ValueError):
    """A box has inverted extents or non-positive dimensions."""


class EmptySet(ValueError):
    """An aggregate was requested over zero records."""
