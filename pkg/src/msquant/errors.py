"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes or granularities are incompatible."""


class DataFormatError(ValueError):
    """A serialized tensor or plan document is malformed."""


class AccumulatorOverflowError(OverflowError):
    """An integer accumulator exceeded its declared bit width."""

    def __init__(self, bits, worst):
        self.bits = bits
        self.worst = worst
        super().__init__(
            f"integer accumulator exceeded {bits}-bit range (worst value {worst})"
        )
