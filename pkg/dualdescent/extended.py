"""Extended-real scalars for values that may be +inf outside a domain."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ExtendedReal:
    """A finite real or +inf, tagged explicitly instead of using a float sentinel."""

    value: float = 0.0
    infinite: bool = False

    @classmethod
    def finite(cls, value: float) -> "ExtendedReal":
        return cls(float(value), False)

    @classmethod
    def inf(cls) -> "ExtendedReal":
        return cls(0.0, True)

    @property
    def is_finite(self) -> bool:
        return not self.infinite

    def __add__(self, other: object) -> "ExtendedReal":
        if isinstance(other, ExtendedReal):
            if self.infinite or other.infinite:
                return ExtendedReal.inf()
            return ExtendedReal.finite(self.value + other.value)
        if isinstance(other, (int, float)):
            if self.infinite:
                return self
            return ExtendedReal.finite(self.value + float(other))
        return NotImplemented

    __radd__ = __add__

    def __float__(self) -> float:
        return float("inf") if self.infinite else self.value

    def __le__(self, other: object) -> bool:
        return float(self) <= float(other)  # type: ignore[arg-type]

    def __lt__(self, other: object) -> bool:
        return float(self) < float(other)  # type: ignore[arg-type]

    def __repr__(self) -> str:
        return "ExtendedReal(+inf)" if self.infinite else f"ExtendedReal({self.value!r})"
