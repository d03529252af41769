"""Axis-aligned box arithmetic shared by the whole pipeline.

Coordinates are continuous reals; areas are exact (x2-x1)*(y2-y1) with no
pixel "+1" convention.  Zero-area boxes are legal inputs everywhere and have
IOU 0 against anything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True)
class Box:
    """Box given by its upper-left (x1, y1) and lower-right (x2, y2) corners."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        object.__setattr__(self, "x1", float(self.x1))
        object.__setattr__(self, "y1", float(self.y1))
        object.__setattr__(self, "x2", float(self.x2))
        object.__setattr__(self, "y2", float(self.y2))
        if not (self.x1 <= self.x2 and self.y1 <= self.y2):
            raise ValueError(
                f"invalid box corners ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "require x1 <= x2 and y1 <= y2"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def translated(self, tx: float, ty: float) -> "Box":
        return Box(self.x1 + tx, self.y1 + ty, self.x2 + tx, self.y2 + ty)

    def scaled(self, factor: float) -> "Box":
        """Scale about the origin by a positive factor."""
        if factor <= 0:
            raise ValueError(f"scale factor must be positive, got {factor}")
        return Box(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)

    def to_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_sequence(cls, values) -> "Box":
        vals = list(values)
        if len(vals) != 4:
            raise ValueError(f"box needs exactly 4 coordinates, got {len(vals)}")
        return cls(*vals)


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area; 0 when the union has zero area."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def union_box(boxes: Iterable[Box]) -> Box:
    """Smallest box containing every input box.  Empty input is an error."""
    it = list(boxes)
    if not it:
        raise ValueError("union_box requires at least one box")
    return Box(
        min(b.x1 for b in it),
        min(b.y1 for b in it),
        max(b.x2 for b in it),
        max(b.y2 for b in it),
    )
