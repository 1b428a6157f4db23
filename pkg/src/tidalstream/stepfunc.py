"""Left-continuous step functions on radius."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Piecewise-constant, left-continuous function of radius.

    The value on ``(knots[k-1], knots[k]]`` is ``values[k]``; below the first
    knot the function equals ``values[0]`` and beyond the last knot it equals
    ``values[-1]``.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        values = np.array(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size == 0:
            raise ValueError("knots and values must be equal-length, non-empty 1-D arrays")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly ascending")
        knots.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_points(cls, r, values):
        """Collapse per-observation values on sorted radii to one value per distinct radius.

        Tied radii keep the value of the last tied observation.
        """
        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        last = np.r_[r[1:] != r[:-1], True]
        return cls(r[last], values[last])

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        idx = np.searchsorted(self.knots, r, side="left")
        return self.values[np.minimum(idx, self.knots.size - 1)]

    def __len__(self):
        return self.knots.size

    def is_nondecreasing(self, atol=0.0):
        return bool(np.all(np.diff(self.values) >= -atol))

    def with_values(self, values):
        return StepFunction(self.knots, values)

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["knot", "value"])
        for k, v in zip(self.knots, self.values):
            writer.writerow([repr(float(k)), repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source):
        """Parse CSV text, or a path when ``source`` has no newline."""
        if "\n" not in source:
            with open(source, encoding="utf-8") as fh:
                source = fh.read()
        rows = list(csv.reader(io.StringIO(source)))
        if not rows or rows[0] != ["knot", "value"]:
            raise ValueError("expected header 'knot,value'")
        body = rows[1:]
        return cls([float(a) for a, _ in body], [float(b) for _, b in body])

    def to_json(self):
        return json.dumps([{"r": float(k), "value": float(v)}
                           for k, v in zip(self.knots, self.values)])

    @classmethod
    def from_json(cls, text):
        items = json.loads(text)
        return cls([d["r"] for d in items], [d["value"] for d in items])

    def __eq__(self, other):
        if not isinstance(other, StepFunction):
            return NotImplemented
        return (np.array_equal(self.knots, other.knots)
                and np.array_equal(self.values, other.values))

    __hash__ = None
