"""Reference distributions on compact convex supports."""

from dataclasses import dataclass

import numpy as np

KINDS = ("cube", "ball", "spherical")

_ALIASES = {
    "cube": "cube",
    "unit-cube": "cube",
    "ball": "ball",
    "unit-ball": "ball",
    "spherical": "spherical",
    "spherical-uniform": "spherical",
}


@dataclass(frozen=True)
class ReferenceMeasure:
    """Uniform law on ``[0, 1]^d``, uniform law on the unit ball, or the
    spherical uniform law (radius uniform on ``[0, 1]`` times a uniform
    direction).  The last two share the unit ball as support.

    Parameters
    ----------
    kind : str
        ``"cube"``, ``"ball"`` or ``"spherical"`` (``"unit-cube"``,
        ``"unit-ball"`` and ``"spherical-uniform"`` are accepted too).
    d : int
        Dimension, at least 1.
    """

    kind: str = "cube"
    d: int = 2

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise ValueError(f"unknown reference kind {self.kind!r}")
        d = int(self.d)
        if d < 1 or d != self.d:
            raise ValueError(f"dimension must be a positive integer, got {self.d!r}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "d", d)

    @property
    def is_cube(self):
        return self.kind == "cube"

    def sample(self, count, rng):
        """Draw ``count`` points; ``rng`` is a seed or ``numpy.random.Generator``."""
        count = int(count)
        if count < 1:
            raise ValueError("count must be at least 1")
        rng = np.random.default_rng(rng)
        if self.kind == "cube":
            return rng.random((count, self.d))
        direction = rng.standard_normal((count, self.d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.random(count)
        if self.kind == "ball":
            radius = radius ** (1.0 / self.d)
        return direction * radius[:, None]

    def contains(self, point):
        point = np.asarray(point, dtype=float)
        if point.shape[-1] != self.d:
            raise ValueError(f"expected points of dimension {self.d}, got {point.shape[-1]}")
        if self.kind == "cube":
            return np.all((point >= 0.0) & (point <= 1.0), axis=-1)
        return np.sum(point * point, axis=-1) <= 1.0

    def support_halfspaces(self):
        """Halfspaces ``{u : a . u + b >= 0}`` as an ``(a, b)`` list, or None.

        Only the cube has a polyhedral support; ``None`` marks the others.
        """
        if self.kind != "cube":
            return None
        out = []
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = 1.0
            out.append((e, 0.0))
            out.append((-e, 1.0))
        return out

    def diameter(self):
        return float(np.sqrt(self.d)) if self.kind == "cube" else 2.0

    def to_dict(self):
        return {"kind": self.kind, "d": self.d}

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], data["d"])
