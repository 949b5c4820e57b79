"""Synthetic two-client loss surfaces over [-1,1]^2.

Each client surface is a unit plateau with Gaussian wells carved out:

    loss(t) = 1 - sum_i depth_i * exp(-|t - center_i|^2 / (2 width_i^2))

The default pair shares a shallow well at (-0.5, 0.5) while their deep
wells sit apart, so the pointwise-average surface keeps its lowest
minima at the two individual deep wells: averaging sews the client
optima together instead of surfacing the shared one. ``grid_argmins``
makes that checkable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_WIDTH = 0.15
DEFAULT_RESOLUTION = 201
SHARED_LOCAL_MIN = (-0.5, 0.5)
CLIENT_A_GLOBAL_MIN = (0.5, -0.5)
CLIENT_B_GLOBAL_MIN = (-0.5, -0.5)
DEEP_WELL_DEPTH = 1.0
# Must stay below DEEP_WELL_DEPTH / 2: the averaged surface then keeps
# its lowest minima at the two individual deep wells rather than at the
# shared one.
SHARED_WELL_DEPTH = 0.4


@dataclass(frozen=True)
class Well:
    center: tuple[float, float]
    depth: float
    width: float = DEFAULT_WIDTH

    def __post_init__(self):
        if self.depth <= 0 or self.width <= 0:
            raise ValueError("well depth and width must be positive")


@dataclass(frozen=True)
class Surface:
    """Vectorized evaluator theta -> loss."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, theta1, theta2):
        out = self.fn(np.asarray(theta1, dtype=np.float64),
                      np.asarray(theta2, dtype=np.float64))
        return out if out.ndim else float(out)


def toy_surface(wells: Sequence[Well]) -> Surface:
    wells = tuple(wells)

    def fn(t1, t2):
        total = np.ones(np.broadcast(t1, t2).shape)
        for w in wells:
            d2 = (t1 - w.center[0]) ** 2 + (t2 - w.center[1]) ** 2
            total = total - w.depth * np.exp(-d2 / (2.0 * w.width ** 2))
        return total

    return Surface(fn)


def client_a_surface() -> Surface:
    return toy_surface([Well(CLIENT_A_GLOBAL_MIN, DEEP_WELL_DEPTH),
                        Well(SHARED_LOCAL_MIN, SHARED_WELL_DEPTH)])


def client_b_surface() -> Surface:
    return toy_surface([Well(CLIENT_B_GLOBAL_MIN, DEEP_WELL_DEPTH),
                        Well(SHARED_LOCAL_MIN, SHARED_WELL_DEPTH)])


def average_surface(a: Surface, b: Surface) -> Surface:
    return Surface(lambda t1, t2: 0.5 * (a.fn(t1, t2) + b.fn(t1, t2)))


@dataclass(frozen=True)
class GridArgmin:
    location: tuple[float, float]
    value: float
    resolution: int


def surface_grid(s: Surface, resolution: int = DEFAULT_RESOLUTION):
    """(T1, T2, V) arrays over the [-1,1]^2 grid."""
    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    axis = np.linspace(-1.0, 1.0, resolution)
    t1, t2 = np.meshgrid(axis, axis, indexing="ij")
    return t1, t2, s(t1, t2)


def grid_argmins(s: Surface, resolution: int = DEFAULT_RESOLUTION,
                 count: int | None = None) -> list[GridArgmin]:
    """Interior grid points strictly below all 8 neighbors, best first."""
    t1, t2, v = surface_grid(s, resolution)
    center = v[1:-1, 1:-1]
    strict = np.ones_like(center, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            strict &= center < v[1 + di:resolution - 1 + di, 1 + dj:resolution - 1 + dj]
    ii, jj = np.nonzero(strict)
    minima = [
        GridArgmin((float(t1[i + 1, j + 1]), float(t2[i + 1, j + 1])),
                   float(v[i + 1, j + 1]), resolution)
        for i, j in zip(ii, jj)
    ]
    minima.sort(key=lambda m: m.value)
    return minima if count is None else minima[:count]


def write_surface_csv(s: Surface, path, resolution: int = DEFAULT_RESOLUTION) -> None:
    """Grid dump, one `theta1,theta2,value` row per grid point."""
    t1, t2, v = surface_grid(s, resolution)
    with open(path, "w") as f:
        f.write("theta1,theta2,value\n")
        for a, b, c in zip(t1.ravel(), t2.ravel(), v.ravel()):
            f.write(f"{float(a)!r},{float(b)!r},{float(c)!r}\n")
