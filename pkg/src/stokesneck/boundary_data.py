"""Boundary-data classes on the outer wall and their zero-flux extension."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

VARIANTS = ("Phi1", "Phi2", "Phi3", "Phi4", "Custom")


class BoundaryDataError(ValueError):
    pass


@dataclass(frozen=True)
class BoundaryData:
    """One of the locally constant / locally polynomial wall data classes.

    On the neck arc of the wall (``|x1| <= 2R``) the trace equals

    - ``Phi1``: (1, 0)
    - ``Phi2``: (0, 1)
    - ``Phi3``: (x1**l, 0)
    - ``Phi4``: (0, x1**l)

    Away from the neck the class polynomial is tapered to zero by a C^3
    cutoff and a fixed normal bump on the far side of the wall removes the
    net flux. ``Custom`` wraps a user trace ``f(points) -> (n, 2)`` and
    receives the same flux correction.
    """

    variant: str
    l: Optional[int] = None
    custom: Optional[Callable] = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise BoundaryDataError(f"unknown boundary-data variant {self.variant!r}")
        if self.variant in ("Phi3", "Phi4"):
            if self.l is None or int(self.l) != self.l or self.l < 1:
                raise BoundaryDataError(f"{self.variant} needs an integer exponent l >= 1")
        elif self.variant == "Custom":
            if self.custom is None:
                raise BoundaryDataError("Custom boundary data needs a trace callable")
        elif self.l is not None:
            raise BoundaryDataError(f"{self.variant} takes no exponent")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        name = d.get("class", d.get("variant"))
        l = d.get("l")
        return cls(str(name), None if l is None else int(l))

    def to_dict(self):
        out = {"class": self.variant}
        if self.l is not None:
            out["l"] = int(self.l)
        return out

    @property
    def label(self):
        return self.variant if self.l is None else f"{self.variant}(l={self.l})"

    def local_value(self, p):
        """Class polynomial evaluated at points ``p``; defined everywhere."""
        p = np.asarray(p, dtype=float)
        x1 = p[..., 0]
        one, zero = np.ones_like(x1), np.zeros_like(x1)
        if self.variant == "Phi1":
            return np.stack([one, zero], axis=-1)
        if self.variant == "Phi2":
            return np.stack([zero, one], axis=-1)
        if self.variant == "Phi3":
            return np.stack([x1**self.l, zero], axis=-1)
        if self.variant == "Phi4":
            return np.stack([zero, x1**self.l], axis=-1)
        return np.asarray(self.custom(p), dtype=float)

    def _raw(self, geom, p):
        if self.variant == "Custom":
            return self.local_value(p)
        return geom.wall_cutoff(p)[..., None] * self.local_value(p)

    def patch_coefficient(self, geom):
        """Multiplier of the flux patch that cancels the net flux."""
        if self.variant == "Custom":
            return _patch_coefficient.__wrapped__(self, geom)
        return _patch_coefficient(self, geom)

    def trace(self, geom, p):
        """Global trace on (points near) the outer wall."""
        beta = self.patch_coefficient(geom)
        return self._raw(geom, p) + beta * geom.flux_patch(p)

    def net_flux(self, geom, n_panels=1024, order=16):
        """Net flux of the extended trace through the exact wall curve."""
        return wall_flux(geom, lambda pts: self.trace(geom, pts), n_panels, order)


def wall_flux(geom, fn, n_panels=1024, order=16):
    curve = geom.outer_curve
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-np.pi, np.pi, n_panels + 1)
    a, b = edges[:-1, None], edges[1:, None]
    th = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
    wt = (0.5 * (b - a) * w).ravel()
    pts = curve.point(th)
    t = curve.tangent(th)
    # n |X'| = (t_y, -t_x)
    nn = np.stack([t[:, 1], -t[:, 0]], axis=-1)
    return float(np.sum(wt * np.sum(fn(pts) * nn, axis=-1)))


@lru_cache(maxsize=256)
def _patch_coefficient(bc, geom):
    f_raw = wall_flux(geom, lambda pts: bc._raw(geom, pts))
    f_patch = wall_flux(geom, geom.flux_patch)
    return -f_raw / f_patch
