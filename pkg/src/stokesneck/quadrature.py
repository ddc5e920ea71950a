"""Quadrature rules on the reference triangle and on segments."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def triangle_rule(degree=6):
    """Barycentric points ``(n, 3)`` and weights summing to one.

    ``degree=6`` is the 12-point Dunavant rule, exact for polynomials of
    total degree 6; ``degree=2`` is the 3-point edge-midpoint rule.
    """
    if degree <= 2:
        b = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
        return b, np.full(3, 1.0 / 3.0)
    if degree > 6:
        raise ValueError("triangle rules available up to degree 6")
    groups = [
        (0.116786275726379, (0.501426509658179, 0.249286745170910, 0.249286745170910)),
        (0.050844906370207, (0.873821971016996, 0.063089014491502, 0.063089014491502)),
        (0.082851075618374, (0.053145049844817, 0.310352451033784, 0.636502499121399)),
    ]
    pts, wts = [], []
    for w, (a, b, c) in groups:
        if b == c:
            perms = [(a, b, c), (b, a, c), (b, c, a)]
        else:
            perms = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
        for p in perms:
            pts.append(p)
            wts.append(w)
    pts = np.array(pts)
    wts = np.array(wts)
    return pts, wts / wts.sum()


@lru_cache(maxsize=None)
def segment_rule(order=5):
    """Gauss-Legendre nodes on [0, 1] and weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w
