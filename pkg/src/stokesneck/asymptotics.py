"""Leading-order asymptotics of the interaction matrix, the boundary-data
functionals and the free constants as the gap ``eps`` closes.

Two coefficient families are provided:

- ``a_leading`` / ``detA_leading`` / ``q_leading`` carry the published
  closed forms, including the extra ``kappa (kappa1+kappa)^2 / (3 kappa0^3)``
  term in ``a11`` and the ``(3 + kappa/kappa0)/3`` factor in ``a33``/``a13``.
- ``lubrication_leading`` integrates the dominant strain component
  ``d v^(1) / d x2`` over the gap exactly (``int k^2 dk = 1/12``) and then
  takes the leading term of each ``gap_integral``. For ``kappa > 0`` this
  gives the smaller values ``mu pi / sqrt(kappa0) (1 + (kappa1+kappa)^2 /
  kappa0^2)``, ``mu pi / kappa0^{5/2}`` and ``mu pi (kappa1+kappa) /
  kappa0^{5/2}``; the two families agree at ``kappa = 0``.

All exact coefficients are sympy expressions in rationalised parameters.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import mpmath
import numpy as np
import sympy as sp

from .boundary_data import BoundaryData

__all__ = [
    "LeadingTerm",
    "a_leading",
    "lubrication_leading",
    "detA_leading",
    "q_leading",
    "c_leading",
    "gap_integral",
    "gap_integral_leading",
]


@dataclass(frozen=True)
class LeadingTerm:
    """``coefficient * eps**power`` or, if ``bound_only``, the envelope
    ``C * eps**power * |ln eps|**log_power`` with no coefficient claim.

    For free constants ``center`` holds the limit value and ``power`` the
    exponent of the deviation envelope ``|C - center| <= C' eps**power``.
    """

    coefficient: Optional[float]
    power: Fraction
    bound_only: bool = False
    log_power: int = 0
    exact: Optional[sp.Expr] = None
    center: Optional[float] = None
    degenerate: bool = False

    def value(self, eps):
        if self.bound_only or self.coefficient is None:
            raise ValueError("bound-only term carries no coefficient")
        return self.coefficient * eps ** float(self.power)

    def envelope(self, eps):
        """``eps**power * |ln eps|**log_power`` (the unit envelope)."""
        return eps ** float(self.power) * abs(np.log(eps)) ** self.log_power

    def normalized(self, value, eps):
        """``(value - center) / envelope`` for constants, ``value / envelope`` otherwise."""
        c = self.center or 0.0
        return (value - c) / self.envelope(eps)

    def describe(self):
        if self.center is not None:
            return f"{self.center:g} + O(eps^{self.power})"
        if self.bound_only:
            ln = " |ln eps|" if self.log_power else ""
            return f"<= C eps^{self.power}{ln}"
        return f"{self.coefficient:.10g} eps^{self.power}"

    def to_dict(self):
        return {
            "coefficient": self.coefficient,
            "power": str(self.power),
            "bound_only": self.bound_only,
            "log_power": self.log_power,
            "exact": None if self.exact is None else str(self.exact),
            "center": self.center,
            "degenerate": self.degenerate,
        }


def _rational(x):
    return sp.Rational(repr(float(x)))


def _params(geom):
    kap, kap1, mu = _rational(geom.kappa), _rational(geom.kappa1), _rational(geom.mu)
    return kap, kap1, kap1 - kap, mu


def _term(expr, power, degenerate=False):
    expr = sp.nsimplify(sp.simplify(sp.gammasimp(sp.expand_func(expr))))
    return LeadingTerm(float(expr), Fraction(power), exact=expr, degenerate=degenerate)


def _bound(power, log_power=0):
    return LeadingTerm(None, Fraction(power), bound_only=True, log_power=log_power)


def _check_mode(alpha):
    if alpha not in (1, 2, 3):
        raise ValueError(f"mode index must be 1, 2 or 3, got {alpha}")


_POWERS = {(1, 1): "-1/2", (2, 2): "-3/2", (3, 3): "-1/2", (1, 3): "-1/2", (3, 1): "-1/2"}


def _printed_coefficients(kap, kap1, k0, mu):
    pi = sp.pi
    s = kap1 + kap
    return {
        (1, 1): mu * pi / sp.sqrt(k0) * (1 + s**2 / k0**2 + kap * s**2 / (3 * k0**3)),
        (2, 2): 3 * mu * pi / (2 * k0 ** sp.Rational(3, 2)),
        (3, 3): mu * pi / (3 * k0 ** sp.Rational(5, 2)) * (3 + kap / k0),
        (1, 3): mu * pi * s / (3 * k0 ** sp.Rational(5, 2)) * (3 + kap / k0),
    }


def _lubrication_coefficients(kap, kap1, k0, mu):
    # leading gap integrals: int x^{2m}/delta^q ~ B(m+1/2, q-m-1/2) kappa0^{-m-1/2} eps^{m+1/2-q}
    def lead(m, q):
        return sp.beta(sp.Rational(2 * m + 1, 2), q - sp.Rational(2 * m + 1, 2)) / k0 ** sp.Rational(2 * m + 1, 2)

    s = kap1 + kap
    # d2 v1^(1) = 1/delta + (2 s k/delta) A,  d2 v3^(1) ~ (2k/delta) A,  A = -4x^2/delta + 1/kappa0
    # with int k dk = 0 and int k^2 dk = 1/12 across the gap
    a_sq = 16 * lead(2, 3) - 8 / k0 * lead(1, 2) + lead(0, 1) / k0**2  # int A^2 / delta
    return {
        (1, 1): mu * (lead(0, 1) + 4 * s**2 / 12 * a_sq),
        (2, 2): mu * 36 * 4 / 12 * lead(1, 3),
        (3, 3): mu * 4 / 12 * a_sq,
        (1, 3): mu * 4 * s / 12 * a_sq,
    }


def _matrix_term(coeffs, geom, alpha, beta):
    _check_mode(alpha)
    _check_mode(beta)
    key = (alpha, beta) if (alpha, beta) in coeffs else (beta, alpha)
    if key not in coeffs:
        return _bound(0, log_power=1)
    return _term(coeffs[key], _POWERS[key], degenerate=geom.kappa1 - geom.kappa < 1e-8)


def a_leading(geom, alpha, beta) -> LeadingTerm:
    """Published leading term of ``a_{alpha beta}``; off-diagonal entries that
    couple mode 2 with modes 1 and 3 are bound-only ``C |ln eps|``."""
    return _matrix_term(_printed_coefficients(*_params(geom)), geom, alpha, beta)


def lubrication_leading(geom, alpha, beta) -> LeadingTerm:
    """Leading term of ``a_{alpha beta}`` from the lubrication integral of the
    auxiliary fields (see module docstring)."""
    return _matrix_term(_lubrication_coefficients(*_params(geom)), geom, alpha, beta)


def _det_from(coeffs):
    return coeffs[(2, 2)] * (coeffs[(1, 1)] * coeffs[(3, 3)] - coeffs[(1, 3)] ** 2)


def detA_leading(geom, corrected=False) -> LeadingTerm:
    """Leading term of ``det A`` (power ``-5/2``).

    The published closed form is ``(mu pi)^3 / (2 kappa0^{9/2}) (1 + (2 kappa1
    - kappa)/kappa0)``; ``corrected=True`` composes the lubrication
    coefficients instead. ``degenerate`` flags ``kappa1 -> kappa``.
    """
    kap, kap1, k0, mu = _params(geom)
    degenerate = geom.kappa1 - geom.kappa < 1e-8
    if corrected:
        expr = _det_from(_lubrication_coefficients(kap, kap1, k0, mu))
    else:
        expr = (mu * sp.pi) ** 3 / (2 * k0 ** sp.Rational(9, 2)) * (1 + (2 * kap1 - kap) / k0)
    return _term(expr, "-5/2", degenerate=degenerate)


def detA_composed(geom, corrected=False) -> sp.Expr:
    """``a22 (a11 a33 - a13^2)`` built from the individual leading terms."""
    coeffs = (_lubrication_coefficients if corrected else _printed_coefficients)(*_params(geom))
    return sp.nsimplify(sp.simplify(sp.gammasimp(sp.expand_func(_det_from(coeffs)))))


def _q_phi3(l):
    return [_bound(0), _bound(0, log_power=1 if l == 1 else 0), _bound(0)]


def _q_phi4(l):
    if l == 1:
        return [_bound("-1/2"), _bound("-1/2"), _bound("-1/2")]
    if l == 2:
        return [_bound(0), _bound(0, log_power=1), _bound(0)]
    return [_bound(0), _bound(0), _bound(0)]


def q_leading(geom, bc: BoundaryData, corrected=False) -> list:
    """Leading terms of ``(Q_1, Q_2, Q_3)`` for the given boundary-data class.

    For ``Phi1`` the expansions of ``Q_1`` and ``Q_3`` coincide with those of
    ``a11`` and ``a13``; for ``Phi2`` ``Q_2`` coincides with ``a22``.
    """
    src = lubrication_leading if corrected else a_leading
    if bc.variant == "Phi1":
        return [src(geom, 1, 1), _bound(0, log_power=1), src(geom, 1, 3)]
    if bc.variant == "Phi2":
        return [_bound(0, log_power=1), src(geom, 2, 2), _bound(0, log_power=1)]
    if bc.variant == "Phi3":
        return _q_phi3(bc.l)
    if bc.variant == "Phi4":
        return _q_phi4(bc.l)
    raise NotImplementedError("no asymptotic expansion for custom boundary data")


def blowup_leading(geom) -> LeadingTerm:
    """Leading term of ``Q_1 - (kappa1+kappa) Q_3`` for ``Phi1``: ``mu pi / sqrt(kappa0)``.

    Both coefficient families give this value.
    """
    kap, kap1, k0, mu = _params(geom)
    return _term(mu * sp.pi / sp.sqrt(k0), "-1/2")


def c_leading(geom, bc: BoundaryData) -> list:
    """Limit value and deviation-envelope exponent of ``(C^1, C^2, C^3)``."""
    if bc.variant == "Phi1":
        centers, powers = (1.0, 0.0, 0.0), ("1/2", "3/2", "1/2")
    elif bc.variant == "Phi2":
        centers, powers = (0.0, 1.0, 0.0), ("1/2", "1", "1/2")
    else:
        raise NotImplementedError("free-constant asymptotics are given for Phi1 and Phi2 only")
    return [
        LeadingTerm(None, Fraction(p), bound_only=True, center=c) for c, p in zip(centers, powers)
    ]


# ------------------------------------------------------------ gap integrals
def _gap_table(eps, k0, r, pmax, qmax):
    """``J[p][q] = int_{-r}^{r} x^p / (eps + k0 x^2)^q dx`` for even p, in mpmath."""
    eps, k0, r = mpmath.mpf(eps), mpmath.mpf(k0), mpmath.mpf(r)
    d_r = eps + k0 * r * r
    J = {}
    for q in range(qmax + 1):
        if q == 0:
            J[(0, 0)] = 2 * r
        elif q == 1:
            J[(0, 1)] = 2 / mpmath.sqrt(k0 * eps) * mpmath.atan(r * mpmath.sqrt(k0 / eps))
        else:
            m = q - 1
            # d/dx [x / delta^m] = (1 - 2m)/delta^m + 2 m eps / delta^{m+1}
            J[(0, q)] = (2 * r / d_r**m - (1 - 2 * m) * J[(0, m)]) / (2 * m * eps)
    for p in range(2, pmax + 1, 2):
        J[(p, 0)] = 2 * r ** (p + 1) / (p + 1)
        for q in range(1, qmax + 1):
            # x^p / delta^q = (x^{p-2}/delta^{q-1} - eps x^{p-2}/delta^q) / k0
            J[(p, q)] = (J[(p - 2, q - 1)] - eps * J[(p - 2, q)]) / k0
    return J


def gap_integral(geom, p: int, q: int, r=None) -> float:
    """``int_{-r}^{r} x1^p / delta(x1)^q dx1`` in closed form.

    The arctangent reduction is evaluated in 40-digit arithmetic so the
    ``p``-recurrence loses nothing to cancellation. Odd ``p`` gives zero.
    """
    r = geom.R if r is None else r
    if p < 0 or q < 0 or int(p) != p or int(q) != q:
        raise ValueError("p and q must be non-negative integers")
    if not 0 < r <= geom.R * (1 + 1e-14):
        raise ValueError("integration half-width must lie in (0, R]")
    if p % 2:
        return 0.0
    with mpmath.workdps(40):
        J = _gap_table(geom.eps, geom.kappa0, r, p, q)
        return float(J[(p, q)])


def gap_integral_leading(geom, p: int, q: int) -> LeadingTerm:
    """Leading term of ``gap_integral`` as ``eps -> 0`` for ``2q > p + 1``."""
    if p % 2:
        return LeadingTerm(0.0, Fraction(0), exact=sp.Integer(0))
    if 2 * q <= p + 1:
        raise ValueError("integral stays bounded; no singular leading term")
    k0 = _params(geom)[2]
    a = sp.Rational(p + 1, 2)
    expr = sp.beta(a, q - a) / k0**a
    return _term(expr, Fraction(p + 1, 2) - q)
