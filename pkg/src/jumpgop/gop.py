"""Growth rates and the growth optimal portfolio, with and without a jump-volatility cap.

Everything here is expressed in portfolio volatilities ``c = b^T pi``: the growth
rate splits into one concave summand per source, so the optimum is found
component by component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import mpmath
import numpy as np

from .errors import IllConditioned, InadmissibleVolatility, NoGop, UnsupportedConstraint
from .market import COND_LIMIT, MarketSpec, cap_binds

UNCONSTRAINED = "unconstrained"
CONSTRAINED = "constrained"
NONEXISTENT = "nonexistent"


@dataclass(frozen=True)
class GrowthRateResult:
    g: float
    base: float
    diffusive: float
    jump: float


def _split(theta: np.ndarray, lam: np.ndarray) -> int:
    m = theta.size - lam.size
    if m < 0:
        raise ValueError("more intensities than risk sources")
    return m


def jump_summand(c: float, theta: float, lam: float) -> float:
    """Growth contribution of one jump source at jump volatility ``c``."""
    sl = math.sqrt(lam)
    return c * (theta - sl) + lam * math.log1p(c / sl)


def growth_rate(c: Sequence[float], theta: Sequence[float], lam: Sequence[float], r: float) -> GrowthRateResult:
    c = np.asarray(c, dtype=float)
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    m = _split(theta, lam)
    if c.shape != theta.shape:
        raise ValueError(f"volatility vector has shape {c.shape}, expected {theta.shape}")
    sl = np.sqrt(lam)
    cj = c[m:]
    bad = np.nonzero(cj <= -sl)[0]
    if bad.size:
        k = int(bad[0])
        raise InadmissibleVolatility(f"jump volatility c[{m + k}]={cj[k]} <= -sqrt(lambda)={-sl[k]}")
    diffusive = float(np.sum(c[:m] * theta[:m] - 0.5 * c[:m] ** 2))
    jump = float(np.sum(cj * (theta[m:] - sl) + lam * np.log1p(cj / sl)))
    return GrowthRateResult(g=r + diffusive + jump, base=float(r), diffusive=diffusive, jump=jump)


def growth_rates(c: np.ndarray, theta: Sequence[float], lam: Sequence[float], r: float) -> np.ndarray:
    """Growth rates for a stack of volatility vectors ``c`` of shape ``(n, d)``."""
    c = np.atleast_2d(np.asarray(c, dtype=float))
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    m = _split(theta, lam)
    sl = np.sqrt(lam)
    cj = c[:, m:]
    if np.any(cj <= -sl):
        raise InadmissibleVolatility("some jump volatility is <= -sqrt(lambda)")
    cd = c[:, :m]
    return r + (cd @ theta[:m] - 0.5 * np.sum(cd ** 2, axis=1)) \
        + np.sum(cj * (theta[m:] - sl) + lam * np.log1p(cj / sl), axis=1)


def optimal_volatilities(theta: Sequence[float], lam: Sequence[float]) -> np.ndarray:
    """Unconstrained maximiser of the growth rate over portfolio volatilities."""
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    m = _split(theta, lam)
    sl = np.sqrt(lam)
    for i in range(lam.size):
        if theta[m + i] >= sl[i]:
            raise NoGop(m + i, theta=float(theta[m + i]), sqrt_lambda=float(sl[i]))
    c = theta.copy()
    c[m:] = theta[m:] / (1.0 - theta[m:] / sl)
    return c


def gop_fractions(c_star: Sequence[float], b: np.ndarray, piece: int = 0) -> np.ndarray:
    """Risky fractions ``pi`` with ``pi^T b = c^T``; the cash fraction is ``1 - sum(pi)``."""
    b = np.asarray(b, dtype=float)
    cond = np.linalg.cond(b)
    if not cond <= COND_LIMIT:
        raise IllConditioned(piece, cond)
    return np.linalg.solve(b.T, np.asarray(c_star, dtype=float))


def optimal_growth_rate(theta: Sequence[float], lam: Sequence[float], r: float) -> float:
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    m = _split(theta, lam)
    sl = np.sqrt(lam)
    for i in range(lam.size):
        if theta[m + i] >= sl[i]:
            raise NoGop(m + i, theta=float(theta[m + i]), sqrt_lambda=float(sl[i]))
    tj = theta[m:]
    jump = lam * (np.log1p(tj / (sl - tj)) - tj / sl)
    return float(r + 0.5 * np.sum(theta[:m] ** 2) + np.sum(jump))


def constrained_optimal_volatilities(theta: Sequence[float], lam: float | Sequence[float],
                                     cap: float) -> tuple[np.ndarray, str]:
    """Optimal volatilities when the jump volatility may not exceed ``cap`` (two assets, one Wiener source)."""
    theta = np.asarray(theta, dtype=float)
    lam_v = float(np.ravel(lam)[0])
    if theta.shape != (2,) or np.size(lam) != 1:
        raise UnsupportedConstraint("the jump-volatility cap is defined for d=2, m=1 only")
    if not cap > 0:
        raise ValueError(f"cap must be positive, got {cap}")
    sl = math.sqrt(lam_v)
    if cap_binds(float(theta[1]), sl, cap):
        return np.array([theta[0], cap]), CONSTRAINED
    return optimal_volatilities(theta, [lam_v]), UNCONSTRAINED


# -- per-piece solution ----------------------------------------------------------

@dataclass(frozen=True)
class GopSolution:
    """Per-piece optimal volatilities, fractions, growth rates and regime tags.

    Pieces tagged ``nonexistent`` carry NaN in ``c_star``, ``pi_star`` and ``g_star``.
    """

    c_star: np.ndarray
    pi_star: np.ndarray
    g_star: np.ndarray
    regimes: tuple[str, ...]
    failures: tuple[NoGop | None, ...] = ()

    @property
    def exists(self) -> bool:
        return NONEXISTENT not in self.regimes

    def require(self) -> "GopSolution":
        if not self.exists:
            p = self.regimes.index(NONEXISTENT)
            exc = self.failures[p] if self.failures else None
            if exc is None:
                raise NoGop(-1, piece=p)
            raise NoGop(exc.column, piece=p, theta=exc.theta, sqrt_lambda=exc.sqrt_lambda)
        return self

    def to_dict(self) -> dict[str, Any]:
        def clean(x: np.ndarray) -> list:
            return [[None if math.isnan(v) else float(v) for v in row] for row in np.atleast_2d(x)]

        return {
            "regimes": list(self.regimes),
            "c_star": clean(self.c_star),
            "pi_star": clean(self.pi_star),
            "cash_fraction": [None if math.isnan(v) else 1.0 - float(v) for v in self.pi_star.sum(axis=1)],
            "g_star": [None if math.isnan(v) else float(v) for v in self.g_star],
        }


def solve_gop(spec: MarketSpec) -> GopSolution:
    K, d = spec.n_pieces, spec.d
    c_all = np.full((K, d), np.nan)
    pi_all = np.full((K, d), np.nan)
    g_all = np.full(K, np.nan)
    regimes = []
    failures: list[NoGop | None] = []
    theta = spec.theta
    for p in range(K):
        lam = spec.lam[p]
        if spec.constraint_cap is not None:
            c, regime = constrained_optimal_volatilities(theta[p], lam, spec.constraint_cap)
        else:
            try:
                c, regime = optimal_volatilities(theta[p], lam), UNCONSTRAINED
            except NoGop as exc:
                regimes.append(NONEXISTENT)
                failures.append(exc)
                continue
        c_all[p] = c
        pi_all[p] = gop_fractions(c, spec.b[p], p)
        g_all[p] = growth_rate(c, theta[p], lam, spec.r[p]).g
        regimes.append(regime)
        failures.append(None)
    for arr in (c_all, pi_all, g_all):
        arr.setflags(write=False)
    return GopSolution(c_all, pi_all, g_all, tuple(regimes), tuple(failures))


# -- numerical oracle ------------------------------------------------------------

def _golden_max(f, lo, hi, tol):
    invphi = (mpmath.sqrt(5) - 1) / 2
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
    return (a + b) / 2


def argmax_jump_summand(theta: float, lam: float, cap: float | None = None,
                        upper: float | None = None, tol: float = 1e-12) -> float:
    """Golden-section maximiser of one jump summand of the growth rate.

    Works in extended precision so that the flat top of the objective does not
    limit the accuracy of the location. Independent of the closed-form optimum
    except for sizing the default search bracket.
    """
    sl = math.sqrt(lam)
    if theta == 0.0 and cap is None:
        return 0.0
    if upper is None:
        scale = abs(theta / (1.0 - theta / sl)) if theta < sl else 0.0
        upper = max(10.0 * sl, 10.0 * scale)
    if cap is not None:
        upper = min(upper, cap)
    with mpmath.workprec(160):
        msl = mpmath.sqrt(mpmath.mpf(lam))
        mth = mpmath.mpf(theta)
        mlam = mpmath.mpf(lam)

        def f(c):
            return c * (mth - msl) + mlam * mpmath.log1p(c / msl)

        lo = -msl * (1 - mpmath.mpf("1e-9"))
        x = _golden_max(f, lo, mpmath.mpf(upper), mpmath.mpf(tol))
        return float(x)
