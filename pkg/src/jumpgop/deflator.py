"""The unique density candidate and expectations of the deflator.

A measure change with diffusive kernel ``phi`` and jump multiplier ``psi``
turns discounted prices into local martingales only if the drift correction
solves a ``d x d`` linear system; its unique solution reproduces the inverse
of the discounted GOP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import IllConditioned
from .gop import CONSTRAINED, solve_gop
from .market import COND_LIMIT, MarketSpec
from .paths import SimulatedPath, Strategy, ValuePath

EQUIVALENT = "EQUIVALENT"
ABSOLUTELY_CONTINUOUS_ONLY = "ABSOLUTELY_CONTINUOUS_ONLY"
NOT_EQUIVALENT = "NOT_EQUIVALENT"


@dataclass(frozen=True)
class DeflatorSolution:
    phi: np.ndarray       # (K, m)
    psi: np.ndarray       # (K, d - m) jump multipliers of the density
    residual: np.ndarray  # (K,) max-abs residual of the linear system
    flags: tuple[str, ...]

    @property
    def equivalent(self) -> bool:
        return all(f == EQUIVALENT for f in self.flags)

    def to_dict(self) -> dict[str, Any]:
        return {
            "pieces": [
                {"phi": self.phi[p].tolist(), "psi": self.psi[p].tolist(),
                 "residual": float(self.residual[p]), "equivalence": self.flags[p]}
                for p in range(self.phi.shape[0])
            ],
            "equivalent": self.equivalent,
        }


def _flag(psi: np.ndarray) -> str:
    if np.all(psi > 0):
        return EQUIVALENT
    if np.all(psi >= 0):
        return ABSOLUTELY_CONTINUOUS_ONLY
    return NOT_EQUIVALENT


def deflator_system(spec: MarketSpec, piece: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrix and right-hand side for the unknowns ``(phi, psi)`` on one piece."""
    m = spec.m
    b = spec.b[piece]
    sl = spec.sqrt_lam[piece]
    A = b.copy()
    A[:, m:] *= sl
    rhs = -b @ spec.theta[piece] + b[:, m:] @ sl
    return A, rhs


def solve_unique_deflator(spec: MarketSpec, piece: int | None = None) -> DeflatorSolution:
    """Generic linear solve of the drift-cancellation system on one piece (or all pieces)."""
    pieces = range(spec.n_pieces) if piece is None else [piece]
    phis, psis, res, flags = [], [], [], []
    for p in pieces:
        A, rhs = deflator_system(spec, p)
        cond = np.linalg.cond(spec.b[p])
        if not cond <= COND_LIMIT:
            raise IllConditioned(p, cond)
        x = np.linalg.solve(A, rhs)
        phis.append(x[:spec.m])
        psis.append(x[spec.m:])
        res.append(float(np.max(np.abs(A @ x - rhs))) if x.size else 0.0)
        flags.append(_flag(x[spec.m:]))
    return DeflatorSolution(np.array(phis).reshape(len(phis), spec.m),
                            np.array(psis).reshape(len(psis), spec.n_jumps),
                            np.array(res), tuple(flags))


def closed_form_deflator(spec: MarketSpec) -> DeflatorSolution:
    """``phi = -theta`` on Wiener sources, ``psi = 1 - theta / sqrt(lambda)`` on jump sources."""
    m = spec.m
    phi = -spec.theta[:, :m]
    psi = 1.0 - spec.theta[:, m:] / spec.sqrt_lam
    flags = tuple(_flag(psi[p]) for p in range(spec.n_pieces))
    return DeflatorSolution(phi, psi, np.zeros(spec.n_pieces), flags)


def radon_nikodym_path(solution: DeflatorSolution, path: SimulatedPath, spec: MarketSpec) -> ValuePath:
    """Density process for the kernel ``(phi, psi)`` evaluated on a path.

    Returned in linear space; a non-positive multiplier makes the density hit or
    cross zero, in which case ``log_values`` is NaN from that event on.
    """
    m = spec.m
    phi, psi = solution.phi, solution.psi
    pieces = spec.piece_index(path.times[:-1])
    dt = np.diff(path.times)
    rate = -0.5 * np.sum(phi ** 2, axis=1) + np.sum((1.0 - psi) * spec.lam, axis=1)
    cont = rate[pieces] * dt
    if m:
        cont = cont + np.einsum("ek,ek->e", path.dW, phi[pieces])
    mult = np.ones(path.times.size)
    e = np.nonzero(path.kinds >= 0)[0]
    if e.size:
        mult[e] = psi[pieces[e - 1], path.kinds[e]]
    log_cont = np.zeros(path.times.size)
    np.cumsum(cont, out=log_cont[1:])
    prod = np.cumprod(mult)
    values = np.exp(log_cont) * prod
    left = values.copy()
    left[1:] = np.exp(log_cont[1:]) * prod[:-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        logv = np.where(values > 0, np.log(np.abs(values)), np.nan)
        logl = np.where(left > 0, np.log(np.abs(left)), np.nan)
    return ValuePath(path.times, path.kinds, values, left, logv, logl, True, bool(np.any(values <= 0)))


# -- expectations ------------------------------------------------------------------

@dataclass(frozen=True)
class AnalyticExpectation:
    value: float
    regime: str
    integrated_drift: float

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "regime": self.regime, "integrated_drift": self.integrated_drift}


def deflator_drift(theta_jump: float, lam: float, cap: float) -> float:
    """Decay rate of the deflator's expectation when the jump volatility sits at ``cap``."""
    sl = math.sqrt(lam)
    return cap * (theta_jump - sl) + cap * lam / (sl + cap)


def _integrated_drift(spec: MarketSpec, T: float, rates: np.ndarray) -> float:
    durations = np.clip(np.minimum(spec.breakpoints[1:], T) - spec.breakpoints[:-1], 0.0, None)
    return float(np.sum(rates * durations))


def analytic_deflator_expectation(spec: MarketSpec, T: float | None = None) -> AnalyticExpectation:
    """``E[Zhat_T]``: one where the GOP is unconstrained, ``exp(-int D)`` over pieces where the cap binds."""
    T = spec.horizon if T is None else float(T)
    sol = solve_gop(spec).require()
    rates = np.zeros(spec.n_pieces)
    for p, regime in enumerate(sol.regimes):
        if regime == CONSTRAINED:
            rates[p] = deflator_drift(float(spec.theta[p, 1]), float(spec.lam[p, 0]), spec.constraint_cap)
    integ = _integrated_drift(spec, T, rates)
    regime = "strict_supermartingale" if integ > 0 else "martingale"
    return AnalyticExpectation(math.exp(-integ), regime, integ)


def benchmarked_growth_rates(spec: MarketSpec, strategy: Strategy) -> np.ndarray:
    """Per-piece exponential rate of ``E[S^delta / S^gop]``.

    Derived from the exponential-product form of both portfolios: with
    deterministic coefficients the benchmarked value is a Doleans-Dade
    exponential times ``exp(int rate)``.
    """
    sol = solve_gop(spec).require()
    m = spec.m
    c = strategy.volatilities(spec)
    cs = Strategy(sol.pi_star).volatilities(spec)
    th = spec.theta
    sl = spec.sqrt_lam
    diff_part = np.sum((c[:, :m] - cs[:, :m]) * th[:, :m], axis=1) - np.sum(cs[:, :m] * (c[:, :m] - cs[:, :m]), axis=1)
    ratio = (1.0 + c[:, m:] / sl) / (1.0 + cs[:, m:] / sl)
    jump_part = np.sum((c[:, m:] - cs[:, m:]) * (th[:, m:] - sl) + spec.lam * (ratio - 1.0), axis=1)
    return diff_part + jump_part


def analytic_benchmarked_expectation(spec: MarketSpec, strategy: Strategy, T: float | None = None) -> float:
    """``E[S^delta_T / S^gop_T]`` with the GOP started at one."""
    T = spec.horizon if T is None else float(T)
    rates = benchmarked_growth_rates(spec, strategy)
    return strategy.initial_wealth * math.exp(_integrated_drift(spec, T, rates))
