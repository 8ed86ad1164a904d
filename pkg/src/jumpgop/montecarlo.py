"""Monte Carlo checks of the martingale / strict-supermartingale dichotomy.

Paths are generated in fixed-size chunks from per-path counter-based streams;
chunking does not depend on the worker count and all reductions run over the
concatenated samples, so results are bit-identical for any ``threads``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .deflator import analytic_benchmarked_expectation, analytic_deflator_expectation
from .errors import InsufficientPaths
from .gop import UNCONSTRAINED, growth_rate, growth_rates, optimal_growth_rate, solve_gop
from .market import MarketSpec
from .paths import EPS_ADMISSIBLE, PathBatch, Strategy, _portfolio_drift, check_admissible, simulate_batch

CONSISTENT_WITH_MARTINGALE = "CONSISTENT_WITH_MARTINGALE"
STRICT_SUPERMARTINGALE = "STRICT_SUPERMARTINGALE"
INCONCLUSIVE = "INCONCLUSIVE"
DOMINATED = "DOMINATED"
NOT_DOMINATED = "NOT_DOMINATED"

FUNCTIONALS = ("Zhat", "benchmarked", "Zhat_Sbar")

Z99 = 2.576
N_SIGMA = 3.0
CHUNK = 4096
HIGH_VARIANCE_MARGIN = 0.05
HIGH_VARIANCE_MIN_PATHS = 1_000_000


@dataclass(frozen=True)
class McReport:
    functional: str
    t: float
    mean: float
    se: float
    ci_low: float
    ci_high: float
    n_paths: int
    seed: int
    antithetic: bool
    verdict: str
    reference: float | None = None
    initial_value: float = 1.0
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def _summary(samples: np.ndarray) -> tuple[float, float]:
    n = samples.size
    # centring on the first sample makes constant samples give an exact mean and zero SE
    dev = samples - samples[0]
    mean = float(samples[0] + np.mean(dev))
    se = float(np.std(dev, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def martingale_verdict(mean: float, se: float, initial: float, reference: float | None, n: int) -> str:
    if n < 2:
        return INCONCLUSIVE
    if mean + N_SIGMA * se < initial:
        return STRICT_SUPERMARTINGALE
    if abs(mean - initial) <= N_SIGMA * se:
        if reference is not None and reference < initial * (1 - 1e-12):
            return INCONCLUSIVE
        return CONSISTENT_WITH_MARTINGALE
    return INCONCLUSIVE


def _report(functional, t, samples, seed, antithetic, initial, reference, flags, verdict=None) -> McReport:
    mean, se = _summary(samples)
    if verdict is None:
        verdict = martingale_verdict(mean, se, initial, reference, samples.size)
    return McReport(functional=functional, t=float(t), mean=mean, se=se, ci_low=mean - Z99 * se,
                    ci_high=mean + Z99 * se, n_paths=int(samples.size), seed=seed, antithetic=antithetic,
                    verdict=verdict, reference=reference, initial_value=float(initial), flags=tuple(flags))


def high_variance_flags(spec: MarketSpec, n_paths: int) -> tuple[str, ...]:
    """Flag GOPs close to the existence boundary, where the deflator has heavy tails."""
    sol = solve_gop(spec).require()
    theta = spec.theta
    for p, regime in enumerate(sol.regimes):
        if regime != UNCONSTRAINED:
            continue
        gap = spec.sqrt_lam[p] - theta[p, spec.m:]
        if np.any(gap < HIGH_VARIANCE_MARGIN * spec.sqrt_lam[p]):
            if n_paths < HIGH_VARIANCE_MIN_PATHS:
                raise InsufficientPaths(
                    f"near-boundary scenario needs at least {HIGH_VARIANCE_MIN_PATHS} paths, got {n_paths}")
            return ("HIGH_VARIANCE",)
    return ()


# -- sampling engine ----------------------------------------------------------------

Evaluator = Callable[[PathBatch], np.ndarray]


def sample(spec: MarketSpec, obs_times: Sequence[float], n_paths: int, seed: int,
           evaluator: Evaluator, antithetic: bool = False, threads: int = 1) -> np.ndarray:
    """Per-path samples ``evaluator(batch)`` stacked in path order.

    With ``antithetic`` each path contributes the average over itself and its
    mirrored Brownian motion.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    bounds = [(s, min(s + CHUNK, n_paths)) for s in range(0, n_paths, CHUNK)]

    def run(bound: tuple[int, int]) -> np.ndarray:
        batch = simulate_batch(spec, seed, bound[0], bound[1], obs_times)
        out = evaluator(batch)
        if antithetic:
            out = 0.5 * (out + evaluator(batch.mirrored()))
        return out

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    return np.concatenate(parts, axis=0)


def _log_value_fn(spec: MarketSpec, strategy: Strategy, discounted: bool = True) -> Evaluator:
    vols = strategy.volatilities(spec)
    drift = _portfolio_drift(spec, strategy, discounted)
    log0 = math.log(strategy.initial_wealth)
    return lambda batch: batch.evaluate(spec, drift, vols, log0)


def _obs_index(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t))
    if times[i] != t:
        raise KeyError(t)
    return i


def functional_evaluator(spec: MarketSpec, functional: str, times: Sequence[float],
                         strategy: Strategy | None = None) -> Evaluator:
    """Values of a functional at the given observation times, shape ``(n, len(times))``."""
    if functional not in FUNCTIONALS:
        raise ValueError(f"unknown functional {functional!r}; expected one of {FUNCTIONALS}")
    gop = _log_value_fn(spec, Strategy.gop(spec))
    if functional != "Zhat":
        if strategy is None:
            raise ValueError(f"functional {functional!r} needs a strategy")
        check_admissible(spec, strategy)
        # unit start keeps benchmarked GOP values exactly equal to the initial wealth
        port = _log_value_fn(spec, Strategy(strategy.fractions, 1.0))
        w0 = strategy.initial_wealth

    def evaluate(batch: PathBatch) -> np.ndarray:
        idx = [_obs_index(batch.times, t) for t in times]
        log_gop = gop(batch)[:, idx]
        if functional == "Zhat":
            return np.exp(-log_gop)
        log_port = port(batch)[:, idx]
        if functional == "benchmarked":
            return w0 * np.exp(log_port - log_gop)
        return w0 * (np.exp(-log_gop) * np.exp(log_port))

    return evaluate


def _check_time(spec: MarketSpec, t: float) -> float:
    t = float(t)
    if not 0 <= t <= spec.horizon:
        raise ValueError(f"time {t} outside [0, {spec.horizon}]")
    return t


def estimate_terminal_expectation(spec: MarketSpec, functional: str = "Zhat", T: float | None = None,
                                  n_paths: int = 100_000, seed: int = 0, strategy: Strategy | None = None,
                                  antithetic: bool = False, threads: int = 1) -> McReport:
    T = _check_time(spec, spec.horizon if T is None else T)
    flags = high_variance_flags(spec, n_paths)
    ev = functional_evaluator(spec, functional, [T], strategy)
    samples = sample(spec, [T], n_paths, seed, ev, antithetic, threads)[:, 0]
    if functional == "Zhat":
        reference = analytic_deflator_expectation(spec, T).value
        initial = 1.0
    else:
        reference = analytic_benchmarked_expectation(spec, strategy, T)
        initial = strategy.initial_wealth
    return _report(functional, T, samples, seed, antithetic, initial, reference, flags)


# -- supermartingale sweep ----------------------------------------------------------

@dataclass(frozen=True)
class SweepReport:
    checkpoints: tuple[float, ...]
    reports: tuple[McReport, ...]
    nonincreasing: bool
    strictly_decreasing: bool
    constant: bool
    max_excess: float  # largest mean increase beyond the 3-sigma allowance; <= 0 when nonincreasing
    initial_value: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "checkpoints": list(self.checkpoints),
            "initial_value": self.initial_value,
            "nonincreasing": self.nonincreasing,
            "strictly_decreasing": self.strictly_decreasing,
            "constant": self.constant,
            "max_excess": self.max_excess,
            "reports": [r.to_dict() for r in self.reports],
        }


def supermartingale_sweep(spec: MarketSpec, strategy: Strategy, checkpoints: Sequence[float],
                          n_paths: int = 20_000, seed: int = 0, antithetic: bool = False,
                          threads: int = 1) -> SweepReport:
    """Mean benchmarked value at increasing checkpoints on common paths.

    The initial value (known exactly) leads the sequence; successive means may
    rise by at most three pooled standard errors.
    """
    cps = [_check_time(spec, t) for t in checkpoints]
    if any(b <= a for a, b in zip(cps, cps[1:])):
        raise ValueError("checkpoints must be strictly increasing")
    flags = high_variance_flags(spec, n_paths)
    ev = functional_evaluator(spec, "benchmarked", cps, strategy)
    samples = sample(spec, cps, n_paths, seed, ev, antithetic, threads)
    s0 = strategy.initial_wealth
    reports = tuple(
        _report("benchmarked", t, samples[:, j], seed, antithetic, s0,
                analytic_benchmarked_expectation(spec, strategy, t), flags)
        for j, t in enumerate(cps))
    means = [s0] + [r.mean for r in reports]
    ses = [0.0] + [r.se for r in reports]
    excess, gaps = [], []
    for j in range(1, len(means)):
        pooled = math.sqrt(ses[j - 1] ** 2 + ses[j] ** 2)
        excess.append(means[j] - means[j - 1] - N_SIGMA * pooled)
        gaps.append(means[j - 1] - means[j] - N_SIGMA * pooled)
    return SweepReport(
        checkpoints=tuple(cps), reports=reports,
        nonincreasing=all(x <= 0 for x in excess),
        strictly_decreasing=all(g > 0 for g in gaps),
        constant=bool(np.all(samples == s0)),
        max_excess=max(excess), initial_value=s0)


# -- growth-rate dominance ----------------------------------------------------------

@dataclass(frozen=True)
class DominanceReport:
    n_strategies: int
    max_slack: float           # max over samples of g(strategy) - g(GOP); must stay <= 1e-12
    violations: int
    per_piece_max_slack: tuple[float, ...]
    closed_form_gap: float     # max |g(GOP fractions) - optimal_growth_rate| over unconstrained pieces
    regimes: tuple[str, ...]
    tolerance: float = 1e-12

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["per_piece_max_slack"] = list(self.per_piece_max_slack)
        d["regimes"] = list(self.regimes)
        d["passed"] = self.passed
        return d


def sample_admissible_fractions(spec: MarketSpec, piece: int, n: int, rng: np.random.Generator,
                                bound: float | None = None, max_rounds: int = 1000) -> np.ndarray:
    """Uniform draws of admissible fractions on one piece.

    Draws are uniform in volatility space ``c = b^T pi`` on the box of half-width
    ``bound`` around the optimum, clipped to the admissible half-spaces (and the
    cap); the linear map back to fractions keeps them uniform. Draws that land
    within the admissibility margin are rejected.
    """
    sol = solve_gop(spec).require()
    c_opt = sol.c_star[piece]
    if bound is None:
        bound = 2.0 * max(1.0, float(np.max(np.abs(c_opt))))
    m = spec.m
    sl = spec.sqrt_lam[piece]
    lo = c_opt - bound
    hi = c_opt + bound
    lo[m:] = np.maximum(lo[m:], -sl)
    if spec.constraint_cap is not None:
        hi[m:] = np.minimum(hi[m:], spec.constraint_cap)
    bt = spec.b[piece].T
    accepted: list[np.ndarray] = []
    have = 0
    for _ in range(max_rounds):
        c = rng.uniform(lo, hi, size=(max(n, 64), spec.d))
        c = c[np.all(c[:, m:] > -sl + EPS_ADMISSIBLE, axis=1)]
        pi = np.linalg.solve(bt, c.T).T
        accepted.append(pi)
        have += pi.shape[0]
        if have >= n:
            break
    else:
        raise RuntimeError("could not draw enough admissible fractions")
    return np.concatenate(accepted)[:n]


def growth_dominance_test(spec: MarketSpec, n_strategies: int = 1000, seed: int = 0,
                          bound: float | None = None, tolerance: float = 1e-12) -> DominanceReport:
    """Compare growth rates of random admissible fractions with the GOP, piece by piece.

    Growth rates are deterministic here, so the comparison is exact rather than statistical.
    """
    sol = solve_gop(spec).require()
    rng = np.random.Generator(np.random.Philox(key=seed))
    theta = spec.theta
    slacks = []
    cf_gap = 0.0
    violations = 0
    for p in range(spec.n_pieces):
        c_gop = sol.pi_star[p] @ spec.b[p]
        g_gop = growth_rate(c_gop, theta[p], spec.lam[p], spec.r[p]).g
        if sol.regimes[p] == UNCONSTRAINED:
            cf_gap = max(cf_gap, abs(g_gop - optimal_growth_rate(theta[p], spec.lam[p], spec.r[p])))
        pis = sample_admissible_fractions(spec, p, n_strategies, rng, bound)
        g = growth_rates(pis @ spec.b[p], theta[p], spec.lam[p], spec.r[p])
        slack = g - g_gop
        violations += int(np.sum(slack > tolerance))
        slacks.append(float(np.max(slack)))
    return DominanceReport(n_strategies=n_strategies, max_slack=max(slacks), violations=violations,
                           per_piece_max_slack=tuple(slacks), closed_form_gap=cf_gap,
                           regimes=sol.regimes, tolerance=tolerance)


# -- log-wealth comparison ------------------------------------------------------------

def log_wealth_comparison(spec: MarketSpec, strategy: Strategy, T: float | None = None,
                          n_paths: int = 100_000, seed: int = 0, threads: int = 1) -> McReport:
    """``E[log S^delta_T - log S^gop_T]`` on common paths (both started at the same wealth).

    The verdict is ``DOMINATED`` when the mean is at most three standard errors above zero.
    """
    T = _check_time(spec, spec.horizon if T is None else T)
    check_admissible(spec, strategy)
    port = _log_value_fn(spec, Strategy(strategy.fractions, 1.0))
    gop = _log_value_fn(spec, Strategy.gop(spec))

    def ev(batch: PathBatch) -> np.ndarray:
        i = _obs_index(batch.times, T)
        return (port(batch) - gop(batch))[:, i]

    samples = sample(spec, [T], n_paths, seed, ev, False, threads)
    mean, se = _summary(samples)
    sol = solve_gop(spec)
    theta = spec.theta
    rates = np.array([
        growth_rate(strategy.fractions[p] @ spec.b[p], theta[p], spec.lam[p], spec.r[p]).g
        - growth_rate(sol.pi_star[p] @ spec.b[p], theta[p], spec.lam[p], spec.r[p]).g
        for p in range(spec.n_pieces)])
    durations = np.clip(np.minimum(spec.breakpoints[1:], T) - spec.breakpoints[:-1], 0.0, None)
    reference = float(np.sum(rates * durations))
    verdict = DOMINATED if mean <= N_SIGMA * se else NOT_DOMINATED
    return _report("log_wealth_difference", T, samples, seed, False, 0.0, reference, (), verdict)
