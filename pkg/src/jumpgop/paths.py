"""Exact path simulation of assets, portfolios, the GOP and its inverse.

With piecewise-constant coefficients every value process is an exponential of
a drift, a Brownian integral and a product over jump factors, so paths are
evaluated exactly on an event timeline (deterministic grid plus jump times)
instead of being discretised. ``log_euler_simulate`` is the discretised
counterpart used to check the exact formulas.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import IO, Sequence

import numpy as np

from .errors import InadmissibleStrategy
from .gop import solve_gop
from .market import MarketSpec

EPS_ADMISSIBLE = 1e-12
# relative slack when re-checking the cap on fractions recovered from volatilities
CAP_RTOL = 1e-12

GRID = -1


def path_stream(seed: int, index: int) -> np.random.Generator:
    """Independent stream for path ``index``: Philox keyed by the seed, counter block by the index."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, index, 0]))


def integrated_intensity(breakpoints: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Integrated intensity at each breakpoint, shape ``(K + 1, n_processes)``."""
    bp = np.asarray(breakpoints, dtype=float)
    lam = np.asarray(lam, dtype=float)
    cum = np.zeros((bp.size, lam.shape[1]))
    np.cumsum(lam * np.diff(bp)[:, None], axis=0, out=cum[1:])
    return cum


def _jumps_from_cum(bp: np.ndarray, cum: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    out = []
    for k in range(cum.shape[1]):
        total = cum[-1, k]
        n = int(rng.poisson(total))
        u = total * (1.0 - rng.random(n))
        u.sort()
        out.append(np.interp(u, cum[:, k], bp))
    return out


def sample_jump_times(breakpoints: np.ndarray, lam: np.ndarray,
                      rng: np.random.Generator) -> list[np.ndarray]:
    """Jump times on ``(0, T]`` of independent counting processes with piecewise-constant intensities.

    ``lam`` has shape ``(K, n_processes)``. Given the total count, arrival
    positions are i.i.d. in integrated-intensity space and mapped back by
    inverting the (piecewise-linear) integrated intensity.
    """
    bp = np.asarray(breakpoints, dtype=float)
    return _jumps_from_cum(bp, integrated_intensity(bp, lam), rng)


def _separate_ties(jumps: list[np.ndarray]) -> tuple[list[np.ndarray], int]:
    """Push coincident jump times of later processes one ulp forward."""
    if len(jumps) < 2:
        return jumps, 0
    shifts = 0
    seen = set(jumps[0].tolist())
    fixed = [jumps[0]]
    for arr in jumps[1:]:
        arr = arr.copy()
        for i, t in enumerate(arr):
            while t in seen:
                t = np.nextafter(t, np.inf)
                shifts += 1
            arr[i] = t
            seen.add(t)
        fixed.append(arr)
    return fixed, shifts


@dataclass(frozen=True, eq=False)
class SimulatedPath:
    """One realisation of the Brownian motions and counting processes.

    ``times`` is the merged event timeline starting at 0; ``kinds[e]`` is
    ``GRID`` for deterministic times (uniform grid, breakpoints, requested
    observation times) or the 0-based counting-process index for a jump.
    ``W[e]`` is the Brownian motion at ``times[e]``.
    """

    seed: int
    index: int
    n_steps: int
    times: np.ndarray
    kinds: np.ndarray
    W: np.ndarray
    jump_times: tuple[np.ndarray, ...]
    tie_shifts: int = 0
    antithetic: bool = False

    @property
    def dt(self) -> float:
        return float(self.times[-1]) / self.n_steps

    @cached_property
    def dW(self) -> np.ndarray:
        return np.diff(self.W, axis=0)

    def jump_counts(self) -> np.ndarray:
        return np.array([jt.size for jt in self.jump_times], dtype=int)

    def mirrored(self) -> "SimulatedPath":
        """Antithetic partner: Brownian motion negated, jumps kept."""
        return replace(self, W=-self.W, antithetic=not self.antithetic)

    def index_of(self, t: float) -> int:
        """Index of the deterministic event at time ``t``."""
        i = int(np.searchsorted(self.times, t, side="left"))
        if i >= self.times.size or self.times[i] != t:
            raise KeyError(f"time {t} is not an event of this path")
        return i


def _deterministic_times(spec: MarketSpec, n_steps: int, extra_times: Sequence[float]) -> np.ndarray:
    T = spec.horizon
    grid = np.arange(n_steps + 1) / n_steps * T
    det = np.unique(np.concatenate([grid, spec.breakpoints, np.asarray(extra_times, dtype=float)]))
    if det[0] < 0 or det[-1] > T:
        raise ValueError("observation times must lie in [0, horizon]")
    return det


def _draw_jumps_and_grid(spec: MarketSpec, rng: np.random.Generator, cum: np.ndarray,
                         sqrt_dt: np.ndarray):
    """Shared draw order: jump times first, then Brownian increments between deterministic times."""
    jumps, shifts = _separate_ties(_jumps_from_cum(spec.breakpoints, cum, rng))
    dW = rng.standard_normal((sqrt_dt.size, spec.m))
    dW *= sqrt_dt[:, None]
    return jumps, shifts, dW


def simulate_path(spec: MarketSpec, seed: int, index: int = 0, n_steps: int = 1,
                  extra_times: Sequence[float] = ()) -> SimulatedPath:
    """Draw path ``index`` of stream ``seed``.

    The Brownian motion is sampled on the deterministic times first and then
    filled in at jump times by Brownian-bridge interpolation, so its values on
    the deterministic times do not depend on where the jumps fall.
    """
    rng = path_stream(seed, index)
    det = _deterministic_times(spec, n_steps, extra_times)
    jumps, shifts, dW_det = _draw_jumps_and_grid(spec, rng, integrated_intensity(spec.breakpoints, spec.lam),
                                                 np.sqrt(np.diff(det)))
    W_det = np.zeros((det.size, spec.m))
    np.cumsum(dW_det, axis=0, out=W_det[1:])
    if jumps:
        jt = np.concatenate(jumps)
        jk = np.concatenate([np.full(a.size, k) for k, a in enumerate(jumps)])
    else:
        jt = np.empty(0)
        jk = np.empty(0, dtype=int)
    times = np.concatenate([det, jt])
    kinds = np.concatenate([np.full(det.size, GRID), jk]).astype(int)
    order = np.lexsort((kinds, times))
    times = times[order]
    kinds = kinds[order]
    if jt.size == 0:
        W = W_det
    else:
        is_det = kinds == GRID
        det_pos = np.nonzero(is_det)[0]
        # enclosing deterministic events of every event
        a = det_pos[np.cumsum(is_det) - 1]
        b_idx = np.minimum(np.searchsorted(det_pos, np.arange(times.size), side="left"), det_pos.size - 1)
        b = det_pos[b_idx]
        incr = rng.standard_normal((times.size - 1, spec.m)) * np.sqrt(np.diff(times))[:, None]
        B = np.zeros((times.size, spec.m))
        np.cumsum(incr, axis=0, out=B[1:])
        Wd = np.zeros((times.size, spec.m))
        Wd[det_pos] = W_det
        span = times[b] - times[a]
        frac = np.divide(times - times[a], span, out=np.zeros_like(times), where=span > 0)[:, None]
        bridge = (B - B[a]) - frac * (B[b] - B[a])
        W = np.where(is_det[:, None], Wd, Wd[a] + frac * (Wd[b] - Wd[a]) + bridge)
    for arr in (times, kinds, W):
        arr.setflags(write=False)
    return SimulatedPath(seed=seed, index=index, n_steps=n_steps, times=times, kinds=kinds, W=W,
                         jump_times=tuple(jumps), tie_shifts=shifts)


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Paths ``start..stop-1`` of a stream reduced to what is needed at the observation times.

    Uses the same draws as ``simulate_path(spec, seed, i, n_steps=1, extra_times=...)``,
    so values at the observation times agree with the full paths.
    """

    seed: int
    start: int
    times: np.ndarray          # observation times, including 0, breakpoints and horizon
    dW: np.ndarray             # (n_paths, n_times - 1, m)
    jump_path: np.ndarray      # per jump: local path index
    jump_interval: np.ndarray  # per jump: interval (times[i], times[i + 1]] containing it
    jump_process: np.ndarray   # per jump: counting-process index
    n_paths: int
    tie_shifts: int = 0

    def mirrored(self) -> "PathBatch":
        return replace(self, dW=-self.dW)

    def jump_counts(self) -> np.ndarray:
        """Number of jumps per path and process, shape ``(n_paths, n_processes)``."""
        n_proc = int(self.jump_process.max()) + 1 if self.jump_process.size else 0
        out = np.zeros((self.n_paths, max(n_proc, 1)), dtype=int)
        np.add.at(out, (self.jump_path, self.jump_process), 1)
        return out

    def evaluate(self, spec: MarketSpec, drift: np.ndarray, vols: np.ndarray, log0: float) -> np.ndarray:
        """Log values at the observation times, shape ``(n_paths, n_times)``."""
        m = spec.m
        pieces = spec.piece_index(self.times[:-1])
        cont = drift[pieces] * np.diff(self.times)
        incr = np.broadcast_to(cont, (self.n_paths, cont.size)).copy()
        if m:
            incr += np.einsum("nik,ik->ni", self.dW, vols[pieces, :m])
        if self.jump_path.size:
            p = pieces[self.jump_interval]
            k = self.jump_process
            with np.errstate(divide="ignore"):
                jl = np.log1p(vols[p, m + k] / spec.sqrt_lam[p, k])
            np.add.at(incr, (self.jump_path, self.jump_interval), jl)
        out = np.empty((self.n_paths, self.times.size))
        out[:, 0] = log0
        np.cumsum(incr, axis=1, out=out[:, 1:])
        out[:, 1:] += log0
        return out


def simulate_batch(spec: MarketSpec, seed: int, start: int, stop: int,
                   extra_times: Sequence[float] = ()) -> PathBatch:
    det = _deterministic_times(spec, 1, extra_times)
    n = stop - start
    dW = np.empty((n, det.size - 1, spec.m))
    jp, ji, jk = [], [], []
    shifts = 0
    cum = integrated_intensity(spec.breakpoints, spec.lam)
    sqrt_dt = np.sqrt(np.diff(det))
    for i in range(n):
        rng = path_stream(seed, start + i)
        jumps, sh, dW[i] = _draw_jumps_and_grid(spec, rng, cum, sqrt_dt)
        shifts += sh
        for k, arr in enumerate(jumps):
            if arr.size:
                jp.append(np.full(arr.size, i))
                ji.append(np.searchsorted(det, arr, side="left") - 1)
                jk.append(np.full(arr.size, k))
    cat = (lambda xs: np.concatenate(xs).astype(int)) if jp else (lambda xs: np.empty(0, dtype=int))
    return PathBatch(seed=seed, start=start, times=det, dW=dW, jump_path=cat(jp), jump_interval=cat(ji),
                     jump_process=cat(jk), n_paths=n, tie_shifts=shifts)


# -- strategies -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Strategy:
    """Piecewise-constant risky fractions, one row per market piece.

    Fractions change only at market breakpoints, so they are automatically
    predictable. Unit holdings follow as ``pi^j * value_- / S^j_-``.
    """

    fractions: np.ndarray
    initial_wealth: float = 1.0

    def __post_init__(self) -> None:
        f = np.array(self.fractions, dtype=float)
        if f.ndim != 2:
            raise ValueError("fractions must have shape (pieces, d)")
        f.setflags(write=False)
        object.__setattr__(self, "fractions", f)
        if not self.initial_wealth > 0:
            raise ValueError("initial wealth must be positive")

    @classmethod
    def constant(cls, spec: MarketSpec, pi: Sequence[float], initial_wealth: float = 1.0) -> "Strategy":
        return cls(np.tile(np.asarray(pi, dtype=float), (spec.n_pieces, 1)), initial_wealth)

    @classmethod
    def cash(cls, spec: MarketSpec, initial_wealth: float = 1.0) -> "Strategy":
        return cls(np.zeros((spec.n_pieces, spec.d)), initial_wealth)

    @classmethod
    def gop(cls, spec: MarketSpec, initial_wealth: float = 1.0) -> "Strategy":
        return cls(solve_gop(spec).require().pi_star, initial_wealth)

    def volatilities(self, spec: MarketSpec) -> np.ndarray:
        """Portfolio volatilities ``c[p, k] = sum_j pi[p, j] b[p, j, k]``."""
        return np.einsum("pj,pjk->pk", self.fractions, spec.b)


def admissibility_violations(spec: MarketSpec, strategy: Strategy) -> list[str]:
    if strategy.fractions.shape != (spec.n_pieces, spec.d):
        return [f"fractions have shape {strategy.fractions.shape}, expected {(spec.n_pieces, spec.d)}"]
    c = strategy.volatilities(spec)
    out = []
    for p in range(spec.n_pieces):
        for i in range(spec.n_jumps):
            k = spec.m + i
            floor = -spec.sqrt_lam[p, i] + EPS_ADMISSIBLE
            if not c[p, k] > floor:
                out.append(f"piece {p}: jump volatility c[{k}]={c[p, k]:.6g} <= -sqrt(lambda)")
            cap = spec.constraint_cap
            if cap is not None and c[p, k] > cap * (1 + CAP_RTOL) + CAP_RTOL:
                out.append(f"piece {p}: jump volatility c[{k}]={c[p, k]:.6g} exceeds cap {cap}")
    return out


def check_admissible(spec: MarketSpec, strategy: Strategy) -> None:
    problems = admissibility_violations(spec, strategy)
    if problems:
        raise InadmissibleStrategy("; ".join(problems))


# -- exact evaluation -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ValuePath:
    """Values at every event of a path, with left limits (differing only at jumps)."""

    times: np.ndarray
    kinds: np.ndarray
    values: np.ndarray
    left: np.ndarray
    log_values: np.ndarray
    log_left: np.ndarray
    discounted: bool
    absorbed: bool = False

    @classmethod
    def from_logs(cls, times, kinds, log_values, log_left, discounted, absorbed=False) -> "ValuePath":
        return cls(times, kinds, np.exp(log_values), np.exp(log_left), log_values, log_left,
                   discounted, absorbed)

    @property
    def terminal(self) -> float:
        return float(self.values[-1])

    def at(self, t: float) -> float:
        i = int(np.searchsorted(self.times, t, side="left"))
        if i >= self.times.size or self.times[i] != t:
            raise KeyError(f"time {t} is not an event of this path")
        return float(self.values[i])


def _interval_pieces(spec: MarketSpec, path: SimulatedPath) -> np.ndarray:
    return spec.piece_index(path.times[:-1])


def _evaluate(spec: MarketSpec, path: SimulatedPath, drift: np.ndarray, vols: np.ndarray,
              log0: float, discounted: bool) -> ValuePath:
    """Exponential-product evaluation for per-piece log-drift and volatilities.

    ``drift[p]`` is the continuous log-growth rate on piece ``p`` (all
    compensators included); ``vols[p]`` the volatilities on every source.
    """
    m = spec.m
    pieces = _interval_pieces(spec, path)
    dt = np.diff(path.times)
    cont = drift[pieces] * dt
    if m:
        cont = cont + np.einsum("ek,ek->e", path.dW, vols[pieces, :m])
    jump = np.zeros(path.times.size)
    is_jump = path.kinds >= 0
    absorbed = False
    if is_jump.any():
        e = np.nonzero(is_jump)[0]
        k = path.kinds[e]
        p = pieces[e - 1]
        ratio = vols[p, m + k] / spec.sqrt_lam[p, k]
        with np.errstate(divide="ignore"):
            jump[e] = np.log1p(ratio)
        absorbed = bool(np.any(ratio <= -1.0))
    steps = cont + jump[1:]
    logv = np.empty(path.times.size)
    logv[0] = log0
    np.cumsum(steps, out=logv[1:])
    logv[1:] += log0
    left = logv.copy()
    left[1:] = logv[:-1] + cont
    return ValuePath.from_logs(path.times, path.kinds, logv, left, discounted, absorbed)


def _portfolio_drift(spec: MarketSpec, strategy: Strategy, discounted: bool) -> np.ndarray:
    """Continuous log-drift per piece; the excess return ``pi . (a - r)`` avoids inverting ``b``."""
    m = spec.m
    vols = strategy.volatilities(spec)
    drift = np.einsum("pj,pj->p", strategy.fractions, spec.a - spec.r[:, None])
    drift -= 0.5 * np.sum(vols[:, :m] ** 2, axis=1)
    drift -= np.sum(vols[:, m:] * spec.sqrt_lam, axis=1)
    if not discounted:
        drift += spec.r
    return drift


def simulate_assets(spec: MarketSpec, path: SimulatedPath, s0: Sequence[float] | None = None,
                    discounted: bool = False) -> list[ValuePath]:
    """Primary security accounts, evaluated from ``a`` and ``b`` directly."""
    s0 = np.ones(spec.d) if s0 is None else np.asarray(s0, dtype=float)
    m = spec.m
    out = []
    for j in range(spec.d):
        vols = spec.b[:, j, :]
        drift = spec.a[:, j] - 0.5 * np.sum(vols[:, :m] ** 2, axis=1) - np.sum(vols[:, m:] * spec.sqrt_lam, axis=1)
        if discounted:
            drift = drift - spec.r
        out.append(_evaluate(spec, path, drift, vols, math.log(s0[j]), discounted))
    return out


def simulate_portfolio(spec: MarketSpec, strategy: Strategy, path: SimulatedPath,
                       discounted: bool = False, check: bool = True) -> ValuePath:
    if check:
        check_admissible(spec, strategy)
    vols = strategy.volatilities(spec)
    return _evaluate(spec, path, _portfolio_drift(spec, strategy, discounted), vols,
                     math.log(strategy.initial_wealth), discounted)


def simulate_gop(spec: MarketSpec, path: SimulatedPath, discounted: bool = True) -> ValuePath:
    """GOP started at 1 (discounted by default); raises ``NoGop`` when it does not exist."""
    return simulate_portfolio(spec, Strategy.gop(spec), path, discounted=discounted)


def simulate_deflator(spec: MarketSpec, path: SimulatedPath, gop_path: ValuePath | None = None) -> ValuePath:
    """Inverse of the discounted GOP."""
    g = gop_path if gop_path is not None else simulate_gop(spec, path, discounted=True)
    if not g.discounted:
        raise ValueError("deflator needs the discounted GOP")
    # reciprocal of the stored GOP values keeps the inversion identity at rounding level
    return ValuePath(g.times, g.kinds, 1.0 / g.values, 1.0 / g.left, -g.log_values, -g.log_left,
                     True, g.absorbed)


# -- log-Euler oracle --------------------------------------------------------------

def log_euler_simulate(spec: MarketSpec, strategy: Strategy, path: SimulatedPath, dt: float,
                       discounted: bool = False) -> ValuePath:
    """First-order log-Euler scheme on a uniform grid of step ``dt``.

    Continuous coefficients are frozen at the left grid point of each step and
    Brownian increments are aggregated from the path; jumps are applied at their
    sampled times with the coefficients in force there. The path's own grid
    must refine the scheme grid.
    """
    check_admissible(spec, strategy)
    T = spec.horizon
    n = int(round(T / dt))
    if n < 1 or not math.isclose(n * dt, T, rel_tol=1e-9):
        raise ValueError(f"step {dt} does not divide the horizon {T}")
    if path.n_steps % n:
        raise ValueError(f"path grid ({path.n_steps} steps) does not refine {n} steps")
    grid = np.arange(n + 1) / n * T
    idx = np.searchsorted(path.times, grid, side="left")
    if not np.array_equal(path.times[idx], grid):
        raise ValueError("scheme grid is not contained in the path timeline")

    m = spec.m
    vols = strategy.volatilities(spec)
    rate = np.empty(spec.n_pieces)
    for p in range(spec.n_pieces):
        # drift of d log S: excess return, Ito correction and jump compensator
        excess = float(strategy.fractions[p] @ (spec.a[p] - spec.r[p]))
        rate[p] = (0.0 if discounted else spec.r[p]) + excess - 0.5 * float(vols[p, :m] @ vols[p, :m]) \
            - float(vols[p, m:] @ spec.sqrt_lam[p])

    step_piece = spec.piece_index(grid[:-1])
    dW = np.diff(path.W[idx], axis=0)
    incr = rate[step_piece] * (T / n)
    if m:
        incr = incr + np.einsum("ek,ek->e", dW, vols[step_piece, :m])

    jump_log = np.zeros(path.times.size)
    e = np.nonzero(path.kinds >= 0)[0]
    if e.size:
        k = path.kinds[e]
        p = spec.piece_index(path.times[e - 1])
        jump_log[e] = np.log1p(vols[p, m + k] / spec.sqrt_lam[p, k])
    cum_jump = np.cumsum(jump_log)
    incr = incr + np.diff(cum_jump[idx])

    logv = np.empty(n + 1)
    logv[0] = math.log(strategy.initial_wealth)
    np.cumsum(incr, out=logv[1:])
    logv[1:] += logv[0]
    kinds = np.full(n + 1, GRID)
    return ValuePath.from_logs(grid, kinds, logv, logv.copy(), discounted)


# -- CSV dump ----------------------------------------------------------------------

CSV_HEADER_FIXED = ("path_id", "t", "event_type")


def event_label(kind: int) -> str:
    return "grid" if kind == GRID else f"jump:{kind + 1}"


def write_paths_csv(fh: IO[str], spec: MarketSpec, paths: Sequence[SimulatedPath]) -> None:
    """One row per event: asset values, discounted GOP and deflator."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow([*CSV_HEADER_FIXED, *(f"S{j + 1}" for j in range(spec.d)), "Sbar_gop", "Zhat"])
    gop = Strategy.gop(spec)
    for path in paths:
        assets = simulate_assets(spec, path)
        g = simulate_portfolio(spec, gop, path, discounted=True)
        z = simulate_deflator(spec, path, g)
        for e in range(path.times.size):
            writer.writerow([path.index, repr(float(path.times[e])), event_label(int(path.kinds[e])),
                             *(repr(float(a.values[e])) for a in assets),
                             repr(float(g.values[e])), repr(float(z.values[e]))])
