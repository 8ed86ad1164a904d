"""Jump-diffusion market with deterministic piecewise-constant coefficients.

The market has ``d`` risky assets driven by ``m`` Brownian motions and ``d - m``
counting processes whose compensated jump martingales are normalised as
``dM = (dN - lambda dt) / sqrt(lambda)``. Column ``k`` of the volatility matrix
``b`` loads source ``k``; columns ``m..d-1`` are the jump sources.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import IllConditioned, SpecError, UnsupportedConstraint

COND_LIMIT = 1e12

ELMM_CANDIDATE = "ELMM_CANDIDATE"
GOP_NONEXISTENT = "GOP_NONEXISTENT"
CONSTRAINED_STRICT_SUPERMARTINGALE = "CONSTRAINED_STRICT_SUPERMARTINGALE"


def _frozen(x: Any, ndim: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if arr.ndim != ndim:
        raise SpecError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MarketSpec:
    """Full market description.

    ``breakpoints`` has ``K + 1`` entries ``0 = t_0 < ... < t_K = horizon``;
    ``r`` is ``(K,)``, ``a`` is ``(K, d)``, ``b`` is ``(K, d, d)`` with ``b[p, j, k]``
    the loading of asset ``j`` on source ``k``, and ``lam`` is ``(K, d - m)``.
    """

    d: int
    m: int
    breakpoints: np.ndarray
    r: np.ndarray
    a: np.ndarray
    b: np.ndarray
    lam: np.ndarray
    constraint_cap: float | None = None
    _cond_limit: float = field(default=COND_LIMIT, repr=False)

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise SpecError(f"d must be a positive integer, got {self.d}")
        if int(self.m) != self.m or not 0 <= self.m <= self.d:
            raise SpecError(f"m must be an integer in [0, d], got {self.m}")
        bp = _frozen(self.breakpoints, 1, "breakpoints")
        K = bp.size - 1
        if K < 1:
            raise SpecError("need at least one piece")
        if bp[0] != 0.0:
            raise SpecError("first breakpoint must be 0")
        if not np.all(np.diff(bp) > 0):
            raise SpecError("breakpoints must be strictly increasing")
        r = _frozen(self.r, 1, "r")
        a = _frozen(self.a, 2, "a")
        b = _frozen(self.b, 3, "b")
        lam = _frozen(np.reshape(self.lam, (K, self.d - self.m)) if np.size(self.lam) == 0
                      else self.lam, 2, "lambda")
        if r.shape != (K,):
            raise SpecError(f"r: expected shape {(K,)}, got {r.shape}")
        if a.shape != (K, self.d):
            raise SpecError(f"a: expected shape {(K, self.d)}, got {a.shape}")
        if b.shape != (K, self.d, self.d):
            raise SpecError(f"b: expected shape {(K, self.d, self.d)}, got {b.shape}")
        if lam.shape != (K, self.d - self.m):
            raise SpecError(f"lambda: expected shape {(K, self.d - self.m)}, got {lam.shape}")
        for arr, name in ((bp, "breakpoints"), (r, "r"), (a, "a"), (b, "b"), (lam, "lambda")):
            if not np.all(np.isfinite(arr)):
                raise SpecError(f"{name} contains non-finite values")
        if self.constraint_cap is not None and not (self.constraint_cap > 0 and math.isfinite(self.constraint_cap)):
            raise SpecError(f"constraint_cap must be a positive real, got {self.constraint_cap}")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lam", lam)

    @property
    def n_pieces(self) -> int:
        return self.r.size

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_jumps(self) -> int:
        return self.d - self.m

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @cached_property
    def sqrt_lam(self) -> np.ndarray:
        return np.sqrt(self.lam)

    @cached_property
    def theta(self) -> np.ndarray:
        """Market price of risk on every piece, shape ``(K, d)``."""
        return np.array([market_price_of_risk(self, p) for p in range(self.n_pieces)])

    def piece_index(self, t: np.ndarray | float) -> np.ndarray:
        """Index of the piece ``[t_p, t_{p+1})`` containing ``t``; the horizon maps to the last piece."""
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, self.n_pieces - 1)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def constant(cls, *, d: int, m: int, horizon: float, r: float, a: Sequence[float],
                 b: Sequence[Sequence[float]], lam: Sequence[float] = (),
                 constraint_cap: float | None = None) -> "MarketSpec":
        return cls(d=d, m=m, breakpoints=[0.0, horizon], r=[r], a=[list(a)], b=[b],
                   lam=np.reshape(np.asarray(lam, dtype=float), (1, d - m)),
                   constraint_cap=constraint_cap)

    @classmethod
    def from_theta(cls, *, m: int, horizon: float, r: float, theta: Sequence[float],
                   b: Sequence[Sequence[float]], lam: Sequence[float] = (),
                   constraint_cap: float | None = None) -> "MarketSpec":
        """Constant market whose appreciation rates are ``a = r + b @ theta``."""
        bb = np.asarray(b, dtype=float)
        a = r + bb @ np.asarray(theta, dtype=float)
        return cls.constant(d=bb.shape[0], m=m, horizon=horizon, r=r, a=a, b=bb, lam=lam,
                            constraint_cap=constraint_cap)

    def replace_rates(self, a: np.ndarray) -> "MarketSpec":
        return MarketSpec(d=self.d, m=self.m, breakpoints=self.breakpoints, r=self.r, a=a,
                          b=self.b, lam=self.lam, constraint_cap=self.constraint_cap)

    # -- JSON ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "MarketSpec":
        try:
            d = doc["d"]
            m = doc["m"]
            horizon = float(doc["horizon"])
            pieces = doc["pieces"]
        except KeyError as exc:
            raise SpecError(f"market spec is missing key {exc.args[0]!r}") from None
        if not isinstance(pieces, list) or not pieces:
            raise SpecError("'pieces' must be a non-empty array")
        starts, r, a, b, lam = [], [], [], [], []
        for i, piece in enumerate(pieces):
            for key in ("t_start", "r", "a", "b", "lambda"):
                if key not in piece:
                    raise SpecError(f"pieces[{i}] is missing key {key!r}")
            starts.append(float(piece["t_start"]))
            r.append(float(piece["r"]))
            a.append(piece["a"])
            b.append(piece["b"])
            lam.append(piece["lambda"])
        try:
            lam_arr = np.array(lam, dtype=float).reshape(len(pieces), d - m)
            return cls(d=d, m=m, breakpoints=starts + [horizon], r=r, a=np.array(a, dtype=float),
                       b=np.array(b, dtype=float), lam=lam_arr,
                       constraint_cap=doc.get("constraint_cap"))
        except (ValueError, TypeError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"malformed market spec: {exc}") from None

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "d": self.d,
            "m": self.m,
            "horizon": self.horizon,
            "pieces": [
                {
                    "t_start": float(self.breakpoints[p]),
                    "r": float(self.r[p]),
                    "a": self.a[p].tolist(),
                    "b": self.b[p].tolist(),
                    "lambda": self.lam[p].tolist(),
                }
                for p in range(self.n_pieces)
            ],
        }
        if self.constraint_cap is not None:
            doc["constraint_cap"] = self.constraint_cap
        return doc

    @classmethod
    def load(cls, path: str | Path) -> "MarketSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str  # "intensity", "jump_floor" (b below -sqrt(lambda)), "singular", "constraint"
    piece: int
    indices: tuple[int, ...]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {
            "valid": self.valid,
            "violations": [
                {"kind": v.kind, "piece": v.piece, "indices": list(v.indices), "message": v.message}
                for v in self.violations
            ],
        }


def validate_market(spec: MarketSpec) -> ValidationReport:
    """List every violated model assumption. Indices are 0-based ``(asset j, column k)``."""
    out: list[Violation] = []
    m = spec.m
    for p in range(spec.n_pieces):
        for i, lam in enumerate(spec.lam[p]):
            if not lam > 0:
                out.append(Violation("intensity", p, (m + i,), f"lambda[{i}]={lam} is not strictly positive"))
        for k in range(m, spec.d):
            lam = spec.lam[p, k - m]
            if lam <= 0:
                continue
            floor = -math.sqrt(lam)
            for j in range(spec.d):
                if spec.b[p, j, k] < floor:
                    out.append(Violation(
                        "jump_floor", p, (j, k),
                        f"b[{j}][{k}]={spec.b[p, j, k]} < -sqrt(lambda)={floor}"))
        cond = np.linalg.cond(spec.b[p])
        if not cond <= spec._cond_limit:
            out.append(Violation("singular", p, (), f"volatility matrix not invertible (cond={cond:.3g})"))
    if spec.constraint_cap is not None and (spec.d, spec.m) != (2, 1):
        out.append(Violation("constraint", -1, (), "constraint_cap is only defined for d=2, m=1"))
    return ValidationReport(tuple(out))


def market_price_of_risk(spec: MarketSpec, piece: int) -> np.ndarray:
    """Solve ``b theta = a - r 1`` on one piece."""
    b = spec.b[piece]
    cond = np.linalg.cond(b)
    if not cond <= spec._cond_limit:
        raise IllConditioned(piece, cond)
    return np.linalg.solve(b, spec.a[piece] - spec.r[piece])


# -- regimes -------------------------------------------------------------------

def binding_threshold(theta_jump: float, sqrt_lam: float) -> float:
    """Cap level below which the jump-volatility constraint changes the optimal portfolio.

    Infinite when the unconstrained optimum does not exist.
    """
    if theta_jump >= sqrt_lam:
        return math.inf
    return theta_jump / (1.0 - theta_jump / sqrt_lam)


def cap_binds(theta_jump: float, sqrt_lam: float, cap: float) -> bool:
    return theta_jump >= sqrt_lam or cap < binding_threshold(theta_jump, sqrt_lam)


@dataclass(frozen=True)
class RegimeEntry:
    column: int
    piece: int
    theta: float
    sqrt_lambda: float
    tag: str
    cap_binding: bool | None = None


@dataclass(frozen=True)
class RegimeReport:
    entries: tuple[RegimeEntry, ...]
    constrained: bool

    def tags(self) -> set[str]:
        return {e.tag for e in self.entries}

    @property
    def admits_gop(self) -> bool:
        return GOP_NONEXISTENT not in self.tags()

    @property
    def strict_supermartingale(self) -> bool:
        return CONSTRAINED_STRICT_SUPERMARTINGALE in self.tags()

    def to_dict(self) -> dict[str, Any]:
        return {
            "constrained": self.constrained,
            "entries": [
                {"column": e.column, "piece": e.piece, "theta": e.theta, "sqrt_lambda": e.sqrt_lambda,
                 "tag": e.tag, "cap_binding": e.cap_binding}
                for e in self.entries
            ],
        }


def classify_regime(spec: MarketSpec) -> RegimeReport:
    cap = spec.constraint_cap
    if cap is not None and (spec.d, spec.m) != (2, 1):
        raise UnsupportedConstraint("constraint_cap is only supported for d=2, m=1")
    theta = spec.theta
    entries = []
    for p in range(spec.n_pieces):
        for k in range(spec.m, spec.d):
            th = float(theta[p, k])
            sl = float(spec.sqrt_lam[p, k - spec.m])
            binding = None
            if cap is not None:
                binding = cap_binds(th, sl, cap)
                tag = CONSTRAINED_STRICT_SUPERMARTINGALE if binding else ELMM_CANDIDATE
            else:
                # equality counts as nonexistent: the optimal jump volatility diverges
                tag = ELMM_CANDIDATE if th < sl else GOP_NONEXISTENT
            entries.append(RegimeEntry(k, p, th, sl, tag, binding))
    return RegimeReport(tuple(entries), cap is not None)
