"""Command-line front end.

Each subcommand loads a scenario (a file path or the name of a built-in
scenario), calls one library operation and writes a JSON report. Exit status
is 0 on success, 1 when a verdict contradicts the regime classification and
2 on input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Sequence

from .deflator import closed_form_deflator, solve_unique_deflator
from .errors import JumpGopError, SpecError
from .gop import solve_gop
from .market import MarketSpec, classify_regime, validate_market
from .montecarlo import (CONSISTENT_WITH_MARTINGALE, FUNCTIONALS, STRICT_SUPERMARTINGALE,
                         estimate_terminal_expectation, growth_dominance_test, supermartingale_sweep)
from .paths import Strategy, check_admissible, simulate_assets, simulate_deflator, simulate_gop, simulate_path, \
    write_paths_csv

KINDS = ("validate", "gop", "simulate", "martingale-test", "supermartingale-sweep", "dominance", "solve-deflator")
COMMAND_KIND = {
    "validate": "validate",
    "gop": "gop",
    "simulate": "simulate",
    "test-martingale": "martingale-test",
    "sweep": "supermartingale-sweep",
    "dominance": "dominance",
    "solve-deflator": "solve-deflator",
}

EXIT_OK, EXIT_VERDICT, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


# -- scenarios -------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    market: MarketSpec
    n_paths: int = 100_000
    seed: int = 0
    checkpoints: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    strategy: Any = "cash"
    antithetic: bool = False
    functional: str = "Zhat"
    n_steps: int = 100
    n_strategies: int = 1000

    def build_strategy(self) -> Strategy:
        spec = self.market
        s = self.strategy
        if s == "cash":
            return Strategy.cash(spec)
        if s == "gop":
            return Strategy.gop(spec)
        if isinstance(s, dict) and "fractions" in s:
            fr = s["fractions"]
            w = float(s.get("initial_wealth", 1.0))
            try:
                if fr and isinstance(fr[0], list):
                    return Strategy(fr, w)
                return Strategy.constant(spec, fr, w)
            except (ValueError, TypeError) as exc:
                raise SpecError(f"{self.name}: bad strategy: {exc}") from None
        raise SpecError(f"{self.name}: strategy must be 'cash', 'gop' or an object with 'fractions'")


def builtin_names() -> list[str]:
    root = resources.files("jumpgop") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _read_source(ref: str) -> tuple[str, str]:
    path = Path(ref)
    if path.is_file():
        return str(path), path.read_text()
    stem = ref[:-5] if ref.endswith(".json") else ref
    if "/" not in ref and stem in builtin_names():
        res = resources.files("jumpgop") / "scenarios" / f"{stem}.json"
        return f"<builtin:{stem}>", res.read_text()
    raise InputError(f"{ref}: no such file or built-in scenario (built-ins: {', '.join(builtin_names())})")


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{source}: top level must be a JSON object")
    # A bare market spec is accepted as a validation scenario.
    market_doc = doc.get("market", doc if "pieces" in doc else None)
    if market_doc is None:
        raise InputError(f"{source}: scenario is missing key 'market'")
    try:
        market = MarketSpec.from_dict(market_doc)
    except SpecError as exc:
        raise InputError(f"{source}: {exc}") from None
    kind = doc.get("kind", "validate")
    if kind not in KINDS:
        raise InputError(f"{source}: unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    try:
        sc = Scenario(
            name=str(doc.get("name", Path(source).stem.strip("<>").replace("builtin:", ""))),
            kind=kind, market=market,
            n_paths=int(doc.get("n_paths", 100_000)),
            seed=int(doc.get("seed", 0)),
            checkpoints=tuple(float(t) for t in doc.get("checkpoints", (0.25, 0.5, 0.75, 1.0))),
            strategy=doc.get("strategy", "cash"),
            antithetic=bool(doc.get("antithetic", False)),
            functional=str(doc.get("functional", "Zhat")),
            n_steps=int(doc.get("n_steps", 100)),
            n_strategies=int(doc.get("n_strategies", 1000)),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"{source}: malformed scenario field: {exc}") from None
    if sc.n_paths < 1:
        raise InputError(f"{source}: n_paths must be at least 1")
    if sc.functional not in FUNCTIONALS:
        raise InputError(f"{source}: unknown functional {sc.functional!r}")
    return sc


def load_scenario(ref: str) -> Scenario:
    source, text = _read_source(ref)
    return parse_scenario(text, source)


# -- operations --------------------------------------------------------------------

def _require_valid(sc: Scenario) -> None:
    report = validate_market(sc.market)
    if not report.valid:
        msgs = "; ".join(v.message for v in report.violations)
        raise InputError(f"{sc.name}: market violates model assumptions: {msgs}")


def cmd_validate(sc: Scenario, args: argparse.Namespace) -> tuple[dict, int]:
    report = validate_market(sc.market)
    out: dict[str, Any] = {"validation": report.to_dict()}
    if report.valid:
        out["regime"] = classify_regime(sc.market).to_dict()
    return out, EXIT_OK if report.valid else EXIT_VERDICT


def cmd_gop(sc: Scenario, args: argparse.Namespace) -> tuple[dict, int]:
    _require_valid(sc)
    return {"regime": classify_regime(sc.market).to_dict(), "gop": solve_gop(sc.market).to_dict()}, EXIT_OK


def cmd_solve_deflator(sc: Scenario, args: argparse.Namespace) -> tuple[dict, int]:
    _require_valid(sc)
    generic = solve_unique_deflator(sc.market)
    closed = closed_form_deflator(sc.market)
    gap = float(max(abs(generic.phi - closed.phi).max(initial=0.0), abs(generic.psi - closed.psi).max(initial=0.0)))
    return {"deflator": generic.to_dict(), "closed_form_gap": gap}, EXIT_OK


def cmd_simulate(sc: Scenario, args: argparse.Namespace) -> tuple[dict, int]:
    _require_valid(sc)
    spec = sc.market
    solve_gop(spec).require()
    n = args.paths if args.paths is not None else min(sc.n_paths, 10)
    steps = args.steps if args.steps is not None else sc.n_steps
    paths = [simulate_path(spec, sc_seed(sc, args), i, steps) for i in range(n)]
    rows = []
    for p in paths:
        assets = simulate_assets(spec, p)
        gop = simulate_gop(spec, p)
        z = simulate_deflator(spec, p, gop)
        rows.append({
            "path_id": p.index, "n_events": int(p.times.size), "jump_counts": p.jump_counts().tolist(),
            "tie_shifts": p.tie_shifts, "S_T": [a.terminal for a in assets],
            "Sbar_gop_T": gop.terminal, "Zhat_T": z.terminal,
        })
    if args.dump_paths:
        with open(args.dump_paths, "w", newline="") as fh:
            write_paths_csv(fh, spec, paths)
    return {"n_paths": n, "n_steps": steps, "seed": sc_seed(sc, args), "paths": rows}, EXIT_OK


def sc_seed(sc: Scenario, args: argparse.Namespace) -> int:
    return args.seed if args.seed is not None else sc.seed


def _n_paths(sc: Scenario, args: argparse.Namespace) -> int:
    n = args.paths if args.paths is not None else sc.n_paths
    if n < 1:
        raise InputError("--paths must be at least 1")
    return n


def _write_csv(path: str, name: str, reports: Sequence[dict]) -> None:
    cols = ["scenario", "functional", "t", "mean", "se", "ci_low", "ci_high", "n_paths", "seed",
            "antithetic", "verdict", "reference"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in reports:
            w.writerow([name] + [r[c] for c in cols[1:]])


def cmd_test_martingale(sc: Scenario, args: argparse.Namespace) -> tuple[dict, int]:
    _require_valid(sc)
    spec = sc.market
    regime = classify_regime(spec)
    functional = args.functional or sc.functional
    strategy = None if functional == "Zhat" else sc.build_strategy()
    report = estimate_terminal_expectation(spec, functional, n_paths=_n_paths(sc, args), seed=sc_seed(sc, args),
                                           strategy=strategy, antithetic=args.antithetic or sc.antithetic,
                                           threads=args.threads)
    out = {"regime": regime.to_dict(), "report": report.to_dict()}
    status = EXIT_OK
    if functional == "Zhat":
        expected = STRICT_SUPERMARTINGALE if regime.strict_supermartingale else CONSISTENT_WITH_MARTINGALE
        out["expected_verdict"] = expected
        if report.verdict != expected:
            status = EXIT_VERDICT
    if args.csv:
        _write_csv(args.csv, sc.name, [report.to_dict()])
    return out, status


def cmd_sweep(sc: Scenario, args: argparse.Namespace) -> tuple[dict, int]:
    _require_valid(sc)
    strategy = sc.build_strategy()
    check_admissible(sc.market, strategy)
    rep = supermartingale_sweep(sc.market, strategy, sc.checkpoints, n_paths=_n_paths(sc, args),
                                seed=sc_seed(sc, args), antithetic=args.antithetic or sc.antithetic,
                                threads=args.threads)
    if args.csv:
        _write_csv(args.csv, sc.name, [r.to_dict() for r in rep.reports])
    return {"strategy": strategy.fractions.tolist(), "sweep": rep.to_dict()}, \
        EXIT_OK if rep.nonincreasing else EXIT_VERDICT


def cmd_dominance(sc: Scenario, args: argparse.Namespace) -> tuple[dict, int]:
    _require_valid(sc)
    n = args.strategies if args.strategies is not None else sc.n_strategies
    rep = growth_dominance_test(sc.market, n_strategies=n, seed=sc_seed(sc, args))
    return {"dominance": rep.to_dict()}, EXIT_OK if rep.passed else EXIT_VERDICT


HANDLERS: dict[str, Callable[[Scenario, argparse.Namespace], tuple[dict, int]]] = {
    "validate": cmd_validate,
    "gop": cmd_gop,
    "simulate": cmd_simulate,
    "martingale-test": cmd_test_martingale,
    "supermartingale-sweep": cmd_sweep,
    "dominance": cmd_dominance,
    "solve-deflator": cmd_solve_deflator,
}


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpgop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario JSON file or built-in scenario name")
    common.add_argument("--paths", type=int, help="number of Monte Carlo paths (overrides the scenario)")
    common.add_argument("--seed", type=int, help="random seed (overrides the scenario)")
    common.add_argument("--out", help="write the JSON report here instead of stdout")
    common.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    common.add_argument("--antithetic", action="store_true", help="use antithetic Brownian increments")
    common.add_argument("--csv", help="also write a scenario x statistic CSV")
    common.add_argument("--functional", choices=FUNCTIONALS, help="functional for test-martingale")
    common.add_argument("--strategies", type=int, help="number of random strategies for dominance")
    common.add_argument("--steps", type=int, help="grid steps for simulate")
    common.add_argument("--dump-paths", metavar="FILE", help="write simulated paths as CSV (simulate)")
    for name in (*COMMAND_KIND, "run"):
        sub.add_parser(name, parents=[common],
                       help="dispatch on the scenario's kind" if name == "run" else f"run the {name} operation")
    sub.add_parser("list", help="list built-in scenarios")
    return parser


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in builtin_names():
            print(name, file=stdout)
        return EXIT_OK
    try:
        if args.threads < 1:
            raise InputError("--threads must be at least 1")
        sc = load_scenario(args.scenario)
        kind = sc.kind if args.command == "run" else COMMAND_KIND[args.command]
        result, status = HANDLERS[kind](sc, args)
    except (InputError, JumpGopError, OSError) as exc:
        print(f"jumpgop: error: {exc}", file=stderr)
        return EXIT_INPUT
    report = {"scenario": sc.name, "kind": kind, "market": sc.market.to_dict(), **result}
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            print(f"jumpgop: error: {exc}", file=stderr)
            return EXIT_INPUT
    else:
        stdout.write(text)
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
