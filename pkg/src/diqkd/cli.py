"""Command-line sweeps: asymptotic rates, finite-size thresholds, leakage, solver benchmarks."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .analytic import h_a_given_b, optimize_r0
from .circuit import CircuitParams, apply_preprocessing, behavior
from .entropy import h_cond_bound, h_joint_bound
from .finite import SearchOptions, SecurityParams, minimum_rounds, setup_from_params
from .keyrate import optimize_keyrate

log = logging.getLogger("diqkd")

COMMANDS = ("asymptotic", "finite", "noise", "benchmark", "entropy")
PARAM_COLUMNS = ("T_g", "alpha1", "alpha2", "beta0", "beta1", "beta2", "p")


@dataclass
class RunConfig:
    command: str = "asymptotic"
    etas: list = field(default_factory=lambda: [0.875])
    m: int = 8
    monomials: str = "npa2"
    benchmark_monomials: str = "local1"  # npa1 lacks the AB rows the joint objective needs
    mode: str = "block"
    iterations: int = 3
    starts: int = 8
    security: dict = field(default_factory=dict)
    eps_snd: float = 3e-10
    zetas: list = field(default_factory=lambda: [1.0, 0.95, 0.9])
    chis: list = field(default_factory=lambda: [1.0, 0.95, 0.9])
    s_value: float = 2.3
    m_values: list = field(default_factory=lambda: [2, 4, 6, 8, 10, 12])
    modes: list = field(default_factory=lambda: ["split", "block", "full"])
    params: dict | None = None  # fixed circuit point (skips the asymptotic optimisation)
    grid: int = 10
    log10_range: list = field(default_factory=lambda: [6.0, 13.0])
    bisection_steps: int = 20
    out: str = "results.csv"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if self.mode not in ("full", "block", "split"):
            raise ValueError("mode must be full, block or split")
        for name in ("etas", "m_values"):
            vals = getattr(self, name)
            if not vals:
                raise ValueError(f"{name} must be nonempty")
            setattr(self, name, sorted(vals))
        if any(not 0.0 < e <= 1.0 for e in self.etas):
            raise ValueError("efficiencies must lie in (0, 1]")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def security_params(self) -> SecurityParams:
        if self.security:
            return SecurityParams(**self.security)
        return SecurityParams.from_soundness(self.eps_snd)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _param_cells(params: CircuitParams, prefix: str = "") -> dict:
    v = list(params.vector()) + [params.p]
    return {prefix + k: float(x) for k, x in zip(PARAM_COLUMNS, v)}


# -- per-point workers (module level so they pickle) -------------------------


def _asymptotic_point(cfg: RunConfig, index: int, eta: float) -> dict:
    p_r0, r0 = optimize_r0(eta, starts=cfg.starts, seed=cfg.seed + index)
    res = optimize_keyrate(eta, iterations=cfg.iterations, params0=p_r0, m=cfg.m, monomials=cfg.monomials,
                           seed=cfg.seed + index)
    row = {"eta": eta, "r0": r0, "r_block": res.rate, "h_ae": res.h_ae, "h_ab": res.h_ab}
    row.update(_param_cells(res.params))
    row.update(_param_cells(p_r0, "r0_"))
    return row


def _finite_point(cfg: RunConfig, index: int, eta: float) -> dict:
    if cfg.params is not None:
        params = CircuitParams.from_dict({**cfg.params, "eta": eta})
    else:
        p_r0, _ = optimize_r0(eta, starts=cfg.starts, seed=cfg.seed + index)
        params = optimize_keyrate(eta, iterations=cfg.iterations, params0=p_r0, m=cfg.m,
                                  monomials=cfg.monomials).params
    setup = setup_from_params(params, m=cfg.m, grid=cfg.grid, monomials=cfg.monomials)
    res = minimum_rounds(setup, cfg.security_params(), tuple(cfg.log10_range), cfg.bisection_steps, SearchOptions())
    rep = res.report
    row = {"eta": eta, "n_min": res.n_min, "l": rep.raw if rep else math.nan}
    for k in ("v", "gamma", "alpha1", "alpha2", "c_perp", "i_thr"):
        row[k] = getattr(rep, k) if rep else math.nan
    row.update(_param_cells(params))
    return row


def _noise_point(cfg: RunConfig, index: int, task: tuple) -> dict:
    eta, kind, value = task
    # seed by efficiency only, so leakage 1 reproduces the noiseless optimisation exactly
    kw = {kind: value}
    params, r0 = optimize_r0(eta, starts=cfg.starts, seed=cfg.seed + cfg.etas.index(eta), **kw)
    row = {"eta": eta, "leakage": kind, "value": value, "r0": r0}
    row.update(_param_cells(params))
    return row


def _benchmark_point(cfg: RunConfig, index: int, m: int) -> dict:
    row = {"S": cfg.s_value, "m": m}
    for mode in ("split", "block", "full"):
        if mode not in cfg.modes:
            row[f"H_{mode}"], row[f"status_{mode}"], row[f"seconds_{mode}"] = math.nan, "skipped", math.nan
            continue
        t = time.perf_counter()
        bd = h_joint_bound(cfg.s_value, m=m, mode=mode, monomials=cfg.benchmark_monomials)
        row[f"H_{mode}"] = bd.raw_value
        row[f"status_{mode}"] = bd.solver_status
        row[f"seconds_{mode}"] = time.perf_counter() - t
    return row


def _tasks(cfg: RunConfig):
    if cfg.command == "asymptotic":
        return _asymptotic_point, list(cfg.etas)
    if cfg.command == "finite":
        return _finite_point, list(cfg.etas)
    if cfg.command == "noise":
        tasks = [(eta, "zeta", z) for eta in cfg.etas for z in cfg.zetas]
        tasks += [(eta, "chi", c) for eta in cfg.etas for c in cfg.chis]
        return _noise_point, tasks
    if cfg.command == "benchmark":
        return _benchmark_point, list(cfg.m_values)
    raise ValueError(cfg.command)


def _call(args):
    fn, cfg, i, task = args
    return fn(cfg, i, task)


def run_sweep(cfg: RunConfig) -> list[dict]:
    """Evaluate every grid point; rows come back in grid order."""
    fn, tasks = _tasks(cfg)
    jobs = [(fn, cfg, i, t) for i, t in enumerate(tasks)]
    if cfg.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(_call, jobs))
    return [_call(j) for j in jobs]


def single_entropy(cfg: RunConfig) -> dict:
    params = CircuitParams.from_dict({**(cfg.params or {}), "eta": cfg.etas[0]})
    b = behavior(params)
    bd = h_cond_bound(apply_preprocessing(b, params.p), m=cfg.m, mode=cfg.mode, monomials=cfg.monomials, p=params.p)
    h_ab = h_a_given_b(apply_preprocessing(b, params.p))
    return {
        "eta": params.eta,
        "m": cfg.m,
        "mode": cfg.mode,
        "H_AE": bd.value,
        "H_AB": h_ab,
        "rate": bd.value - h_ab,
        "status": bd.solver_status,
        "duality_gap": bd.duality_gap,
        **_param_cells(params),
    }


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def write_outputs(cfg: RunConfig, rows: list[dict]) -> tuple[Path, Path]:
    text = rows_to_csv(rows)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    side = out.with_suffix(out.suffix + ".json")
    meta = {
        "config": asdict(cfg),
        "csv_sha256": hashlib.sha256(text.encode()).hexdigest(),
        "version": __version__,
        "rows": len(rows),
    }
    side.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    return out, side


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="diqkd", description=__doc__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="JSON document with RunConfig fields")
    ap.add_argument("--out", help="CSV path (a .json sidecar is written next to it)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--mode", choices=("full", "block", "split"))
    ap.add_argument("--m", type=int)
    ap.add_argument("--eta", type=float, nargs="+")
    ap.add_argument("--threads", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args) -> RunConfig:
    d = json.loads(args.config.read_text()) if args.config else {}
    d["command"] = args.command
    for key, attr in (("out", "out"), ("seed", "seed"), ("mode", "mode"), ("m", "m"), ("threads", "threads")):
        val = getattr(args, attr)
        if val is not None:
            d[key] = val
    if args.eta is not None:
        d["etas"] = args.eta
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = config_from_args(args)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = [single_entropy(cfg)] if cfg.command == "entropy" else run_sweep(cfg)
    out, side = write_outputs(cfg, rows)
    log.info("wrote %s and %s", out, side)
    print(rows_to_csv(rows), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
