"""Command line front end: solve, bench, synth and verify.

Settings come from an optional INI file (sections ``[run]`` and ``[sdc]``)
and are overridden by command line flags.  Replication ``r`` uses seed
``base_seed + r``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .markowitz import MarketData, ModelVariant, build_problem, load_returns_csv, market_from_returns, \
    synthesize_market
from .sdc import CONVERGED, SDCConfig, run_direct_phm, run_sdc

VARIANTS = ("A", "B", "C", "D")

# every JSON report carries exactly these keys
REPORT_FIELDS = {
    "variant": str, "n": int, "K": int, "seed": int, "status": str,
    "nnz": int, "kkt_inf": float, "kkt_rel": float, "soc": float, "feas_error": float,
    "objective": float, "rho_final": float, "support_tol": float,
    "phm_iterations": int, "outer_iterations": int,
    "cpu_seconds": float, "wall_seconds": float,
    "x": list, "trajectory": dict, "config": dict,
}
TRAJECTORY_FIELDS = ("time_s", "objective", "nnz", "feas_error")
TIMING_FIELDS = ("cpu_seconds", "wall_seconds")
SUMMARY_METRICS = ("nnz", "kkt_inf", "kkt_rel", "soc", "feas_error", "objective", "phm_iterations")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    variants: list = field(default_factory=lambda: ["A"])
    n: int = 20
    K: list = field(default_factory=lambda: [100])
    replications: int = 1
    base_seed: int = 0
    out: str = "out"
    data_csv: Optional[str] = None
    market: Optional[str] = None
    sdc: dict = field(default_factory=dict)

    def validate(self):
        bad = [v for v in self.variants if v not in VARIANTS]
        if not self.variants or bad:
            raise ConfigError(f"variants must be a non-empty subset of {VARIANTS}, got {self.variants}")
        if self.n < 2:
            raise ConfigError("n must be at least 2")
        if not self.K or min(self.K) < 1:
            raise ConfigError("K must be at least 1")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        try:
            self.sdc_config()
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err
        return self

    def sdc_config(self) -> SDCConfig:
        return SDCConfig(**self.sdc)

    def seeds(self):
        return [self.base_seed + r for r in range(self.replications)]


# ---------------------------------------------------------------------------
# configuration


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def _list(text, conv=str):
    return [conv(s.strip()) for s in str(text).split(",") if s.strip()]


_SDC_TYPES = {f.name: f.type for f in fields(SDCConfig)}


def _sdc_value(key, text):
    kind = _SDC_TYPES[key]
    if "bool" in str(kind):
        return _bool(text)
    if "int" in str(kind):
        return int(text)
    return float(text)


def load_config(path) -> dict:
    """Read an INI file into flat run settings plus an ``sdc`` dict."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    out = {"sdc": {}}
    if cp.has_section("run"):
        r = cp["run"]
        for key in ("variants", "variant"):
            if key in r:
                out["variants"] = _list(r[key], str.upper)
        if "K" in r:
            out["K"] = _list(r["K"], int)
        for key in ("n", "replications", "base_seed"):
            if key in r:
                out[key] = int(r[key])
        for key in ("out", "data_csv", "market"):
            if key in r:
                out[key] = r[key]
    if cp.has_section("sdc"):
        for key, val in cp["sdc"].items():
            if key not in _SDC_TYPES:
                raise ConfigError(f"unknown sdc setting {key}")
            out["sdc"][key] = _sdc_value(key, val)
    return out


def config_from_args(args) -> RunConfig:
    base = load_config(args.config) if getattr(args, "config", None) else {"sdc": {}}
    sdc = dict(base.pop("sdc"))
    cfg = RunConfig(**base)
    if args.variants:
        cfg.variants = _list(args.variants, str.upper)
    if args.n is not None:
        cfg.n = args.n
    if args.K is not None:
        cfg.K = _list(args.K, int)
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.replications is not None:
        cfg.replications = args.replications
    if args.out is not None:
        cfg.out = args.out
    if args.data_csv is not None:
        cfg.data_csv = args.data_csv
    if args.market is not None:
        cfg.market = args.market
    flag_map = {"rho0": "rho0", "rho_decay": "rho_decay", "rho_floor": "rho_floor", "sigma": "sigma",
                "warm_start": "warm_start", "obj_tol": "obj_tol", "phm_budget": "phm_budget"}
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            sdc[key] = val
    if args.tau is not None:
        sdc["tau1"] = sdc["tau2"] = args.tau
    if args.eta is not None:
        sdc["eta1"] = sdc["eta2"] = sdc["eta3"] = args.eta
    cfg.sdc = sdc
    return cfg.validate()


# ---------------------------------------------------------------------------
# running


def make_market(cfg: RunConfig, K, seed) -> MarketData:
    if cfg.market:
        return MarketData.load(cfg.market)
    if cfg.data_csv:
        return market_from_returns(load_returns_csv(cfg.data_csv), K, seed)
    return synthesize_market(cfg.n, K, seed)


def support_tolerance(data: MarketData, sdc: SDCConfig):
    """One cardinality cut for every variant: the l0 keep threshold at the rho floor."""
    return float(math.sqrt(2.0 * data.gamma * sdc.rho_floor))


def solve_one(data: MarketData, label: str, sdc: SDCConfig, seed: int, log=None) -> dict:
    """Solve one (variant, market) pair and return the report dict plus the raw trace rows."""
    variant = ModelVariant.named(label)
    prob = build_problem(data, variant)
    tol = support_tolerance(data, sdc)
    runner = run_sdc if variant.include_l0 else run_direct_phm
    rep = runner(prob, sdc, support_tol=tol, log=log)
    m = rep.metrics
    rows = rep.trace.rows
    report = {
        "variant": label, "n": int(data.n), "K": int(data.K), "seed": int(seed), "status": rep.status,
        "nnz": int(m["nnz"]), "kkt_inf": float(m["kkt_inf"]), "kkt_rel": float(m["kkt_rel"]),
        "soc": float(m.get("soc", float("nan"))), "feas_error": float(m["feas_error"]),
        "objective": float(m["objective"]), "rho_final": float(rep.rho_final), "support_tol": tol,
        "phm_iterations": int(rep.phm_iterations), "outer_iterations": int(rep.outer_iterations),
        "cpu_seconds": float(rep.cpu_seconds), "wall_seconds": float(rep.wall_seconds),
        "x": [float(v) for v in rep.point.x],
        "trajectory": {
            "time_s": [float(r["cpu_s"]) for r in rows],
            "objective": [float(r["objective"]) for r in rows],
            "nnz": [int(r["nnz"]) for r in rows],
            "feas_error": [float(r["feas_error"]) for r in rows],
        },
        "config": {k: v for k, v in asdict(sdc.resolved(data.K)).items()},
    }
    return report, rows


def validate_report(report: dict):
    """Raise ValueError unless the report matches REPORT_FIELDS."""
    missing = set(REPORT_FIELDS) - set(report)
    extra = set(report) - set(REPORT_FIELDS)
    if missing or extra:
        raise ValueError(f"report keys differ: missing {sorted(missing)}, extra {sorted(extra)}")
    for key, kind in REPORT_FIELDS.items():
        val = report[key]
        ok = isinstance(val, (int, float)) if kind is float else isinstance(val, kind)
        if not ok or isinstance(val, bool):
            raise ValueError(f"field {key} should be {kind.__name__}")
    traj = report["trajectory"]
    if set(traj) != set(TRAJECTORY_FIELDS) or len({len(v) for v in traj.values()}) != 1:
        raise ValueError("trajectory columns must be the four aligned series")


def _write_csv(path, rows, columns=None):
    columns = columns or list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in columns})


def write_outputs(out_dir: Path, report: dict, rows: list):
    stem = f"{report['variant']}_n{report['n']}_K{report['K']}_seed{report['seed']}"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{stem}.json", "w") as fh:
        json.dump(report, fh, indent=1)
    _write_csv(out_dir / f"{stem}_trace.csv", rows)
    traj = report["trajectory"]
    plot = [dict(zip(TRAJECTORY_FIELDS, vals)) for vals in zip(*(traj[k] for k in TRAJECTORY_FIELDS))]
    _write_csv(out_dir / f"{stem}_plot.csv", plot, list(TRAJECTORY_FIELDS))
    return stem


def _mean_std(values):
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        return float("nan"), float("nan")
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def summarize(reports: list, failures: dict = None) -> list:
    """Table-shaped rows: mean and sample stdev of each metric per (variant, K)."""
    failures = failures or {}
    cells = {}
    for r in reports:
        cells.setdefault((r["variant"], r["K"]), []).append(r)
    for key in failures:
        cells.setdefault(key, [])
    out = []
    for (variant, K) in sorted(cells):
        runs = cells[(variant, K)]
        row = {"variant": variant, "K": K, "runs": len(runs), "failed": failures.get((variant, K), 0),
               "converged": sum(r["status"] == CONVERGED for r in runs)}
        for m in SUMMARY_METRICS:
            row[f"{m}_mean"], row[f"{m}_std"] = _mean_std([r[m] for r in runs])
        out.append(row)
    return out


def run_grid(cfg: RunConfig, log=print):
    """All (K, variant, replication) cells; returns reports, trace rows and failures."""
    sdc = cfg.sdc_config()
    reports, traces, failures, errors = [], {}, {}, []
    for K in cfg.K:
        for seed in cfg.seeds():
            data = make_market(cfg, K, seed)
            for label in cfg.variants:
                try:
                    rep, rows = solve_one(data, label, sdc, seed)
                except Exception as err:       # recorded per cell, the grid keeps going
                    failures[(label, K)] = failures.get((label, K), 0) + 1
                    errors.append(f"{label} K={K} seed={seed}: {type(err).__name__}: {err}")
                    log(errors[-1])
                    continue
                reports.append(rep)
                # a market file fixes K, which may differ from the configured value
                traces[(label, rep["K"], seed)] = rows
                log(f"{label} K={rep['K']} seed={seed}: {rep['status']} nnz={rep['nnz']} "
                    f"kkt_rel={rep['kkt_rel']:.2e} soc={rep['soc']:.3f} phm={rep['phm_iterations']} "
                    f"cpu={rep['cpu_seconds']:.1f}s")
    return reports, traces, failures, errors


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig) -> int:
    reports, traces, failures, errors = run_grid(cfg)
    out = Path(cfg.out)
    for rep in reports:
        write_outputs(out, rep, traces[(rep["variant"], rep["K"], rep["seed"])])
    bad = [r for r in reports if r["status"] != CONVERGED]
    for r in bad:
        print(f"not converged: {r['variant']} K={r['K']} seed={r['seed']} ({r['status']})", file=sys.stderr)
    for e in errors:
        print(f"failed: {e}", file=sys.stderr)
    print(f"wrote {len(reports)} reports to {out}")
    return 0 if not bad and not errors else 1


def cmd_bench(cfg: RunConfig) -> int:
    reports, traces, failures, errors = run_grid(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    run_cols = ["variant", "K", "seed", "status"] + list(SUMMARY_METRICS) + ["outer_iterations", "rho_final"]
    _write_csv(out / "bench_runs.csv", reports, run_cols)
    summary = summarize(reports, failures)
    _write_csv(out / "bench_summary.csv", summary)
    timing = []
    for row in summary:
        cpu = [r["cpu_seconds"] for r in reports if (r["variant"], r["K"]) == (row["variant"], row["K"])]
        mean, std = _mean_std(cpu)
        timing.append({"variant": row["variant"], "K": row["K"], "cpu_mean": mean, "cpu_std": std})
    _write_csv(out / "bench_timing.csv", timing)
    for rep in reports:
        write_outputs(out / "reports", rep, traces[(rep["variant"], rep["K"], rep["seed"])])
    for row in summary:
        print(f"{row['variant']} K={row['K']}: nnz {row['nnz_mean']:.2f} ({row['nnz_std']:.2f})  "
              f"soc {row['soc_mean']:.3f}  kkt_rel {row['kkt_rel_mean']:.2e}  "
              f"phm {row['phm_iterations_mean']:.0f}  failed {row['failed']}")
    return 0 if not errors else 1


def cmd_synth(cfg: RunConfig) -> int:
    data = make_market(cfg, cfg.K[0], cfg.base_seed)
    path = Path(cfg.out)
    if path.suffix != ".json":
        path.mkdir(parents=True, exist_ok=True)
        path = path / f"market_n{data.n}_K{data.K}_seed{cfg.base_seed}.json"
    data.save(path)
    print(f"wrote {path}")
    return 0


def cmd_verify(corrupt_q2=False) -> int:
    from .verify import run_all
    results = run_all(corrupt_q2=corrupt_q2)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.passed}/{r.total}")
    return 0 if all(r.ok for r in results) else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="sdcphm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "bench", "synth"):
        p = sub.add_parser(name)
        p.add_argument("--variant", "--variants", dest="variants", help="comma separated subset of A,B,C,D")
        p.add_argument("--n", type=int)
        p.add_argument("--K", help="scenario count; bench accepts a comma separated list")
        p.add_argument("--seed", "--base-seed", dest="seed", type=int)
        p.add_argument("--replications", type=int)
        p.add_argument("--config", help="INI file with [run] and [sdc] sections")
        p.add_argument("--out")
        p.add_argument("--data-csv", help="returns CSV used for the first stage")
        p.add_argument("--market", help="MarketData JSON written by synth")
        p.add_argument("--rho0", type=float)
        p.add_argument("--rho-decay", type=float)
        p.add_argument("--rho-floor", type=float)
        p.add_argument("--obj-tol", type=float)
        p.add_argument("--phm-budget", type=int)
        p.add_argument("--tau", type=float, help="sets tau1 and tau2")
        p.add_argument("--eta", type=float, help="sets eta1, eta2 and eta3 (default K/5)")
        p.add_argument("--sigma", type=float)
        p.add_argument("--warm-start", type=_bool)
    v = sub.add_parser("verify")
    v.add_argument("--corrupt-q2", action="store_true", help=argparse.SUPPRESS)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args.corrupt_q2)
    try:
        cfg = config_from_args(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    return {"solve": cmd_solve, "bench": cmd_bench, "synth": cmd_synth}[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
