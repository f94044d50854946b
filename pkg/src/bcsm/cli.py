"""Command-line interface: ``bcsm fit``, ``bcsm simulate`` and ``bcsm summarize``.

Exit codes are 0 (success), 2 (invalid input), 3 (numerical failure) and
4 (file system error).  Failures print a JSON error document to stderr and,
when an output directory is known, also write it to ``error.json`` there.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .config import PRESETS, RunConfig, load_config, preset
from .exceptions import BCSMError, NotPositiveDefiniteError, NumericalError, ValidationError
from .io import read_data_csv, read_json, read_traces, to_jsonable, write_data_csv, write_json, write_traces
from .layout import NestedLayout
from .simulation import FIT_PRESETS, SCENARIOS, generate, run_study, scenario, scenario_grid
from .survival import BCSMSurvivalRegressor, SurvivalData, summarize

__all__ = ["main", "build_parser", "cmd_fit", "cmd_simulate", "cmd_summarize"]

log = logging.getLogger("bcsm")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def worker_count():
    """Worker processes: ``BCSM_THREADS`` if set, else the available cores."""
    env = os.environ.get("BCSM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"BCSM_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValidationError("BCSM_THREADS must be >= 1")
        return n
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _run_config(args):
    if args.config:
        cfg = load_config(args.config)
        if args.preset:
            d = json.loads(Path(args.config).read_text())
            d.setdefault("preset", args.preset)
            cfg = RunConfig.from_dict(d)
    else:
        cfg = preset(args.preset) if args.preset else RunConfig()
    updates = {}
    if args.chains is not None:
        updates["chains"] = args.chains
    if args.seed is not None:
        updates["seed"] = args.seed
    return cfg.with_updates(**updates) if updates else cfg


def _summary_table(summary):
    rows = []
    for name, st in summary["parameters"].items():
        if name.startswith("gamma_"):
            continue
        rows.append({"parameter": name, "median": st["median"], "sd": st["trimmed_sd"],
                     "hpd_lo": st["hpd"][0], "hpd_hi": st["hpd"][1], "ess": st["ess"], "geweke_z": st["geweke_z"]})
    return pd.DataFrame(rows).set_index("parameter")


def _summarize_dir(chain_dir, level, scale):
    draws = read_traces(chain_dir)
    return draws, summarize(draws, level, scale=scale)


def cmd_fit(args):
    """Fit the survival model to a record CSV and write traces and summaries."""
    out = Path(args.out)
    cfg = _run_config(args)
    df = read_data_csv(args.data)
    data = SurvivalData.from_frame(df, cfg.exclude_after_death)
    if cfg.layout is not None:
        want = NestedLayout.from_dict(cfg.layout)
        if want != data.layout:
            raise ValidationError(f"config layout {cfg.layout} does not match the data layout "
                                  f"{data.layout.to_dict()}")
    est = BCSMSurvivalRegressor.from_config(cfg, n_jobs=worker_count())
    log.info("fitting %d records, %d groups, %d chains", data.n_records, data.n_sub.size, cfg.chains)
    est.fit(data)
    out.mkdir(parents=True, exist_ok=True)
    run_info = {
        "config": cfg.to_dict(), "layout": data.layout.to_dict(), "feature_names": data.feature_names,
        "n_burn": est.n_burn_, "violations": est.violations_,
    }
    write_traces(est.draws_, out, run_info)
    # summaries are computed from the written traces so that `summarize` reproduces them exactly
    draws, summary = _summarize_dir(out, args.hpd, cfg.incidence_scale)
    write_json(summary, out / "summary.json")
    pd.DataFrame(summary["incidence"]).to_csv(out / "incidence.csv", index=False)
    print(_summary_table(summary).to_string(float_format=lambda v: f"{v:.4f}"))
    return EXIT_OK


def cmd_summarize(args):
    """Summarize stored traces at a given HPD level."""
    chain_dir = Path(args.chains)
    info = read_json(chain_dir / "run.json") if (chain_dir / "run.json").exists() else {}
    scale = info.get("config", {}).get("incidence_scale", "sd")
    _, summary = _summarize_dir(chain_dir, args.hpd, scale)
    target = Path(args.out) if args.out else chain_dir / "summary.json"
    write_json(summary, target)
    print(_summary_table(summary).to_string(float_format=lambda v: f"{v:.4f}"))
    return EXIT_OK


def _scenario_specs(arg):
    if arg in SCENARIOS:
        return [scenario(arg)]
    return scenario_grid(read_json(arg))


def cmd_simulate(args):
    """Generate replicated data sets (and optionally fit them)."""
    out = Path(args.out)
    specs = _scenario_specs(args.scenario)
    overrides = {}
    if args.replications is not None:
        overrides["replications"] = args.replications
    if args.seed is not None:
        overrides["seed"] = args.seed
    specs = [s.__class__(**{**s.to_dict(), **overrides}) for s in specs]
    out.mkdir(parents=True, exist_ok=True)
    multi = len(specs) > 1
    tables = []
    for spec in specs:
        sub = out / f"tau2_{spec.tau2:g}" if multi else out
        sub.mkdir(parents=True, exist_ok=True)
        write_json(spec.to_dict(), sub / "scenario.json")
        offset = None
        if spec.baseline["kind"] == "calibrated":
            from .simulation import calibrate_baseline

            offset = calibrate_baseline(spec)
        for r in range(spec.replications):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, r]).spawn(2)[0])
            df, truth = generate(spec, rng, offset)
            rep = sub / f"rep_{r:03d}"
            rep.mkdir(exist_ok=True)
            write_data_csv(df, rep / "data.csv")
            truth = {k: v for k, v in truth.items() if k != "event_time"}
            write_json(truth, rep / "truth.json")
        if args.fit:
            cfg = load_config(args.config) if args.config else preset(FIT_PRESETS.get(spec.name, "study1"))
            est = BCSMSurvivalRegressor.from_config(cfg, n_jobs=1)
            params = {k: v for k, v in est.get_params().items() if k != "random_state"}
            res = run_study(spec, params, n_jobs=worker_count())
            write_json({"replications": res["replications"], "n_failed": res["n_failed"]}, sub / "study.json")
            if "table" in res:
                res["table"].to_csv(sub / "recovery.csv", float_format="%.6g")
                res.get("beta_table", res["table"]).to_csv(sub / "recovery_summary.csv", float_format="%.6g")
                t = res.get("beta_table", res["table"]).copy()
                t.insert(0, "tau2_true", spec.tau2)
                tables.append(t)
                print(f"tau2 = {spec.tau2:g}")
                print(t.to_string(float_format=lambda v: f"{v:.3f}"))
    if tables and multi:
        pd.concat(tables).to_csv(out / "recovery_summary.csv", float_format="%.6g")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="bcsm", description="Bayesian covariance structure models for "
                                "nested interval-censored event times.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the survival model to a record CSV")
    f.add_argument("--data", required=True, help="CSV with group_id,subject_id,event_type,left,right,x1..xp")
    f.add_argument("--config", help="JSON run configuration")
    f.add_argument("--preset", choices=sorted(PRESETS), help="named hyperparameter regime")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--chains", type=int, help="number of chains")
    f.add_argument("--seed", type=int, help="random seed")
    f.add_argument("--hpd", type=float, default=0.95, help="HPD level of the summary (default 0.95)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="generate replicated data sets")
    s.add_argument("--scenario", required=True,
                   help=f"scenario JSON file or preset name ({', '.join(sorted(SCENARIOS))})")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--replications", type=int, help="override the number of replications")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--fit", action="store_true", help="also fit every replication and write recovery tables")
    s.add_argument("--config", help="JSON run configuration for --fit")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("summarize", help="summarize stored chains")
    m.add_argument("--chains", required=True, help="directory holding chain_*.csv")
    m.add_argument("--hpd", type=float, default=0.95, help="HPD level (default 0.95)")
    m.add_argument("--out", help="summary JSON path (default <chains>/summary.json)")
    m.set_defaults(func=cmd_summarize)
    return p


def _exit_code(exc):
    if isinstance(exc, (NumericalError, NotPositiveDefiniteError, FloatingPointError, np.linalg.LinAlgError)):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_VALIDATION


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BCSMError, ValueError, OSError, FloatingPointError, np.linalg.LinAlgError) as exc:
        code = _exit_code(exc)
        doc = exc.to_dict() if hasattr(exc, "to_dict") else {"error": type(exc).__name__, "message": str(exc)}
        doc["exit_code"] = code
        text = json.dumps(to_jsonable(doc), sort_keys=True)
        print(text, file=sys.stderr)
        out = getattr(args, "out", None)
        if out and code != EXIT_IO:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                (Path(out) / "error.json").write_text(text + "\n")
            except OSError:
                pass
        return code


if __name__ == "__main__":
    sys.exit(main())
