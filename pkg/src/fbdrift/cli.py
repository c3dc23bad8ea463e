"""Command-line entry point.

    fbdrift run --config cfg.json [--seed N] [--out DIR] [--workers K]
    fbdrift verify --suite fast|full [--seed N] [--out DIR] [--workers K]
    fbdrift plotdata --records records.jsonl --view NAME [--out DIR]

Each run lands in its own directory (config copy, records.jsonl,
tables/*.csv); exit status 0 on success, 2 on validation errors, 3 on
runtime errors (with a structured error report).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from . import config as cfgmod
from . import experiments
from .errors import DriftLabError
from .records import write_csv, write_jsonl, read_jsonl

PLOT_VIEWS = ("prop2i", "prop1", "criticality", "converge")


def _cmd_run(args) -> int:
    try:
        doc = cfgmod.load_config(args.config)
    except Exception as exc:
        print(f"error: cannot parse config: {exc}", file=sys.stderr)
        return 2
    problems = cfgmod.validate(doc)
    if problems:
        for p in problems:
            print(f"invalid config field -- {p}", file=sys.stderr)
        return 2
    if args.seed is not None:
        doc["seed"] = args.seed
    seed = int(doc.get("seed", 0))
    digest = cfgmod.config_digest(doc)
    exp_id = f"{doc['experiment']}-{digest[:12]}"
    out_dir = os.path.join(args.out, exp_id)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    ctx = experiments.ExperimentContext(exp_id, digest, seed,
                                        workers=args.workers)
    try:
        records, tables = experiments.run_experiment(doc, ctx)
    except (DriftLabError, ValueError) as exc:
        report = {"experiment_id": exp_id, "error": type(exc).__name__,
                  "message": str(exc)}
        with open(os.path.join(out_dir, "error.json"), "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 3
    write_jsonl(os.path.join(out_dir, "records.jsonl"), records,
                include_volatile=True)
    for name, (header, rows) in tables.items():
        write_csv(os.path.join(out_dir, "tables", f"{name}.csv"), header, rows)
    print(f"{exp_id}: {len(records)} records -> {out_dir}")
    return 0


def _cmd_verify(args) -> int:
    from . import verify
    if args.suite not in ("fast", "full"):
        print(f"usage error: unknown suite {args.suite!r} (fast|full)",
              file=sys.stderr)
        return 2
    out_dir = os.path.join(args.out, f"verify-{args.suite}")
    ok = verify.run_suite(args.suite, args.seed if args.seed is not None else 0,
                          out_dir, workers=args.workers)
    print(("all criteria passed" if ok else "FAILURES present")
          + f"; records in {out_dir}")
    return 0 if ok else 1


def _view_rows(docs, view):
    if view == "prop2i":
        header = ["r", "t", "norm", "envelope"]
        k1 = {d["params"]["r"]: d["value"] for d in docs
              if d["metric"] == "prop2i.envelope_k1"}
        rows = []
        for d in docs:
            if d["metric"] == "prop2i.norm":
                r, t = d["params"]["r"], d["params"]["t"]
                env = k1.get(r)
                env_v = "" if env is None else env * t ** (1.0 / (2 * r))
                rows.append((r, t, d["value"], env_v))
        return header, sorted(rows)
    if view == "prop1":
        header = ["axis", "value", "u2_terminal", "fit"]
        rows = []
        slope = next((d["value"] for d in docs
                      if d["metric"] == "prop1.slope_in_length"), None)
        for d in docs:
            if d["metric"] == "prop1.u2_by_length":
                rows.append(("length", d["params"]["length"], d["value"],
                             "" if slope is None else slope))
            elif d["metric"] == "prop1.u2_by_n":
                rows.append(("n", d["params"]["n"], d["value"], ""))
        return header, sorted(rows)
    if view == "criticality":
        header = ["delta", "collapse_fraction", "stderr"]
        rows = [(d["params"]["delta"], d["value"], d.get("stderr", ""))
                for d in docs if d["metric"] == "criticality.collapse_fraction"]
        return header, sorted(rows)
    if view == "converge":
        header = ["m_lo", "m_hi", "median_sup_gap", "i1_ratio"]
        med = {(d["params"]["m_lo"], d["params"]["m_hi"]): d["value"]
               for d in docs if d["metric"] == "converge.median_sup_gap"}
        rat = {(d["params"]["m_lo"], d["params"]["m_hi"]): d["value"]
               for d in docs if d["metric"] == "converge.i1_ratio"}
        rows = [(k[0], k[1], med[k], rat.get(k, "")) for k in sorted(med)]
        return header, rows
    raise ValueError(view)


def _cmd_plotdata(args) -> int:
    if args.view not in PLOT_VIEWS:
        print(f"usage error: unknown view {args.view!r} "
              f"(expected one of {', '.join(PLOT_VIEWS)})", file=sys.stderr)
        return 2
    docs = read_jsonl(args.records)
    header, rows = _view_rows(docs, args.view)
    out_path = os.path.join(args.out, f"{args.view}.csv")
    write_csv(out_path, header, rows)
    print(f"{out_path}: {len(rows)} rows")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fbdrift",
        description="numerics lab for form-bounded SDE drifts")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config-driven experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default="results")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.set_defaults(fn=_cmd_run)

    p_ver = sub.add_parser("verify", help="run the acceptance battery")
    p_ver.add_argument("--suite", required=True)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--out", default="results")
    p_ver.add_argument("--workers", type=int, default=1)
    p_ver.set_defaults(fn=_cmd_verify)

    p_plot = sub.add_parser("plotdata", help="emit per-figure CSV columns")
    p_plot.add_argument("--records", required=True)
    p_plot.add_argument("--view", required=True)
    p_plot.add_argument("--out", default=".")
    p_plot.set_defaults(fn=_cmd_plotdata)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
