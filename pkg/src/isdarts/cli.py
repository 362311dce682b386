"""Command-line entry point.

Exit codes: 0 ok, 2 invalid config or input, 3 non-finite loss,
4 search-space fingerprint mismatch, 5 mask missing from the oracle table.
Set ISDARTS_LOG (DEBUG, INFO, WARNING, ...) to change log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import re
import sys
from dataclasses import replace
from typing import Optional

from .config import RunConfig, load_config
from .darts import run_darts, swap_experiment
from .datasets import synth_generate
from .errors import (ConfigError, FingerprintError, FormatError, NumericalError,
                     OracleLookupError, UsageError)
from .iim import read_iim_csv
from .oracle import OracleTable, build_oracle, rank_correlation, regret
from .search_space import Mask, comparison_subsets, enumerate_subnets
from .shrink import run_search

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FINGERPRINT, EXIT_LOOKUP = 0, 2, 3, 4, 5
LOG_ENV = "ISDARTS_LOG"

log = logging.getLogger("isdarts")


def _load_run_config(run_dir: str) -> RunConfig:
    path = os.path.join(run_dir, "config.json")
    if not os.path.exists(path):
        raise ConfigError(f"{run_dir} has no config.json; is it a run directory?")
    return load_config(path)


def _load_mask(path: str) -> tuple[Mask, str, str]:
    """(mask, fingerprint, mask id) from a mask JSON file."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read mask file {path}: {exc}") from None
    try:
        mask_id = "-".join("".join(str(int(b)) for b in g) for g in d["groups"])
        return Mask.from_dict(d), d.get("fingerprint", ""), mask_id
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"mask file {path} is malformed: {exc}") from None


def _load_table(path: str) -> OracleTable:
    try:
        return OracleTable.load(path)
    except (OSError, json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ConfigError(f"cannot read oracle table {path}: {exc}") from None


def cmd_search(config_path: str, seed: Optional[int] = None, out: Optional[str] = None) -> int:
    config = load_config(config_path)
    if seed is not None:
        config = replace(config, seed=seed)
    out_dir = out or config.out
    if config.method == "darts":
        result = run_darts(config, out_dir=out_dir)
    else:
        result = run_search(config, out_dir=out_dir)
    subsets = comparison_subsets(config.space)
    print(f"final_mask {result.final_mask.mask_id(subsets)}")
    print(f"run_dir {out_dir}")
    return EXIT_OK


def cmd_oracle(config_path: str, out: str) -> int:
    config = load_config(config_path)
    data = synth_generate(config.dataset)
    table = build_oracle(config.space, data, config.oracle_steps, seed=config.seed, hyper=config.hyper,
                         cap=config.oracle_cap, dtype=config.precision)
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    table.save(out)
    best = table.best()
    print(f"records {len(table)}")
    print(f"best {best} {table.accuracy(best):.4f}")
    return EXIT_OK


def cmd_eval(mask_path: str, oracle_path: str) -> int:
    _, fingerprint, mask_id = _load_mask(mask_path)
    table = _load_table(oracle_path)
    table.check_fingerprint(fingerprint)
    acc = table.accuracy(mask_id)
    print(f"mask {mask_id}")
    print(f"accuracy {acc:.4f}")
    print(f"regret {regret(mask_id, table):.4f}")
    return EXIT_OK


def _step_csvs(run_dir: str) -> list[tuple[int, str]]:
    found = []
    for path in glob.glob(os.path.join(run_dir, "iim_step_*.csv")):
        m = re.fullmatch(r"iim_step_(\d+)\.csv", os.path.basename(path))
        if m:
            found.append((int(m.group(1)), path))
    return sorted(found)


def importance_matrix(run_dir: str):
    """(steps, candidate labels, rows) from a run directory; None marks a discarded candidate."""
    config = _load_run_config(run_dir)
    cell = config.space.cell
    labels = [cell.slot_label(s) for s in range(cell.num_slots)]
    steps, rows = [], []
    for z, path in _step_csvs(run_dir):
        report = read_iim_csv(path, cell)
        steps.append(z)
        rows.append([report.values.get(s) for s in range(cell.num_slots)])
    if not steps:
        raise UsageError(f"{run_dir} contains no iim_step_*.csv files")
    return steps, labels, rows


def cmd_export_heatmap(run_dir: str, out: str, figure: Optional[str] = None) -> int:
    steps, labels, rows = importance_matrix(run_dir)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step"] + labels)
        for z, row in zip(steps, rows):
            w.writerow([z] + ["" if v is None else repr(float(v)) for v in row])
    if figure:
        from .plotting import importance_heatmap

        importance_heatmap(steps, labels, [[float("nan") if v is None else v for v in r] for r in rows], figure)
    print(f"steps {len(steps)} candidates {len(labels)}")
    return EXIT_OK


def compare_report(run_dir: str, table: OracleTable) -> tuple[dict, dict]:
    """Report dict plus plot data for one IS-DARTS run against the oracle."""
    config = _load_run_config(run_dir)
    spec = config.space
    table.check_fingerprint(spec.fingerprint())
    subsets = comparison_subsets(spec)
    is_mask, _, _ = _load_mask(os.path.join(run_dir, "final_mask.json"))
    steps = _step_csvs(run_dir)
    if not steps:
        raise UsageError(f"{run_dir} contains no iim_step_*.csv files")
    first = read_iim_csv(steps[0][1], spec.cell).values
    if len(first) != subsets.num_slots:
        raise UsageError("the first importance report does not cover every candidate")
    iim_scores = [first[s] for s in range(subsets.num_slots)]

    darts = run_darts(replace(config, method="darts"))
    alpha_scores = list(darts.alpha.slot_scores())

    masks = list(enumerate_subnets(subsets))

    def mask_scores(scores):
        return {m.mask_id(subsets): float(sum(scores[s] for s in m.active())) for m in masks}

    is_swap = swap_experiment(is_mask, iim_scores, subsets, table)
    d_swap = swap_experiment(darts.final_mask, alpha_scores, subsets, table)
    best = table.best()
    report = {
        "fingerprint": spec.fingerprint(),
        "seed": config.seed,
        "oracle_best": best,
        "oracle_best_accuracy": table.accuracy(best),
        "is_darts": {
            "mask": is_mask.mask_id(subsets),
            "accuracy": table.accuracy(is_mask, subsets),
            "regret": regret(is_mask, table, subsets),
            "tau_iim": rank_correlation(mask_scores(iim_scores), table),
            "swap_accuracies": is_swap.accuracies,
            "swap_violations": is_swap.violations,
        },
        "darts": {
            "mask": darts.final_mask.mask_id(subsets),
            "accuracy": table.accuracy(darts.final_mask, subsets),
            "regret": regret(darts.final_mask, table, subsets),
            "tau_alpha": rank_correlation(mask_scores(alpha_scores), table),
            "swap_accuracies": d_swap.accuracies,
            "swap_violations": d_swap.violations,
        },
    }
    return report, {"alpha_rows": darts.trajectory}


def cmd_compare(run_dir: str, oracle_path: str, report_path: Optional[str] = None,
                figures: Optional[str] = None) -> int:
    table = _load_table(oracle_path)
    report, extra = compare_report(run_dir, table)
    text = json.dumps(report, indent=2, sort_keys=True)
    print("--- report ---")
    print(text)
    print("--- end report ---")
    if report_path:
        with open(report_path, "w") as fh:
            fh.write(text + "\n")
    if figures:
        from .plotting import alpha_trajectories, importance_heatmap, swap_curves

        os.makedirs(figures, exist_ok=True)
        swap_curves({"IS-DARTS (importance)": report["is_darts"]["swap_accuracies"],
                     "DARTS (alpha)": report["darts"]["swap_accuracies"]},
                    os.path.join(figures, "swap.png"))
        alpha_trajectories(extra["alpha_rows"], os.path.join(figures, "alpha.png"))
        steps, labels, rows = importance_matrix(run_dir)
        importance_heatmap(steps, labels, [[float("nan") if v is None else v for v in r] for r in rows],
                           os.path.join(figures, "importance.png"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isdarts", description="Desk-scale architecture search lab.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run a search (is-darts, i-darts or darts)")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    o = sub.add_parser("oracle", help="train every subnet of a micro space")
    o.add_argument("--config", required=True)
    o.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="oracle regret of a mask file")
    e.add_argument("--mask", required=True)
    e.add_argument("--oracle", required=True)

    c = sub.add_parser("compare", help="IS-DARTS run vs first-order DARTS against the oracle")
    c.add_argument("--run", required=True)
    c.add_argument("--oracle", required=True)
    c.add_argument("--report", help="also write the JSON report here")
    c.add_argument("--figures", help="directory for PNG figures")

    h = sub.add_parser("export-heatmap", help="step x candidate importance matrix as CSV")
    h.add_argument("--run", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--figure", help="also render the matrix to this PNG")
    return p


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "search":
            return cmd_search(args.config, args.seed, args.out)
        if args.command == "oracle":
            return cmd_oracle(args.config, args.out)
        if args.command == "eval":
            return cmd_eval(args.mask, args.oracle)
        if args.command == "compare":
            return cmd_compare(args.run, args.oracle, args.report, args.figures)
        return cmd_export_heatmap(args.run, args.out, args.figure)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        where = f" at epoch {exc.epoch}" if exc.epoch is not None else ""
        print(f"error: non-finite value{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FingerprintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except OracleLookupError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_LOOKUP
    except (UsageError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
