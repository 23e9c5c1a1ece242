"""Command-line harness (``dash-bench``).

Subcommands: ``gen-data``, ``run``, ``ablate``, ``diagnose``,
``check-criteria``.  A config JSON (see ``bench.config_to_dict``) can be
partial; ``--scale`` selects the desk or paper preset as the base.  Exit
code 0 means no cell failed (``run``) or every evaluable criterion passed
(``check-criteria``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .storage import read_json


def _load_config(args) -> bench.BenchmarkConfig:
    overrides = {}
    if args.config:
        overrides = read_json(args.config)
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    scale = args.scale or overrides.get("scale") or "desk"
    overrides.pop("scale", None)
    if scale == "paper":
        base = bench.config_to_dict(bench.paper_config())
    else:
        base = bench.config_to_dict(bench.desk_config())
    _deep_update(base, overrides)
    base["scale"] = scale
    return bench.config_from_dict(base)


def _deep_update(base: dict, overrides: dict) -> None:
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dash-bench",
        description="Stable-attribution benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file (partial overrides allowed)")
        p.add_argument("--scale", choices=["paper", "desk"], default=None)
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--out", default="bench_out", help="output directory")
        p.add_argument("--workers", type=int, default=1)

    add_common(sub.add_parser("gen-data", help="write dataset + split manifests"))
    add_common(sub.add_parser("run", help="run the benchmark grid"))
    p_ablate = sub.add_parser("ablate", help="epsilon or population-size ablation")
    add_common(p_ablate)
    p_ablate.add_argument("--axis", choices=["epsilon", "population_size"],
                          default="epsilon")
    p_diag = sub.add_parser("diagnose", help="run the pipeline once, export diagnostics")
    add_common(p_diag)
    p_diag.add_argument("--rho", type=float, default=None)
    p_check = sub.add_parser("check-criteria", help="evaluate pre-specified criteria")
    p_check.add_argument("--report", required=True, help="path to report.json")
    p_check.add_argument("--ablation", help="path to ablation_epsilon.json")
    p_check.add_argument("--nonlinear-report", help="report.json of a nonlinear run")
    p_check.add_argument(
        "--real-report",
        action="append",
        default=[],
        metavar="LABEL=PATH",
        help="ingested-data report, e.g. breast_cancer=out/report.json",
    )

    args = parser.parse_args(argv)

    if args.command == "check-criteria":
        report = read_json(args.report)
        ablation = read_json(args.ablation) if args.ablation else None
        nonlinear = read_json(args.nonlinear_report) if args.nonlinear_report else None
        reals = {}
        for item in args.real_report:
            label, _, path = item.partition("=")
            reals[label] = read_json(path)
        criteria = bench.check_criteria(report, ablation, nonlinear, reals)
        for c in criteria:
            print(f"[{c['status']:>13}] criterion {c['id']:>2} {c['name']}: {c['detail']}")
        evaluable = [c for c in criteria if c["status"] != "not-evaluable"]
        failed = [c for c in evaluable if c["status"] != "pass"]
        print(
            f"{len(evaluable) - len(failed)}/{len(evaluable)} evaluable criteria pass "
            f"({len(criteria) - len(evaluable)} not evaluable)"
        )
        return 1 if failed else 0

    config = _load_config(args)
    out_dir = Path(args.out)

    if args.command == "gen-data":
        written = bench.generate_datasets(config, out_dir)
        print(f"wrote {len(written)} dataset manifests under {out_dir}")
        return 0

    if args.command == "run":
        report = bench.run_benchmark(config, out_dir, workers=args.workers)
        n_err = sum(
            1
            for methods in report["cells"].values()
            for reps in methods.values()
            for entry in reps.values()
            if entry.get("status") != "ok"
        )
        print(f"report written to {out_dir / 'report.json'}")
        for key, methods in report["aggregates"].items():
            for name, agg in methods.items():
                print(
                    f"  rho={key:>5} {name:<20} stability={_s(agg['stability'])}"
                    f" accuracy={_s(agg['accuracy_mean'])}"
                    f" equity={_s(agg['equity_mean'])} rmse={_s(agg['rmse_mean'])}"
                )
        if n_err:
            print(f"{n_err} cell entries failed or missing", file=sys.stderr)
        return 1 if n_err else 0

    if args.command == "ablate":
        if args.axis == "epsilon":
            result = bench.ablate_epsilon(config, out_dir)
        else:
            result = bench.ablate_population(config, out_dir)
        print(json.dumps(result["table"], indent=2, sort_keys=True))
        return 0

    if args.command == "diagnose":
        info = bench.diagnose(config, out_dir, rho=args.rho)
        print(
            f"diagnostics written to {out_dir} "
            f"(K_eff={info['k_eff']}, passing={info['models_passing']}, "
            f"row={info['highest_variance_row']})"
        )
        return 0

    return 2


def _s(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


if __name__ == "__main__":
    sys.exit(main())
