"""Command line front end: single runs and benchmark sweeps.

`multicap run` executes one scenario and prints metrics as JSON (exit 0 on
full coverage, 2 on incomplete, 1 on error). `multicap bench` sweeps
scenarios x variants x robot counts x seeds into a CSV. Maps are file paths
or `scene:<name>` references to the bundled fixtures.
"""

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Tuple

from .grid_map import MapFormatError, parse_map_text
from .render import render_svg
from .scenarios import scene_text
from .simulator import (
    PlannerVariant,
    SimConfig,
    Simulator,
    parse_start_cells,
    trace_to_jsonl,
)

CSV_COLUMNS = [
    "scenario",
    "variant",
    "robots",
    "seed",
    "path_length_m",
    "overlap_ratio",
    "coverage_time_ticks",
    "covered_fraction",
    "wall_ms",
    "error",
]


def load_map_arg(spec: str) -> str:
    if spec.startswith("scene:"):
        return scene_text(spec.split(":", 1)[1])
    with open(spec, "r", encoding="utf-8") as fh:
        return fh.read()


def _apply_flags(cfg: SimConfig, args: argparse.Namespace) -> SimConfig:
    if args.robots is not None:
        cfg.robots = args.robots
    if args.starts is not None:
        cfg.start_cells = parse_start_cells(args.starts)
    if args.variant is not None:
        cfg.variant = PlannerVariant.parse(args.variant)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.budget is not None:
        cfg.step_budget = args.budget
    if args.subarea_size_m is not None:
        cfg.subarea_size_m = args.subarea_size_m
    if args.cell_size_m is not None:
        cfg.cell_size_m = args.cell_size_m
    if args.sensor_range_m is not None:
        cfg.sensor_range_m = args.sensor_range_m
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    try:
        map_text = load_map_arg(args.map)
        cfg = SimConfig.from_text(open(args.config).read()) if args.config else SimConfig()
        cfg = _apply_flags(cfg, args)
        cfg.record_trace = True
        sim = Simulator.from_map_text(map_text, cfg)
        metrics, trace = sim.run()
    except (MapFormatError, ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    print(json.dumps(metrics.to_dict(), separators=(",", ":")))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write(trace_to_jsonl(trace))
    if args.svg:
        tiling, gt = parse_map_text(map_text)
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(render_svg(tiling, gt, trace))
    return 0 if metrics.complete else 2


# -- benchmark sweep ----------------------------------------------------------


def parse_bench_spec(text: str) -> dict:
    spec = {
        "scenarios": None,
        "robots": None,
        "variants": ["full"],
        "repetitions": 1,
        "seed_base": 0,
        "budget": None,
        "subarea_size_m": None,
        "sensor_range_m": None,
    }
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError("bench spec line %d is not 'key = value': %r" % (lineno, raw))
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "scenarios":
            spec["scenarios"] = [v.strip() for v in value.split(",") if v.strip()]
        elif key == "robots":
            spec["robots"] = [int(v) for v in value.split(",") if v.strip()]
        elif key == "variants":
            spec["variants"] = [v.strip() for v in value.split(",") if v.strip()]
        elif key == "repetitions":
            spec["repetitions"] = int(value)
        elif key == "seed_base":
            spec["seed_base"] = int(value)
        elif key == "budget":
            spec["budget"] = int(value)
        elif key == "subarea_size_m":
            spec["subarea_size_m"] = float(value)
        elif key == "sensor_range_m":
            spec["sensor_range_m"] = float(value)
        else:
            raise ValueError("unknown bench spec key %r" % key)
    if not spec["scenarios"]:
        raise ValueError("bench spec needs a scenarios list")
    if not spec["robots"]:
        raise ValueError("bench spec needs a robots list")
    if spec["repetitions"] < 1:
        raise ValueError("repetitions must be at least 1")
    for variant in spec["variants"]:
        PlannerVariant.parse(variant)
    return spec


def bench_jobs(spec: dict) -> List[dict]:
    jobs = []
    for scenario in spec["scenarios"]:
        map_text = load_map_arg(scenario)
        for variant in spec["variants"]:
            for robots in spec["robots"]:
                for rep in range(spec["repetitions"]):
                    jobs.append(
                        {
                            "scenario": scenario,
                            "map_text": map_text,
                            "variant": variant,
                            "robots": robots,
                            "seed": spec["seed_base"] + rep,
                            "budget": spec["budget"],
                            "subarea_size_m": spec["subarea_size_m"],
                            "sensor_range_m": spec["sensor_range_m"],
                        }
                    )
    return jobs


def run_bench_job(job: dict) -> Dict[str, object]:
    row = {
        "scenario": job["scenario"],
        "variant": job["variant"],
        "robots": job["robots"],
        "seed": job["seed"],
        "path_length_m": "",
        "overlap_ratio": "",
        "coverage_time_ticks": "",
        "covered_fraction": "",
        "wall_ms": "",
        "error": "",
    }
    try:
        cfg = SimConfig(
            robots=job["robots"],
            seed=job["seed"],
            variant=PlannerVariant.parse(job["variant"]),
            record_trace=False,
        )
        if job.get("budget"):
            cfg.step_budget = job["budget"]
        if job.get("subarea_size_m"):
            cfg.subarea_size_m = job["subarea_size_m"]
        if job.get("sensor_range_m"):
            cfg.sensor_range_m = job["sensor_range_m"]
        started = time.perf_counter()
        sim = Simulator.from_map_text(job["map_text"], cfg)
        metrics, _ = sim.run()
        wall_ms = (time.perf_counter() - started) * 1000.0
        row["path_length_m"] = "%.6f" % metrics.total_path_length_m
        row["overlap_ratio"] = "%.6f" % metrics.overlap_ratio
        row["coverage_time_ticks"] = str(metrics.coverage_time_ticks)
        row["covered_fraction"] = "%.6f" % metrics.covered_fraction
        row["wall_ms"] = "%.1f" % wall_ms
    except Exception as exc:  # sweep must continue past broken runs
        row["error"] = str(exc)
    return row


def _sorted_rows(rows: List[Dict[str, object]]) -> List[Dict[str, object]]:
    return sorted(rows, key=lambda r: (r["scenario"], r["variant"], r["robots"], r["seed"]))


def _print_summary(rows: List[Dict[str, object]]) -> None:
    groups: Dict[Tuple, List[Dict[str, object]]] = {}
    for row in rows:
        if row["error"]:
            continue
        groups.setdefault((row["scenario"], row["variant"], row["robots"]), []).append(row)
    for key in sorted(groups):
        metrics = groups[key]
        def stats(field: str) -> Tuple[float, float, float]:
            values = [float(r[field]) for r in metrics]
            return sum(values) / len(values), min(values), max(values)
        path = stats("path_length_m")
        overlap = stats("overlap_ratio")
        ticks = stats("coverage_time_ticks")
        print(
            "%s %s robots=%s runs=%d | path_m mean=%.1f [%.1f, %.1f] | "
            "overlap mean=%.3f [%.3f, %.3f] | ticks mean=%.0f [%.0f, %.0f]"
            % ((key[0], key[1], key[2], len(metrics)) + path + overlap + ticks)
        )


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = parse_bench_spec(fh.read())
        jobs = bench_jobs(spec)
    except (ValueError, OSError, MapFormatError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    workers = int(os.environ.get("MULTICAP_THREADS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_bench_job, jobs))
    else:
        rows = [run_bench_job(job) for job in jobs]
    rows = _sorted_rows(rows)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print("wrote %d rows to %s" % (len(rows), args.out))
    _print_summary(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multicap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and print metrics JSON")
    run_p.add_argument("--map", required=True, help="map file path or scene:<name>")
    run_p.add_argument("--config", help="key = value config file")
    run_p.add_argument("--robots", type=int)
    run_p.add_argument("--starts", help="start cells as r,c;r,c;...")
    run_p.add_argument("--variant", choices=[v.value for v in PlannerVariant])
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--budget", type=int)
    run_p.add_argument("--subarea-size-m", dest="subarea_size_m", type=float)
    run_p.add_argument("--cell-size-m", dest="cell_size_m", type=float)
    run_p.add_argument("--sensor-range-m", dest="sensor_range_m", type=float)
    run_p.add_argument("--svg", help="write a trajectory render here")
    run_p.add_argument("--trace", help="write the JSONL tick trace here")
    run_p.set_defaults(func=cmd_run)

    bench_p = sub.add_parser("bench", help="run a benchmark sweep into a CSV")
    bench_p.add_argument("--spec", required=True, help="bench spec file")
    bench_p.add_argument("--out", default="results.csv", help="output CSV path")
    bench_p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
