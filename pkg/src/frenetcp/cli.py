"""Command-line pipeline.

Subcommands: synth, calibrate, evaluate, fit-reliability, discriminate,
report. Every command is deterministic given its flags and seed; every
output file is written atomically (temp file then rename). CSV outputs are
merged by key across runs so methods and alphas can be accumulated into one
artifact directory.

Exit codes: 0 success, 2 configuration, 3 calibration infeasibility,
4 fit failure, 5 missing artifact.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import reliability
from .calibration import (
    CalibrationMethod,
    CalibrationResult,
    calibrate_scenario,
    read_calibration,
    write_calibration,
)
from .errors import (
    AlphaTooSmallForN,
    FitDiverged,
    FrenetCpError,
    InfeasibleLevel,
    InsufficientData,
    InsufficientPoints,
)
from .geometry import unproject
from .metrics import build_band, evaluate
from .records import (
    ScenarioClass,
    SplitConfig,
    group_by_scenario,
    load_records,
    split,
    write_records,
)
from .risk import BoundSource, RiskConfig, critical_point
from .synth import SynthConfig, generate

EXIT_CONFIG = 2
EXIT_CALIBRATION = 3
EXIT_FIT = 4
EXIT_MISSING = 5

METRICS_HEADER = ["scenario", "alpha", "method", "avg_area_size", "joint_coverage", "n_test"]
CRITICAL_HEADER = [
    "scenario",
    "alpha",
    "method",
    "r",
    "c_s",
    "c_d",
    "critical_t_s",
    "critical_t_d",
    "critical_t_joint",
]
CURVES_HEADER = ["scenario", "direction", "segment", "x", "y"]
RISK_HEADER = ["scenario", "alpha", "method", "t_index", "t_seconds", "risk"]
BANDS_HEADER = ["scenario", "alpha", "method", "record_id", "mode", "t_index", "corner", "x", "y"]

# (longitudinal, lateral) noise scale defaults per scenario, meters
DEFAULT_SCALES = {
    ScenarioClass.NORMAL_DRIVING: (0.30, 0.10),
    ScenarioClass.ROUNDABOUT: (0.40, 0.12),
    ScenarioClass.LANE_CHANGE: (0.50, 0.20),
    ScenarioClass.INTERSECTION: (0.90, 0.40),
}

_SCENARIO_BY_FLAG = {member.value.lower(): member for member in ScenarioClass}


def _scenario_flag(value: str) -> ScenarioClass:
    try:
        return _SCENARIO_BY_FLAG[value.lower()]
    except KeyError:
        allowed = ", ".join(sorted(_SCENARIO_BY_FLAG))
        raise argparse.ArgumentTypeError(
            f"unknown scenario {value!r}; allowed names: {allowed}"
        ) from None


def _method_flag(value: str) -> CalibrationMethod:
    try:
        return CalibrationMethod.parse(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _alpha_tag(alpha: float) -> str:
    return format(alpha, "g")


def _cell(value) -> str:
    if value is None:
        return ""
    return str(value)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _csv_text(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _read_csv_rows(path: Path, header: list[str]) -> list[list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        found = next(reader, None)
        if found != header:
            return []
        return [row for row in reader]


def _merge_csv(path: Path, header: list[str], new_rows: list[list[str]], n_key: int) -> None:
    """Keep one row per key (first n_key columns), latest write wins, rows
    sorted; existing rows with a stale header are discarded."""
    merged: dict[tuple, list[str]] = {}
    if path.exists():
        for row in _read_csv_rows(path, header):
            merged[tuple(row[:n_key])] = row
    for row in new_rows:
        merged[tuple(row[:n_key])] = row
    ordered = sorted(merged.values())
    _atomic_write_text(path, _csv_text(header, ordered))


def _split_config(args) -> SplitConfig:
    return SplitConfig(
        calib_fraction=args.calib_fraction, d1_fraction=args.d1_fraction, seed=args.seed
    )


def _alphas(args) -> list[float]:
    alphas = args.alpha if args.alpha else [0.2, 0.1, 0.05]
    for alpha in alphas:
        if not (0.0 < alpha < 1.0):
            raise ValueError(f"alpha {alpha} outside (0, 1)")
    return alphas


def _load_filtered(args):
    if args.input is None:
        raise ValueError("--input is required for this command")
    records = load_records(args.input)
    if args.scenario is not None:
        records = [r for r in records if r.scenario is args.scenario]
    if not records:
        raise ValueError("no records to process after filtering")
    return records


def _method_or_default(args) -> CalibrationMethod:
    return args.method if args.method is not None else CalibrationMethod.COPULA_SHARED


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _calibration_docs(outdir: Path, args=None) -> list[Path]:
    docs = sorted(outdir.glob("calibration_*.json"))
    if args is not None:
        if args.scenario is not None:
            docs = [p for p in docs if p.name.split("_")[1] == args.scenario.value]
        if args.alpha:
            tags = {_alpha_tag(a) for a in args.alpha}
            docs = [p for p in docs if p.name.split("_")[2] in tags]
        if getattr(args, "method", None) is not None:
            docs = [p for p in docs if p.stem.split("_")[3] == args.method.value]
    if not docs:
        raise FileNotFoundError(
            f"no calibration documents (calibration_*.json) under {outdir}"
        )
    return docs


def cmd_synth(args) -> int:
    scale_s, scale_d = DEFAULT_SCALES[args.scenario]
    cfg = SynthConfig(
        scenario=args.scenario,
        n_records=args.n,
        n_modes=args.modes,
        horizon=args.horizon,
        dt=args.dt,
        noise_scale_s=scale_s if args.scale_s is None else args.scale_s,
        noise_scale_d=scale_d if args.scale_d is None else args.scale_d,
        error_growth=args.growth,
        dependence=args.dependence,
        rho=args.rho,
        wrong_intent_offset=args.wrong_intent_offset,
        seed=args.seed,
    )
    records = generate(cfg)
    out = Path(args.out)
    if out.parent != Path("."):
        out.parent.mkdir(parents=True, exist_ok=True)
    write_records(out, records)
    print(f"wrote {len(records)} records to {out}")
    return 0


def cmd_calibrate(args) -> int:
    records = _load_filtered(args)
    d1, d2, test = split(records, _split_config(args))
    outdir = _outdir(args)
    method = _method_or_default(args)
    rows = []
    for alpha in _alphas(args):
        results = calibrate_scenario(d1, d2, alpha, method)
        for scenario in sorted(results, key=lambda s: s.value):
            cal = results[scenario]
            name = f"calibration_{scenario.value}_{_alpha_tag(alpha)}_{method.value}.json"
            write_calibration(outdir / name, cal)
            test_cls = [r for r in test if r.scenario is scenario]
            report = evaluate(test_cls, cal)
            rows.append(
                [
                    scenario.value,
                    _alpha_tag(alpha),
                    method.value,
                    _cell(report.avg_area_size),
                    _cell(report.joint_coverage),
                    _cell(report.n_test),
                ]
            )
    _merge_csv(outdir / "metrics.csv", METRICS_HEADER, rows, n_key=3)
    print(f"wrote {len(rows)} calibration(s) and metrics rows to {outdir}")
    return 0


def cmd_evaluate(args) -> int:
    records = _load_filtered(args)
    outdir = _outdir(args)
    docs = _calibration_docs(outdir, args)
    if args.whole_file:
        test = records
    else:
        _, _, test = split(records, _split_config(args))
    rows = []
    for doc in docs:
        cal = read_calibration(doc)
        test_cls = [r for r in test if r.scenario is cal.scenario]
        report = evaluate(test_cls, cal)
        rows.append(
            [
                cal.scenario.value,
                _alpha_tag(cal.alpha),
                cal.method.value,
                _cell(report.avg_area_size),
                _cell(report.joint_coverage),
                _cell(report.n_test),
            ]
        )
    _merge_csv(outdir / "metrics.csv", METRICS_HEADER, rows, n_key=3)
    print(f"evaluated {len(rows)} calibration(s) into {outdir / 'metrics.csv'}")
    return 0


def cmd_fit_reliability(args) -> int:
    records = _load_filtered(args)
    d1, d2, _ = split(records, _split_config(args))
    outdir = _outdir(args)
    alpha = _alphas(args)[0]
    method = _method_or_default(args)
    calib = d1 + d2
    classes = sorted({r.scenario for r in calib}, key=lambda s: s.value)
    curve_rows = []
    n_models = 0
    for scenario in classes:
        doc = outdir / f"calibration_{scenario.value}_{_alpha_tag(alpha)}_{method.value}.json"
        if not doc.exists():
            raise FileNotFoundError(f"missing calibration document {doc}")
        cal = read_calibration(doc)
        profile = reliability.compute_deviation_profile(
            [r for r in calib if r.scenario is scenario]
        )
        for direction in ("s", "d"):
            models = reliability.fit_scenario_models(profile, cal, scenario, direction)
            for model in models:
                name = f"reliability_{scenario.value}_{direction}_{model.segment}.json"
                reliability.write_model(outdir / name, model)
                n_models += 1
                lo, hi = model.domain
                grid = np.linspace(lo, hi, args.curve_points)
                values = model.predict(grid)
                for xg, yg in zip(grid, values):
                    curve_rows.append(
                        [scenario.value, direction, model.segment, _cell(float(xg)), _cell(float(yg))]
                    )
    _merge_csv(outdir / "rm_curves.csv", CURVES_HEADER, curve_rows, n_key=4)
    print(f"fitted {n_models} reliability model(s) into {outdir}")
    return 0


def _rm_bounds_for(outdir: Path, cal, records) -> tuple[np.ndarray, np.ndarray]:
    """Per-step bounds predicted by the fitted reliability curves."""
    scenario = cal.scenario
    profile = reliability.compute_deviation_profile(
        [r for r in records if r.scenario is scenario]
    )
    bounds = {}
    for direction in ("s", "d"):
        mae = profile.mae_s if direction == "s" else profile.mae_d
        if scenario is ScenarioClass.LANE_CHANGE:
            pairs = reliability.pair_training_data(profile, cal, direction)
            t_star = reliability.lane_change_changepoint(pairs)
            segments = [
                (reliability.SEGMENT_LC1, slice(0, t_star + 1)),
                (reliability.SEGMENT_LC2, slice(t_star + 1, None)),
            ]
        else:
            segments = [(reliability.SEGMENT_WHOLE, slice(None))]
        out = np.empty_like(mae)
        for segment, sl in segments:
            path = outdir / f"reliability_{scenario.value}_{direction}_{segment}.json"
            if not path.exists():
                raise FileNotFoundError(f"missing reliability model document {path}")
            model = reliability.read_model(path)
            out[sl] = np.maximum(model.predict(mae[sl]), 0.0)
        bounds[direction] = out
    return bounds["s"], bounds["d"]


def cmd_discriminate(args) -> int:
    outdir = _outdir(args)
    docs = _calibration_docs(outdir, args)
    source = BoundSource(args.bound_source)
    cfg = RiskConfig(
        c_s=args.c_s, c_d=args.c_d, threshold_r=args.risk_threshold, input_source=source
    )
    calib = None
    if source is BoundSource.RM_PREDICTED:
        if args.input is None:
            raise ValueError("--bound-source rm requires --input records")
        records = _load_filtered(args)
        d1, d2, _ = split(records, _split_config(args))
        calib = d1 + d2
    rows = []
    for doc in docs:
        cal = read_calibration(doc)
        rm_bounds = None
        if source is BoundSource.RM_PREDICTED:
            rm_bounds = _rm_bounds_for(outdir, cal, calib)
        report = critical_point(cal, cfg, rm_bounds=rm_bounds)
        rows.append(
            [
                cal.scenario.value,
                _alpha_tag(cal.alpha),
                cal.method.value,
                _cell(cfg.threshold_r),
                _cell(cfg.c_s),
                _cell(cfg.c_d),
                _cell(report.critical_t_s),
                _cell(report.critical_t_d),
                _cell(report.critical_t_joint),
            ]
        )
    _merge_csv(outdir / "critical_points.csv", CRITICAL_HEADER, rows, n_key=3)
    print(f"wrote {len(rows)} critical-point row(s) to {outdir / 'critical_points.csv'}")
    return 0


def _band_rows(outdir: Path, docs, records, cap: int) -> list[list[str]]:
    by_class = group_by_scenario(records)
    rows = []
    for doc in docs:
        cal = read_calibration(doc)
        members = by_class.get(cal.scenario, [])[:cap]
        for record in members:
            band = build_band(record.forecast, cal)
            route = record.route
            for k in range(band.n_modes):
                for t in range(band.horizon):
                    s_lo, s_hi, d_lo, d_hi = band.bounds(k, t)
                    s_lo = min(max(s_lo, 0.0), route.length)
                    s_hi = min(max(s_hi, 0.0), route.length)
                    corners = ((s_lo, d_lo), (s_hi, d_lo), (s_hi, d_hi), (s_lo, d_hi))
                    for corner, (s, d) in enumerate(corners):
                        x, y = unproject(route, (s, d))
                        rows.append(
                            [
                                cal.scenario.value,
                                _alpha_tag(cal.alpha),
                                cal.method.value,
                                record.id,
                                str(k),
                                str(t),
                                str(corner),
                                _cell(x),
                                _cell(y),
                            ]
                        )
    return rows


def cmd_report(args) -> int:
    outdir = _outdir(args)
    metrics_path = outdir / "metrics.csv"
    critical_path = outdir / "critical_points.csv"
    if not metrics_path.exists():
        raise FileNotFoundError(f"missing artifact {metrics_path}; run calibrate first")
    if not critical_path.exists():
        raise FileNotFoundError(f"missing artifact {critical_path}; run discriminate first")
    rm_docs = sorted(outdir.glob("reliability_*.json"))
    if not rm_docs:
        raise FileNotFoundError(
            f"missing reliability model documents (reliability_*.json) under {outdir}; "
            "run fit-reliability first"
        )

    metrics_rows = _read_csv_rows(metrics_path, METRICS_HEADER)
    critical_rows = _read_csv_rows(critical_path, CRITICAL_HEADER)
    critical_by_key = {tuple(row[:3]): row for row in critical_rows}

    rmse_by_key: dict[tuple[str, str], list[float]] = {}
    for doc in rm_docs:
        model = reliability.read_model(doc)
        key = (model.scenario.value, model.direction)
        rmse_by_key.setdefault(key, []).append(model.fit_rmse)

    summary_header = METRICS_HEADER + [
        "critical_t_s",
        "critical_t_d",
        "critical_t_joint",
        "rm_fit_rmse_s",
        "rm_fit_rmse_d",
    ]
    summary_rows = []
    for row in metrics_rows:
        crit = critical_by_key.get(tuple(row[:3]))
        crit_cells = crit[6:9] if crit else ["", "", ""]
        rmse_cells = []
        for direction in ("s", "d"):
            values = rmse_by_key.get((row[0], direction))
            rmse_cells.append(_cell(float(np.mean(values))) if values else "")
        summary_rows.append(row + crit_cells + rmse_cells)
    _atomic_write_text(
        outdir / "summary.csv", _csv_text(summary_header, sorted(summary_rows))
    )

    # per-figure data: joint risk series per calibration, band polygons
    docs = _calibration_docs(outdir, args)
    risk_rows = []
    for doc in docs:
        cal = read_calibration(doc)
        key = (cal.scenario.value, _alpha_tag(cal.alpha), cal.method.value)
        crit = critical_by_key.get(key)
        cfg = RiskConfig(
            c_s=float(crit[4]) if crit else 1.0,
            c_d=float(crit[5]) if crit else 1.0,
            threshold_r=float(crit[3]) if crit else 0.8,
        )
        report = critical_point(cal, cfg)
        for t, value in enumerate(report.risk_series):
            risk_rows.append(
                [*key, str(t), _cell(t * cal.dt), _cell(float(value))]
            )
    _atomic_write_text(
        outdir / "risk_series.csv", _csv_text(RISK_HEADER, risk_rows)
    )

    records = _load_filtered(args)
    _, _, test = split(records, _split_config(args))
    band_rows = _band_rows(outdir, docs, test, args.max_band_records)
    _atomic_write_text(outdir / "bands.csv", _csv_text(BANDS_HEADER, band_rows))
    print(
        f"wrote summary ({len(summary_rows)} rows), risk series and "
        f"{len(band_rows)} band corner rows to {outdir}"
    )
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--input", help="line-delimited record file")
    parser.add_argument("--out", default="out", help="artifact directory (or file for synth)")
    parser.add_argument(
        "--alpha",
        action="append",
        type=float,
        help="miscoverage level, repeatable (default 0.2 0.1 0.05)",
    )
    parser.add_argument(
        "--method",
        type=_method_flag,
        default=None,
        help="calibration method: copula or bonferroni (default copula; "
        "commands reading existing calibrations process all methods when unset)",
    )
    parser.add_argument("--seed", type=int, default=0, help="split / generation seed")
    parser.add_argument("--risk-threshold", type=float, default=0.8)
    parser.add_argument("--c-s", type=float, default=1.0, help="longitudinal risk sensitivity")
    parser.add_argument("--c-d", type=float, default=1.0, help="lateral risk sensitivity")
    parser.add_argument(
        "--scenario", type=_scenario_flag, default=None, help="restrict to one scenario class"
    )
    parser.add_argument("--calib-fraction", type=float, default=0.5)
    parser.add_argument("--d1-fraction", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frenetcp",
        description="Scenario-aware conformal calibration and reliability "
        "discrimination for trajectory forecasts",
    )
    parser.add_argument("--config", help="JSON file of flag defaults; flags override")
    sub = parser.add_subparsers(dest="command", required=True)
    # subparsers parse into a fresh namespace, so config-file defaults must be
    # installed on each of them; collect them as they are built
    parser.subcommand_parsers = []
    original_add_parser = sub.add_parser

    def tracked_add_parser(*args, **kwargs):
        p = original_add_parser(*args, **kwargs)
        parser.subcommand_parsers.append(p)
        return p

    sub.add_parser = tracked_add_parser

    p = sub.add_parser("synth", help="generate synthetic scenario records")
    _add_common(p)
    p.add_argument("--n", type=int, default=500, help="number of records")
    p.add_argument("--modes", type=int, default=6, help="forecast modes per record")
    p.add_argument("--horizon", type=int, default=80, help="future steps")
    p.add_argument("--dt", type=float, default=0.1, help="step size, seconds")
    p.add_argument("--scale-s", type=float, default=None, help="longitudinal noise scale, m")
    p.add_argument("--scale-d", type=float, default=None, help="lateral noise scale, m")
    p.add_argument("--growth", type=float, default=1.03, help="per-step error growth factor")
    p.add_argument(
        "--dependence",
        choices=["independent", "comonotone", "ar1"],
        default="ar1",
        help="cross-step noise dependence",
    )
    p.add_argument("--rho", type=float, default=0.6, help="ar1 correlation")
    p.add_argument(
        "--wrong-intent-offset",
        type=float,
        default=0.0,
        help="lateral intent-error ramp applied to all modes, m at horizon end",
    )
    p.set_defaults(func=cmd_synth, scenario_required=True, out="records.jsonl")

    p = sub.add_parser("calibrate", help="calibrate intervals and evaluate metrics")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="re-evaluate existing calibrations on records")
    _add_common(p)
    p.add_argument(
        "--whole-file",
        action="store_true",
        help="treat the whole input as the test set instead of re-splitting",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fit-reliability", help="fit deviation-to-bound reliability curves")
    _add_common(p)
    p.add_argument("--curve-points", type=int, default=100, help="curve sample grid size")
    p.set_defaults(func=cmd_fit_reliability)

    p = sub.add_parser("discriminate", help="compute critical points from calibrations")
    _add_common(p)
    p.add_argument(
        "--bound-source",
        choices=[s.value for s in BoundSource],
        default=BoundSource.CALIBRATED.value,
        help="width source: calibrated quantiles or reliability-model predictions",
    )
    p.set_defaults(func=cmd_discriminate)

    p = sub.add_parser("report", help="consolidate metrics, reliability and critical points")
    _add_common(p)
    p.add_argument(
        "--max-band-records",
        type=int,
        default=10,
        help="test records per calibration in the band polygon file",
    )
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config, encoding="utf-8") as fh:
                defaults = json.load(fh)
            if not isinstance(defaults, dict):
                raise ValueError("config file must hold a JSON object")
            if "scenario" in defaults:
                defaults["scenario"] = _scenario_flag(str(defaults["scenario"]))
            if "method" in defaults:
                defaults["method"] = _method_flag(str(defaults["method"]))
        except (OSError, ValueError, argparse.ArgumentTypeError) as exc:
            print(f"error: bad config file: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if "alpha" in defaults and any(
            a == "--alpha" or a.startswith("--alpha=") for a in argv
        ):
            defaults.pop("alpha")  # explicit flags replace, not extend, the list
        parser.set_defaults(**defaults)
        for sub_parser in parser.subcommand_parsers:
            sub_parser.set_defaults(**defaults)

    args = parser.parse_args(argv)
    if getattr(args, "scenario_required", False) and args.scenario is None:
        allowed = ", ".join(sorted(_SCENARIO_BY_FLAG))
        print(f"error: synth requires --scenario (one of: {allowed})", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return args.func(args)
    except (AlphaTooSmallForN, InfeasibleLevel, InsufficientData) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (FitDiverged, InsufficientPoints) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FrenetCpError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
