"""Batch tool: ingest CSV records, separate frequencies, identify channels, write reports.

Verbs::

    freqsep scan      DATA.csv [--channels a,b]          detected lines per channel
    freqsep identify  DATA.csv --inputs x1,x2 --outputs y full pipeline
    freqsep simulate  (--plant PLANT.json | --scenario NAME)
    freqsep selftest  NAME [--seed N]

A ``--config`` JSON file overrides the corresponding flags. The output
directory comes from ``--out``, else ``$FREQSEP_OUTPUT_DIR``, else ``./freqsep-out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _accel
from .freqset import FORMAT_VERSION, FrequencySet, set_intersect, write_sets_json
from .ident import IdentificationResult, IdentifyConfig, filter_record, identify_mimo
from .plantsim import (
    SCENARIOS,
    load_plant_config,
    plant_config_to_obj,
    scenario,
    simulate,
    write_realization_csv,
)
from .signals import SampledRecord
from .spectrum import PeakParams, coincidence_tolerance, detect_frequencies, scan_spectrum

OUTPUT_ENV = "FREQSEP_OUTPUT_DIR"
MAG_TOL = 0.02
PHASE_TOL_DEG = 2.0
RMS_TOL = 0.05


class IngestError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = ""
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    sample_period: float | None = None
    band: tuple | None = None
    threshold_mode: str = "relative"
    threshold_value: float = 0.1
    min_separation: float | None = None
    refine: bool = True
    delta: float | None = None
    delta_omega: float | None = None
    guard: float = 1e-3
    decorrelation: str = "coupling"
    fits: dict = field(default_factory=dict)  # (input, output) -> (n, m, astatism)
    output_dir: str | None = None
    timestamp: bool = False

    def validate(self) -> None:
        if not self.inputs or not self.outputs:
            raise ValueError("both input and output channel lists must be non-empty")
        overlap = set(self.inputs) & set(self.outputs)
        if overlap:
            raise ValueError(f"channels listed as both input and output: {sorted(overlap)}")
        if self.band is not None and not 0 <= self.band[0] < self.band[1]:
            raise ValueError(f"invalid band {self.band}")

    def peak_params(self) -> PeakParams:
        return PeakParams(self.threshold_mode, self.threshold_value, self.min_separation, self.refine)

    def identify_config(self) -> IdentifyConfig:
        return IdentifyConfig(
            band=None if self.band is None else tuple(self.band),
            peak=self.peak_params(),
            delta=self.delta,
            delta_omega=self.delta_omega,
            guard=self.guard,
            decorrelation=self.decorrelation,
            fits=dict(self.fits),
        )

    def apply_file(self, path) -> "RunConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        updates = {}
        for key in ("data", "sample_period", "threshold_mode", "threshold_value", "min_separation",
                    "refine", "delta", "delta_omega", "guard", "decorrelation", "output_dir"):
            if key in doc:
                updates[key] = doc[key]
        for key in ("inputs", "outputs"):
            if key in doc:
                updates[key] = list(doc[key])
        if "band" in doc:
            updates["band"] = None if doc["band"] is None else tuple(doc["band"])
        if "fits" in doc:
            updates["fits"] = {
                (f["input"], f["output"]): (int(f["n"]), int(f["m"]), int(f.get("astatism", 0))) for f in doc["fits"]
            }
        return replace(self, **updates)


# --- ingestion ---------------------------------------------------------------

def read_csv_table(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise IngestError(f"{path}: duplicate column names in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise IngestError(f"{path}: row {lineno}, column {col!r}: not a number: {cell!r}") from None
            rows.append(values)
    if not rows:
        raise IngestError(f"{path}: no data rows")
    return header, np.array(rows, dtype=np.float64)


def ingest(path, inputs: Sequence[str], outputs: Sequence[str], sample_period: float | None = None):
    """One :class:`SampledRecord` per requested channel, checked for uniform sampling."""
    header, table = read_csv_table(path)
    start = 0.0
    dt = sample_period
    if header[0].lower() == "t":
        t = table[:, 0]
        if t.size < 2:
            raise IngestError(f"{path}: need at least two rows")
        if dt is None:
            dt = (t[-1] - t[0]) / (t.size - 1)
        if not dt > 0:
            raise IngestError(f"{path}: time column is not increasing")
        jitter = np.max(np.abs(t - (t[0] + dt * np.arange(t.size))))
        if jitter >= 1e-6 * dt:
            raise IngestError(f"{path}: non-uniform sampling, timestamp jitter {jitter:.3g} s (dt {dt:.6g} s)")
        start = float(t[0])
    elif dt is None:
        raise IngestError(f"{path}: no 't' column; a sample period must be given")
    columns = {name: k for k, name in enumerate(header)}

    def pick(names):
        out = []
        for name in names:
            if name not in columns or (name.lower() == "t" and columns[name] == 0):
                raise IngestError(f"{path}: channel {name!r} not in header {header}")
            out.append(SampledRecord(table[:, columns[name]], dt, start, name))
        return out

    return pick(inputs), pick(outputs)


# --- report writing ----------------------------------------------------------

def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8", newline="\n")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _channel_name(q: str, p: str) -> str:
    return f"{q}__{p}"


def resolve_output_dir(flag: str | None, config_value: str | None = None) -> Path:
    return Path(config_value or flag or os.environ.get(OUTPUT_ENV) or "freqsep-out")


@dataclass
class RunOutcome:
    exit_code: int
    summary: dict
    result: IdentificationResult | None
    inputs: list
    outputs: list
    out_dir: Path


def write_pipeline_reports(out: Path, result: IdentificationResult, inputs, outputs, timestamp=False) -> dict:
    records = {r.channel_id: r for r in (*inputs, *outputs)}
    for label, scan in result.scans.items():
        _write(out / "scans" / f"{label}.csv", scan.to_csv())
    for label, s in result.secondary.items():
        s.write_csv(out / "secondary" / f"{label}.csv")
    write_sets_json(out / "secondary.json", list(result.secondary.values()), stage="secondary")
    for label, s in result.tertiary.items():
        s.write_csv(out / "tertiary" / f"{label}.csv")
    result.coupling.write_csv(out / "tertiary" / "coupling.csv")
    write_sets_json(out / "tertiary.json", [*result.tertiary.values(), result.coupling], stage="tertiary")

    traces = []
    for (q, p), table in result.quaternary.items():
        name = _channel_name(q, p)
        table.to_set(f"{q}->{p}").write_csv(out / "quaternary" / f"{name}.csv")
        for w_in, w_out, nu in table.sources():
            traces.append({"input": q, "output": p, "nu": nu, "omega_input": w_in, "omega_output": w_out})
    _dump(out / "quaternary.json", {"format_version": FORMAT_VERSION, "matches": traces})

    for est in result.estimates:
        q, p = est.input_label, est.output_label
        name = _channel_name(q, p)
        _write(out / "estimates" / f"{name}.json", est.to_json())
        _write(out / "estimates" / f"{name}.csv", est.to_csv())
        x, y = records[q], records[p]
        xf = filter_record(x, est.nus)
        yf = filter_record(y, est.nus)
        rows = ["t,input,input_filtered,output,output_filtered\n"]
        for k, t in enumerate(x.times.tolist()):
            rows.append(f"{t!r},{float(x.samples[k])!r},{float(xf[k])!r},{float(y.samples[k])!r},{float(yf[k])!r}\n")
        _write(out / "filtered" / f"{name}.csv", "".join(rows))

    missing = [p.channel_id for p in outputs if not any(e.output_label == p.channel_id for e in result.estimates)]
    counts = result.counts()
    summary = {
        "format_version": FORMAT_VERSION,
        "backend": _accel.BACKEND,
        "inputs": [r.channel_id for r in inputs],
        "outputs": [r.channel_id for r in outputs],
        "counts": {
            "detected_input_lines": {k: counts["secondary"][k] for k in result.tertiary},
            "independent_input_lines": counts["tertiary"],
            "detected_output_lines": {r.channel_id: counts["secondary"][r.channel_id] for r in outputs},
            "coupling_lines": counts["coupling"],
            "matched_lines": counts["quaternary"],
            "estimated_points": counts["estimated_points"],
        },
        "parameters": result.params,
        "coupling": result.coupling.tolist(),
        "provenance": {k: [{"omega": w, "class": c} for w, c in v] for k, v in result.provenance.items()},
        "matches": traces,
        "failures": [{"input": q, "output": p, "message": m} for (q, p), m in result.failures.items()],
        "outputs_without_estimate": missing,
        "status": "ok" if not missing else "no estimate for " + ", ".join(missing),
    }
    if timestamp:
        summary["generated"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    _dump(out / "summary.json", summary)
    return summary


def run_pipeline(config: RunConfig, out_dir: Path | None = None) -> RunOutcome:
    """Ingest ``config.data`` and run the whole identification with reports under ``out_dir``."""
    config.validate()
    out = Path(out_dir) if out_dir is not None else resolve_output_dir(None, config.output_dir)
    inputs, outputs = ingest(config.data, config.inputs, config.outputs, config.sample_period)
    result = identify_mimo(inputs, outputs, config.identify_config())
    summary = write_pipeline_reports(out, result, inputs, outputs, config.timestamp)
    code = 1 if summary["outputs_without_estimate"] else 0
    return RunOutcome(code, summary, result, inputs, outputs, out)


# --- selftest ----------------------------------------------------------------

def selftest_config(name: str, plant) -> RunConfig:
    lines = [s.spectrum.omegas for s in plant.inputs] + [s.noise.omegas for s in plant.inputs]
    lines += [c.spectrum.omegas for c in plant.coupling] + [s.noise.omegas for s in plant.outputs]
    lines = np.concatenate([l[l > 0] for l in lines])
    nyq = np.pi / plant.sample_period
    band = (round(0.5 * float(lines.min()), 6), round(min(1.05 * float(lines.max()), 0.98 * nyq), 6))
    fits = {}
    if name == "pitch-4x1":
        fits = {("x1", "y"): (9, 1, 1), ("x2", "y"): (5, 0, 0)}
    return RunConfig(inputs=plant.input_labels, outputs=plant.output_labels, band=band, fits=fits)


def _rms_ratio(err: np.ndarray, ref: np.ndarray) -> float:
    den = float(np.sqrt(np.mean(ref**2)))
    return float(np.sqrt(np.mean(err**2))) / den if den > 0 else float(np.sqrt(np.mean(err**2)))


def selftest(name: str, seed: int = 1, workdir: Path | None = None) -> tuple[bool, str]:
    """Simulate a built-in plant, push it through the CSV pipeline, compare with truth.

    Returns ``(passed, report_text)``; the report is deterministic for a given
    scenario, seed and backend.
    """
    plant = scenario(name, seed)
    real = simulate(plant)
    cfg = selftest_config(name, plant)
    with tempfile.TemporaryDirectory() as tmp:
        base = Path(workdir) if workdir is not None else Path(tmp)
        data = base / "realization.csv"
        base.mkdir(parents=True, exist_ok=True)
        write_realization_csv(data, real)
        cfg.data = str(data)
        outcome = run_pipeline(cfg, base / "reports")
    res = outcome.result
    delta = coincidence_tolerance(plant.duration)
    checks: list[tuple[str, bool]] = []
    lines = [
        f"selftest {name} seed={seed} backend={_accel.BACKEND}",
        f"T={plant.duration:g} s dt={plant.sample_period:g} s delta={delta:.6f} rad/s band=[{cfg.band[0]:g}, {cfg.band[1]:g}]",
        "",
        f"{'channel':<10} {'nu':>10} {'|W| true':>10} {'|W| est':>10} {'err %':>8} {'ph true':>9} {'ph est':>9} {'err deg':>8}",
    ]
    strict = {(q, p) for (q, p) in plant.channels} if name != "pitch-4x1" else {("x1", "y")}
    for est in res.estimates:
        key = (est.input_label, est.output_label)
        truth = plant.response(*key, est.nus)
        mag_err = np.abs(np.abs(est.responses) / np.abs(truth) - 1)
        ph_err = np.degrees(np.abs(np.angle(est.responses / truth)))
        for k, nu in enumerate(est.nus):
            lines.append(
                f"{est.input_label + '->' + est.output_label:<10} {nu:10.5f} {abs(truth[k]):10.5f} "
                f"{abs(est.responses[k]):10.5f} {100 * mag_err[k]:8.3f} {np.degrees(np.angle(truth[k])):9.3f} "
                f"{np.degrees(np.angle(est.responses[k])):9.3f} {ph_err[k]:8.3f}"
            )
        tag = f"{est.input_label}->{est.output_label}"
        if key in strict:
            checks.append((f"{tag}: |W| within {100 * MAG_TOL:g}% (worst {100 * mag_err.max():.3f}%)", bool(mag_err.max() <= MAG_TOL)))
            checks.append((f"{tag}: phase within {PHASE_TOL_DEG:g} deg (worst {ph_err.max():.3f})", bool(ph_err.max() <= PHASE_TOL_DEG)))
        true_lines = FrequencySet.from_values(real.exact_inputs[est.input_label].omegas, delta)
        table = set_intersect(FrequencySet(est.nus, delta), true_lines)
        if key in strict:
            checks.append((
                f"{tag}: {len(est.nus)} matched lines, {len(table)} on true input lines of {len(true_lines)}",
                len(table) == len(est.nus) == len(true_lines),
            ))
        if est.fit is not None:
            checks.append((f"{tag}: fit n={est.fit.order_n} m={est.fit.order_m} astatism={est.fit.astatism} emitted", True))
    for key in sorted(strict):
        if not any((e.input_label, e.output_label) == key for e in res.estimates):
            checks.append((f"{key[0]}->{key[1]}: no estimate", False))
    for key, (n, m, _) in cfg.fits.items():
        try:
            est = res.estimate(*key)
        except KeyError:
            continue
        if 2 * est.matched_count >= (m + 1) + n + 1:
            checks.append((f"{key[0]}->{key[1]}: fit present when identifiable", est.fit is not None))

    true_coupling = FrequencySet.from_values(
        np.concatenate([s.omegas for _, s in real.coupling]) if real.coupling else [], delta
    )
    cmatch = set_intersect(res.coupling, true_coupling)
    checks.append((
        f"coupling: {len(res.coupling)} reported, {len(true_coupling)} injected, {len(cmatch)} coincide",
        len(cmatch) == len(res.coupling) == len(true_coupling),
    ))
    if len(true_coupling):
        leaked = sum(len(set_intersect(FrequencySet(e.nus, delta), true_coupling)) for e in res.estimates)
        checks.append((f"coupling: {leaked} estimate points on coupling lines", leaked == 0))

    recs = {r.channel_id: r for r in (*outcome.inputs, *outcome.outputs)}
    for est in res.estimates:
        q = est.input_label
        if (q, est.output_label) not in strict:
            continue
        # each channel carries its own midpoints, so filter per channel rather than on a union
        truth = real.exact_input_signal(q)
        ratio = _rms_ratio(filter_record(recs[q], est.nus) - truth, truth)
        checks.append((f"filtered {q} on {q}->{est.output_label} lines: RMS error {100 * ratio:.3f}% of noiseless", ratio <= RMS_TOL))
    for p in plant.output_labels:
        nus = np.unique(np.concatenate([e.nus for e in res.estimates if e.output_label == p] or [np.zeros(0)]))
        if nus.size == 0 or name == "pitch-4x1":
            continue
        truth = real.exact_output_signal(p)
        ratio = _rms_ratio(filter_record(recs[p], nus) - truth, truth)
        checks.append((f"filtered {p}: RMS error {100 * ratio:.3f}% of noiseless", ratio <= RMS_TOL))
    checks.append(("pipeline exit status 0", outcome.exit_code == 0))

    lines.append("")
    lines += [f"[{'PASS' if ok else 'FAIL'}] {text}" for text, ok in checks]
    passed = all(ok for _, ok in checks)
    lines.append(f"selftest {name}: {'PASS' if passed else 'FAIL'}")
    return passed, "\n".join(lines) + "\n"


# --- argument parsing ----------------------------------------------------------

def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _fit_spec(text: str):
    parts = text.split(":")
    if len(parts) not in (4, 5):
        raise argparse.ArgumentTypeError("fit spec is INPUT:OUTPUT:N:M[:ASTATISM]")
    q, p, *nums = parts
    n, m, *k = (int(v) for v in nums)
    return (q, p), (n, m, k[0] if k else 0)


def _add_detection_flags(sp):
    sp.add_argument("--sample-period", type=float, help="seconds; required when the CSV has no 't' column")
    sp.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"), help="scan band in rad/s")
    sp.add_argument("--threshold", type=float, default=0.1, help="peak threshold (default 0.1 of max)")
    sp.add_argument("--threshold-mode", choices=("relative", "absolute"), default="relative")
    sp.add_argument("--min-separation", type=float, help="rad/s (default 3 * 2pi/T)")
    sp.add_argument("--no-refine", action="store_true", help="disable parabolic apex refinement")
    sp.add_argument("--delta", type=float, help="coincidence tolerance override, rad/s (default 2pi/T)")
    sp.add_argument("--grid-step", type=float, help="scan grid step, rad/s (default pi/(2T))")
    sp.add_argument("--config", help="JSON run configuration; overrides flags")
    sp.add_argument("--out", help=f"output directory (else ${OUTPUT_ENV}, else ./freqsep-out)")
    sp.add_argument("--timestamp", action="store_true", help="record generation time in summary.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freqsep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("scan", help="current amplitude spectra and detected lines")
    sp.add_argument("data")
    sp.add_argument("--channels", type=_csv_list, help="comma-separated channels (default: all)")
    _add_detection_flags(sp)

    sp = sub.add_parser("identify", help="full separation and identification pipeline")
    sp.add_argument("data", nargs="?")
    sp.add_argument("--inputs", type=_csv_list, default=[])
    sp.add_argument("--outputs", type=_csv_list, default=[])
    sp.add_argument("--fit", type=_fit_spec, action="append", default=[], help="INPUT:OUTPUT:N:M[:ASTATISM]")
    sp.add_argument("--guard", type=float, default=1e-3, help="relative input-projection floor")
    sp.add_argument("--decorrelation", choices=("coupling", "symmetric"), default="coupling")
    _add_detection_flags(sp)

    sp = sub.add_parser("simulate", help="write a synthetic realization as CSV")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--plant", help="plant JSON file")
    src.add_argument("--scenario", choices=sorted(SCENARIOS))
    sp.add_argument("--seed", type=int, help="override the plant seed")
    sp.add_argument("--out", help=f"output directory (else ${OUTPUT_ENV}, else ./freqsep-out)")

    sp = sub.add_parser("selftest", help="simulate a built-in plant and check the pipeline against truth")
    sp.add_argument("scenario", choices=sorted(SCENARIOS))
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--report", help="also write the report to this file")
    return parser


def _run_config_from_args(args) -> RunConfig:
    cfg = RunConfig(
        data=args.data or "",
        inputs=list(getattr(args, "inputs", []) or []),
        outputs=list(getattr(args, "outputs", []) or []),
        sample_period=args.sample_period,
        band=tuple(args.band) if args.band else None,
        threshold_mode=args.threshold_mode,
        threshold_value=args.threshold,
        min_separation=args.min_separation,
        refine=not args.no_refine,
        delta=args.delta,
        delta_omega=args.grid_step,
        guard=getattr(args, "guard", 1e-3),
        decorrelation=getattr(args, "decorrelation", "coupling"),
        fits=dict(getattr(args, "fit", []) or []),
        timestamp=args.timestamp,
    )
    if args.config:
        cfg = cfg.apply_file(args.config)
    return cfg


def _cmd_scan(args) -> int:
    cfg = _run_config_from_args(args)
    header, _ = read_csv_table(cfg.data)
    names = args.channels or [h for k, h in enumerate(header) if not (k == 0 and h.lower() == "t")]
    records, _ = ingest(cfg.data, names, [], cfg.sample_period)
    out = resolve_output_dir(args.out, cfg.output_dir)
    sets = []
    summary = {"format_version": FORMAT_VERSION, "backend": _accel.BACKEND, "channels": {}}
    for rec in records:
        lo, hi = cfg.band if cfg.band is not None else (0.0, rec.nyquist)
        scan = scan_spectrum(rec, lo, hi, cfg.delta_omega)
        found = detect_frequencies(scan, cfg.peak_params())
        if cfg.delta is not None:
            found = found.with_delta(cfg.delta)
        sets.append(found)
        _write(out / "scans" / f"{rec.channel_id}.csv", scan.to_csv())
        found.write_csv(out / "secondary" / f"{rec.channel_id}.csv")
        summary["channels"][rec.channel_id] = {
            "detected": len(found),
            "delta": found.delta,
            "grid_step": scan.step,
            "band": [lo, hi],
            "self_coincidences": len(found.self_coincidences()),
        }
        print(f"{rec.channel_id}: {len(found)} lines")
    write_sets_json(out / "secondary.json", sets, stage="secondary")
    _dump(out / "scan_summary.json", summary)
    return 0


def _cmd_identify(args) -> int:
    cfg = _run_config_from_args(args)
    if not cfg.data:
        raise ValueError("no data file given (positional argument or 'data' in --config)")
    out = resolve_output_dir(args.out, cfg.output_dir)
    outcome = run_pipeline(cfg, out)
    for key, n in outcome.summary["counts"]["matched_lines"].items():
        print(f"{key}: {n} matched lines")
    if outcome.exit_code:
        print(outcome.summary["status"], file=sys.stderr)
    return outcome.exit_code


def _cmd_simulate(args) -> int:
    plant = load_plant_config(args.plant) if args.plant else scenario(args.scenario, args.seed or 1)
    if args.seed is not None and args.plant:
        plant = replace(plant, seed=args.seed)
    out = resolve_output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    real = simulate(plant)
    write_realization_csv(out / "realization.csv", real)
    _dump(out / "plant.json", plant_config_to_obj(plant))
    _dump(out / "truth.json", real.truth_json_obj())
    print(f"wrote {out / 'realization.csv'} ({real.inputs[0].count} samples)")
    return 0


def _cmd_selftest(args) -> int:
    passed, report = selftest(args.scenario, args.seed)
    sys.stdout.write(report)
    if args.report:
        _write(Path(args.report), report)
    return 0 if passed else 1


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"scan": _cmd_scan, "identify": _cmd_identify, "simulate": _cmd_simulate, "selftest": _cmd_selftest}
    try:
        return handler[args.command](args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"freqsep {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
