"""Channel identification on matched harmonic frequencies.

For one input/output pair the response at a matched frequency ``nu`` is the
ratio of the two records' harmonic projections at ``nu``. Across many inputs
the detected input sets are first made pairwise disjoint (``freqset.decorrelate``)
so every output line is attributed to at most one input.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .freqset import (
    FORMAT_VERSION,
    FrequencySet,
    MatchTable,
    decorrelate,
    set_intersect,
    _near_mask,
)
from .signals import SampledRecord, bohr_coefficients, project_onto, reconstruct
from .spectrum import PeakParams, coincidence_tolerance, detect_frequencies, scan_spectrum

__all__ = [
    "EmptyEstimateError",
    "IllPosedFitError",
    "RationalModel",
    "ChannelEstimate",
    "IdentifyConfig",
    "IdentificationResult",
    "select_channel_frequencies",
    "match_channel",
    "estimate_response",
    "filter_record",
    "fit_rational",
    "identify_mimo",
    "check_common_timebase",
]

DEFAULT_GUARD = 1e-3


class EmptyEstimateError(ValueError):
    """No usable response point survived the division guard."""


class IllPosedFitError(ValueError):
    """The least-squares system for a rational fit is rank deficient or underdetermined."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


@dataclass(frozen=True, eq=False)
class RationalModel:
    """``B(s) / A(s)`` with ascending real coefficients and monic ``A``.

    The denominator is stored in full, so a model with astatism ``k`` has
    ``a[:k] == 0`` and ``a[k] != 0``. ``residuals`` and ``iterations`` are only
    populated by :func:`fit_rational`.
    """

    b: np.ndarray
    a: np.ndarray
    astatism: int = 0
    residuals: np.ndarray | None = None
    iterations: int = 0
    degenerate: bool = False

    def __post_init__(self):
        b = np.array(self.b, dtype=np.float64, copy=True).reshape(-1)
        a = np.array(self.a, dtype=np.float64, copy=True).reshape(-1)
        if b.size == 0 or a.size == 0:
            raise ValueError("empty coefficient vector")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("coefficients must be finite")
        if a[-1] != 1.0:
            raise ValueError("denominator must be monic (leading coefficient 1); use RationalModel.normalized")
        if b.size > a.size:
            raise ValueError(f"improper model: numerator order {b.size - 1} > denominator order {a.size - 1}")
        k = int(self.astatism)
        if k < 0 or k >= a.size or np.any(a[:k] != 0) or a[k] == 0:
            raise ValueError(f"denominator coefficients {a.tolist()} are inconsistent with astatism {k}")
        b.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "astatism", k)

    @classmethod
    def normalized(cls, b, a) -> "RationalModel":
        """Scale to a monic denominator and infer the astatism from trailing zeros."""
        b = np.trim_zeros(np.asarray(b, dtype=np.float64), "b")
        a = np.trim_zeros(np.asarray(a, dtype=np.float64), "b")
        if a.size == 0:
            raise ValueError("zero denominator")
        if b.size == 0:
            b = np.zeros(1)
        lead = a[-1]
        astatism = int(np.argmax(a != 0))
        return cls(b / lead, a / lead, astatism)

    @property
    def order_n(self) -> int:
        return self.a.size - 1

    @property
    def order_m(self) -> int:
        return self.b.size - 1

    def response(self, nu) -> np.ndarray:
        s = 1j * np.asarray(nu, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.polynomial.polynomial.polyval(s, self.b) / np.polynomial.polynomial.polyval(s, self.a)

    def to_json_obj(self) -> dict:
        out = {"b": self.b.tolist(), "a": self.a.tolist(), "astatism": self.astatism}
        if self.residuals is not None:
            out["max_relative_residual"] = float(np.max(np.abs(self.residuals))) if self.residuals.size else 0.0
            out["iterations"] = self.iterations
            out["degenerate"] = self.degenerate
        return out


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    """Per-frequency response ``w(j nu)`` of one input -> output channel."""

    input_label: str
    output_label: str
    nus: np.ndarray
    responses: np.ndarray
    input_projections: np.ndarray | None = None
    output_projections: np.ndarray | None = None
    excluded: tuple = ()  # (nu, reason)
    sources: tuple = ()  # (omega_in, omega_out, nu) per point
    fit: RationalModel | None = None

    def __post_init__(self):
        nus = np.array(self.nus, dtype=np.float64, copy=True).reshape(-1)
        resp = np.array(self.responses, dtype=np.complex128, copy=True).reshape(-1)
        if nus.shape != resp.shape:
            raise ValueError("nus and responses differ in length")
        if np.any(np.diff(nus) <= 0):
            raise ValueError("response frequencies must be strictly increasing")
        object.__setattr__(self, "nus", nus)
        object.__setattr__(self, "responses", resp)

    @property
    def matched_count(self) -> int:
        return int(self.nus.size)

    @property
    def points(self) -> list[tuple[float, complex]]:
        return list(zip(self.nus.tolist(), self.responses.tolist()))

    def with_fit(self, fit: RationalModel | None) -> "ChannelEstimate":
        return ChannelEstimate(
            self.input_label,
            self.output_label,
            self.nus,
            self.responses,
            self.input_projections,
            self.output_projections,
            self.excluded,
            self.sources,
            fit,
        )

    def to_json_obj(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "input": self.input_label,
            "output": self.output_label,
            "matched_count": self.matched_count,
            "points": [{"nu": n, "re": w.real, "im": w.imag} for n, w in self.points],
            "fit": None if self.fit is None else self.fit.to_json_obj(),
            "excluded": [{"nu": n, "reason": r} for n, r in self.excluded],
            "sources": [{"omega_input": a, "omega_output": b, "nu": n} for a, b, n in self.sources],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), indent=2) + "\n"

    def to_csv(self) -> str:
        rows = ["nu,magnitude,phase_deg\n"]
        for n, w in zip(self.nus.tolist(), self.responses):
            rows.append(f"{n!r},{abs(w)!r},{float(np.degrees(np.angle(w)))!r}\n")
        return "".join(rows)


def check_common_timebase(records: Sequence[SampledRecord]) -> None:
    ref = records[0]
    for r in records[1:]:
        if (r.sample_period, r.start_time, r.count) != (ref.sample_period, ref.start_time, ref.count):
            raise ValueError(
                f"records {ref.channel_id!r} and {r.channel_id!r} do not share a time base "
                f"(dt {ref.sample_period:g}/{r.sample_period:g}, start {ref.start_time:g}/{r.start_time:g}, "
                f"count {ref.count}/{r.count})"
            )


def match_channel(input_set: FrequencySet, output_set: FrequencySet) -> MatchTable:
    return set_intersect(input_set, output_set)


def select_channel_frequencies(input_set: FrequencySet, output_set: FrequencySet) -> FrequencySet:
    """Midpoints of the input/output coincidences: the channel's forcing lines."""
    table = match_channel(input_set, output_set)
    return table.to_set(f"{input_set.label}->{output_set.label}")


def estimate_response(
    input: SampledRecord,
    output: SampledRecord,
    nus,
    guard: float = DEFAULT_GUARD,
    sources: Sequence[tuple[float, float, float]] = (),
) -> ChannelEstimate:
    """Ratio of output to input projections at each frequency in ``nus``.

    ``sources`` optionally carries one ``(omega_in, omega_out, nu)`` triple per
    entry of ``nus`` for traceability. Points whose input projection is below ``guard`` times the largest one are
    excluded and listed in ``excluded``.
    """
    check_common_timebase([input, output])
    nu = np.asarray(getattr(nus, "freqs", nus), dtype=np.float64).reshape(-1)
    sources = list(sources)
    if sources and len(sources) != nu.size:
        raise ValueError("sources must align one-to-one with nus")
    nu, first = np.unique(nu, return_index=True)
    sources = [sources[i] for i in first] if sources else []
    if nu.size == 0:
        raise EmptyEstimateError(f"no frequencies to estimate {input.channel_id}->{output.channel_id} on")
    nyq = min(input.nyquist, output.nyquist)
    if np.any(nu >= nyq):
        raise ValueError(f"frequency {nu[nu >= nyq][0]:g} is not below the Nyquist frequency {nyq:g}")
    x = bohr_coefficients(input, nu)
    y = bohr_coefficients(output, nu)
    mag = np.abs(x)
    floor = guard * float(mag.max())
    keep = mag >= floor
    if floor == 0.0:
        keep[:] = False
    excluded = tuple(
        (float(n), f"input projection {m:.3g} below guard {floor:.3g}") for n, m in zip(nu[~keep], mag[~keep])
    )
    if not keep.any():
        raise EmptyEstimateError(
            f"all {nu.size} points of {input.channel_id}->{output.channel_id} excluded: "
            f"largest input projection is {mag.max():.3g}"
        )
    kept_sources = tuple(s for s, k in zip(sources, keep) if k) if sources else ()
    return ChannelEstimate(
        input.channel_id,
        output.channel_id,
        nu[keep],
        y[keep] / x[keep],
        x[keep],
        y[keep],
        excluded,
        kept_sources,
    )


def filter_record(record: SampledRecord, nus, times=None) -> np.ndarray:
    """Rebuild the part of ``record`` carried by the lines ``nus``."""
    t = record.times if times is None else np.asarray(times, dtype=np.float64)
    omegas = np.asarray(getattr(nus, "freqs", nus), dtype=np.float64).reshape(-1)
    if omegas.size == 0:
        return np.zeros(np.shape(t))
    return reconstruct(project_onto(record, omegas), t)


def _column_names(order_m: int, n_free: int) -> list[str]:
    return [f"b{k}" for k in range(order_m + 1)] + [f"a{k}" for k in range(n_free)]


def fit_rational(
    estimate: ChannelEstimate,
    order_n: int,
    order_m: int,
    astatism: int = 0,
    max_iter: int = 50,
    tol: float = 1e-8,
    reweight: bool = True,
) -> RationalModel:
    """Equation-error (Levy) fit of ``B(s) / (s^k A(s))`` to the response points.

    Solves ``B(j nu) - w (j nu)^k A(j nu) = 0`` in the least-squares sense with
    real and imaginary parts stacked, on the frequency axis scaled by the
    largest ``nu``. Rows are weighted to measure relative error, and with
    ``reweight`` the Sanathanan-Koerner iteration divides by the previous
    ``|(j nu)^k A(j nu)|`` until the relative coefficient change drops below
    ``tol`` or ``max_iter`` passes are done.
    """
    if not 0 <= order_m <= order_n:
        raise ValueError(f"need 0 <= m <= n, got m={order_m}, n={order_n}")
    if not 0 <= astatism <= order_n:
        raise ValueError(f"astatism {astatism} out of range for order {order_n}")
    nu = estimate.nus
    w = estimate.responses
    d = nu.size
    if 2 * d < (order_m + 1) + order_n + 1:
        raise IllPosedFitError(
            f"{d} complex points give {2 * d} real equations; order (n={order_n}, m={order_m}) "
            f"needs at least {(order_m + 1) + order_n + 1}"
        )
    n_free = order_n - astatism
    if np.all(w == 0):
        scale = float(nu.max()) if d else 1.0
        a = np.zeros(order_n + 1)
        a[astatism:] = np.polynomial.polynomial.polypow([scale, 1.0], n_free)
        return RationalModel(
            np.zeros(order_m + 1), a, astatism, residuals=np.zeros(d, dtype=complex), degenerate=True
        )

    scale = float(np.max(np.abs(nu)))
    if scale == 0:
        raise IllPosedFitError("all response frequencies are zero")
    s = 1j * nu / scale
    s_pow_b = s[:, None] ** np.arange(order_m + 1)
    s_pow_a = s[:, None] ** np.arange(n_free + 1)
    s_ast = s ** astatism
    lhs = np.hstack([s_pow_b, -(w * s_ast)[:, None] * s_pow_a[:, :n_free]])
    rhs = w * s_ast * s_pow_a[:, n_free]
    names = _column_names(order_m, n_free)

    mag = np.abs(w)
    base = np.where(mag > 0, 1.0 / np.where(mag > 0, mag, 1.0), 1.0)
    weight = base.copy()
    theta = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        rows = np.vstack([(weight[:, None] * lhs).real, (weight[:, None] * lhs).imag])
        target = np.concatenate([(weight * rhs).real, (weight * rhs).imag])
        norms = np.linalg.norm(rows, axis=0)
        norms[norms == 0] = 1.0
        scaled = rows / norms
        _, r, perm = scipy.linalg.qr(scaled, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > diag[0] * max(scaled.shape) * np.finfo(float).eps)) if diag.size else 0
        if rank < scaled.shape[1]:
            bad = [names[i] for i in sorted(perm[rank:])]
            raise IllPosedFitError(f"rank-deficient fit: columns {', '.join(bad)} are not identifiable", bad)
        sol, *_ = np.linalg.lstsq(scaled, target, rcond=None)
        new = sol / norms
        if theta is not None:
            change = np.linalg.norm(new - theta) / max(np.linalg.norm(new), np.finfo(float).tiny)
            theta = new
            if change < tol:
                break
        else:
            theta = new
        if not reweight:
            break
        a_prev = s_pow_a @ np.concatenate([theta[order_m + 1:], [1.0]])
        denom = np.abs(s_ast * a_prev)
        weight = base / np.where(denom > 0, denom, 1.0)

    beta = theta[: order_m + 1]
    alpha = np.concatenate([theta[order_m + 1:], [1.0]])
    n = order_n
    b = beta * scale ** (n - np.arange(order_m + 1))
    a = np.zeros(n + 1)
    a[astatism:] = alpha * scale ** (n - np.arange(astatism, n + 1))
    model = RationalModel(b, a, astatism)
    fitted = model.response(nu)
    resid = np.where(mag > 0, (fitted - w) / np.where(mag > 0, mag, 1.0), fitted - w)
    return RationalModel(model.b, model.a, astatism, residuals=resid, iterations=iterations)


@dataclass(frozen=True)
class IdentifyConfig:
    """Pipeline parameters; ``band=None`` scans from 0 to Nyquist."""

    band: tuple[float, float] | None = None
    peak: PeakParams = field(default_factory=PeakParams)
    delta: float | None = None
    delta_omega: float | None = None
    guard: float = DEFAULT_GUARD
    decorrelation: str = "coupling"
    fits: Mapping[tuple[str, str], tuple[int, int, int]] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        return {
            "band": None if self.band is None else list(self.band),
            "threshold_mode": self.peak.threshold_mode,
            "threshold_value": self.peak.threshold_value,
            "min_separation": self.peak.min_separation,
            "refine": self.peak.refine,
            "delta": self.delta,
            "delta_omega": self.delta_omega,
            "guard": self.guard,
            "decorrelation": self.decorrelation,
            "fits": [{"input": q, "output": p, "n": n, "m": m, "astatism": k} for (q, p), (n, m, k) in self.fits.items()],
        }


@dataclass
class IdentificationResult:
    estimates: list
    secondary: dict  # label -> detected FrequencySet
    tertiary: dict  # input label -> de-correlated FrequencySet
    coupling: FrequencySet
    quaternary: dict  # (input, output) -> MatchTable
    provenance: dict  # label -> list of (omega, class)
    failures: dict  # (input, output) -> message
    scans: dict
    params: dict

    def estimate(self, input_label: str, output_label: str) -> ChannelEstimate:
        for e in self.estimates:
            if (e.input_label, e.output_label) == (input_label, output_label):
                return e
        raise KeyError((input_label, output_label))

    def counts(self) -> dict:
        return {
            "secondary": {k: len(v) for k, v in self.secondary.items()},
            "tertiary": {k: len(v) for k, v in self.tertiary.items()},
            "coupling": len(self.coupling),
            "quaternary": {f"{q}->{p}": len(t) for (q, p), t in self.quaternary.items()},
            "estimated_points": {f"{e.input_label}->{e.output_label}": e.matched_count for e in self.estimates},
        }


def _classify(result_sets, coupling, quaternary, inputs, outputs):
    prov = {}
    for rec in inputs:
        q = rec.channel_id
        detected = result_sets["secondary"][q]
        survived = result_sets["tertiary"][q]
        matched = set()
        for (qq, _), table in quaternary.items():
            if qq == q:
                matched.update(float(table.a.freqs[i]) for i, _, _ in table.pairs)
        surv = set(survived.tolist())
        rows = []
        for wv in detected.tolist():
            if wv not in surv:
                rows.append((wv, "coupling"))
            elif wv in matched:
                rows.append((wv, "input-exact"))
            else:
                rows.append((wv, "noise"))
        prov[q] = rows
    for rec in outputs:
        p = rec.channel_id
        detected = result_sets["secondary"][p]
        owners = {}
        for (q, pp), table in quaternary.items():
            if pp == p:
                for _, j, _ in table.pairs:
                    owners.setdefault(float(table.b.freqs[j]), []).append(q)
        near_coupling = _near_mask(detected.freqs, coupling.freqs, detected.delta)
        rows = []
        for wv, nc in zip(detected.tolist(), near_coupling):
            if wv in owners:
                rows.append((wv, "input:" + ",".join(owners[wv])))
            elif nc:
                rows.append((wv, "coupling"))
            else:
                rows.append((wv, "unexplained"))
        prov[p] = rows
    return prov


def identify_mimo(
    inputs: Sequence[SampledRecord],
    outputs: Sequence[SampledRecord],
    config: IdentifyConfig | None = None,
) -> IdentificationResult:
    """Detect lines on every record, de-correlate the inputs, then estimate every channel.

    Failures of individual channels are collected in ``failures`` instead of
    aborting the run.
    """
    config = config or IdentifyConfig()
    if not inputs or not outputs:
        raise ValueError("need at least one input and one output record")
    records = list(inputs) + list(outputs)
    labels = [r.channel_id for r in records]
    if len(set(labels)) != len(labels):
        raise ValueError(f"channel labels must be unique, got {labels}")
    check_common_timebase(records)
    ref = records[0]
    T = ref.require_duration()
    delta = config.delta if config.delta is not None else coincidence_tolerance(T)
    lo, hi = config.band if config.band is not None else (0.0, ref.nyquist)

    secondary, scans = {}, {}
    for rec in records:
        scan = scan_spectrum(rec, lo, hi, config.delta_omega)
        scans[rec.channel_id] = scan
        secondary[rec.channel_id] = detect_frequencies(scan, config.peak).with_delta(delta)

    in_sets = [secondary[r.channel_id] for r in inputs]
    if len(in_sets) > 1:
        decor, coupling = decorrelate(in_sets, config.decorrelation)
    else:
        decor, coupling = in_sets, FrequencySet.empty(delta, "coupling")
    tertiary = {r.channel_id: s for r, s in zip(inputs, decor)}

    estimates, failures, quaternary = [], {}, {}
    for x in inputs:
        for y in outputs:
            key = (x.channel_id, y.channel_id)
            table = match_channel(tertiary[x.channel_id], secondary[y.channel_id])
            quaternary[key] = table
            try:
                est = estimate_response(x, y, table.midpoints, config.guard, table.sources())
            except EmptyEstimateError as exc:
                failures[key] = str(exc)
                continue
            if key in config.fits:
                n, m, k = config.fits[key]
                try:
                    est = est.with_fit(fit_rational(est, n, m, k))
                except (IllPosedFitError, ValueError) as exc:
                    failures[key] = f"fit failed: {exc}"
            estimates.append(est)

    prov = _classify({"secondary": secondary, "tertiary": tertiary}, coupling, quaternary, inputs, outputs)
    params = {
        **config.to_json_obj(),
        "band": [lo, hi],
        "delta": delta,
        "delta_omega": scans[ref.channel_id].step,
        "min_separation": config.peak.separation_for(coincidence_tolerance(T)),
        "duration": T,
        "sample_period": ref.sample_period,
        "samples": ref.count,
    }
    return IdentificationResult(estimates, secondary, tertiary, coupling, quaternary, prov, failures, scans, params)
