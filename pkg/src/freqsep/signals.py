"""Discrete-spectrum signals: records, line spectra, time averages, projections.

Conventions used throughout the package:

* angular frequencies are in rad/s and one-sided (omega >= 0);
* a real signal is stored as ``C0 + 2 * Re(sum_k C_k exp(j omega_k t))`` so the
  cosine/sine pair ``a cos(wt) + b sin(wt)`` has ``C = (a - j b) / 2``;
* every finite-record average is the trapezoidal rule over the record,
  normalised by the duration ``T = (count - 1) * sample_period``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "DegenerateRecordError",
    "SampledRecord",
    "HarmonicComponent",
    "LineSpectrum",
    "CorrelationEstimate",
    "besicovitch_mean",
    "bohr_coefficient",
    "bohr_coefficients",
    "project_onto",
    "reconstruct",
    "autocorrelation_single",
    "correlation_from_spectrum",
    "power_weights",
    "leakage_bound",
    "trapezoid_leakage",
]


class DegenerateRecordError(ValueError):
    """Raised when a record is too short to define a time average."""


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


def _omegas_of(freqs) -> np.ndarray:
    # FrequencySet exposes .freqs; plain sequences are accepted too
    return np.asarray(getattr(freqs, "freqs", freqs), dtype=np.float64).reshape(-1)


@dataclass(frozen=True, eq=False)
class SampledRecord:
    """Uniformly sampled real signal on one channel."""

    samples: np.ndarray
    sample_period: float
    start_time: float = 0.0
    channel_id: str = ""

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.size == 0:
            raise ValueError("record has no samples")
        if not np.all(np.isfinite(samples)):
            raise ValueError(f"record {self.channel_id!r} contains non-finite samples")
        dt = float(self.sample_period)
        if not np.isfinite(dt) or dt <= 0:
            raise ValueError(f"sample_period must be finite and positive, got {self.sample_period!r}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_period", dt)
        object.__setattr__(self, "start_time", float(self.start_time))

    @property
    def count(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return (self.count - 1) * self.sample_period

    @property
    def nyquist(self) -> float:
        return np.pi / self.sample_period

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.sample_period * np.arange(self.count)

    def with_samples(self, samples) -> "SampledRecord":
        return SampledRecord(samples, self.sample_period, self.start_time, self.channel_id)

    def require_duration(self) -> float:
        if self.count < 2:
            raise DegenerateRecordError(
                f"record {self.channel_id!r} has {self.count} sample(s); at least 2 are needed"
            )
        return self.duration


@dataclass(frozen=True)
class HarmonicComponent:
    omega: float
    amplitude: complex

    def __post_init__(self):
        omega = float(self.omega)
        amp = complex(self.amplitude)
        if not np.isfinite(omega) or omega < 0:
            raise ValueError(f"omega must be finite and >= 0, got {self.omega!r}")
        if not (np.isfinite(amp.real) and np.isfinite(amp.imag)):
            raise ValueError(f"amplitude at omega={omega} is not finite")
        if omega == 0 and amp.imag != 0:
            raise ValueError("the omega = 0 component must be real")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "amplitude", amp)


@dataclass(frozen=True)
class LineSpectrum:
    """Finite line spectrum sorted by strictly increasing frequency."""

    components: tuple = ()

    def __post_init__(self):
        comps = tuple(
            c if isinstance(c, HarmonicComponent) else HarmonicComponent(*c) for c in self.components
        )
        omegas = [c.omega for c in comps]
        if any(b <= a for a, b in zip(omegas, omegas[1:])):
            raise ValueError("line spectrum frequencies must be strictly increasing")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_arrays(cls, omegas: Iterable[float], amplitudes: Iterable[complex]) -> "LineSpectrum":
        omegas = np.asarray(list(omegas), dtype=np.float64)
        amplitudes = np.asarray(list(amplitudes), dtype=np.complex128)
        if omegas.shape != amplitudes.shape:
            raise ValueError("omegas and amplitudes differ in length")
        order = np.argsort(omegas, kind="stable")
        return cls(tuple(HarmonicComponent(omegas[i], amplitudes[i]) for i in order))

    @classmethod
    def from_real_amplitudes(cls, omegas, peak_amplitudes) -> "LineSpectrum":
        """Cosine peak amplitudes ``A_k`` (``A cos(wt)``) to stored ``C_k = A_k / 2``."""
        omegas = np.asarray(list(omegas), dtype=np.float64)
        peaks = np.asarray(list(peak_amplitudes), dtype=np.float64)
        amps = np.where(omegas == 0, peaks, peaks / 2.0)
        return cls.from_arrays(omegas, amps)

    @property
    def omegas(self) -> np.ndarray:
        return np.array([c.omega for c in self.components], dtype=np.float64)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([c.amplitude for c in self.components], dtype=np.complex128)

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def total_power(self) -> float:
        """Time-average power ``m^2 + sum 2|C_k|^2``."""
        om, amps = self.omegas, self.amplitudes
        p = np.abs(amps) ** 2
        return float(np.sum(np.where(om == 0, p, 2.0 * p)))

    def scaled(self, factors) -> "LineSpectrum":
        return LineSpectrum.from_arrays(self.omegas, self.amplitudes * np.asarray(factors))

    def merged(self, other: "LineSpectrum") -> "LineSpectrum":
        """Union of components; coincident frequencies add."""
        acc: dict[float, complex] = {}
        for c in (*self.components, *other.components):
            acc[c.omega] = acc.get(c.omega, 0j) + c.amplitude
        keys = sorted(acc)
        return LineSpectrum.from_arrays(keys, [acc[k] for k in keys])


@dataclass(frozen=True, eq=False)
class CorrelationEstimate:
    """Correlation values at lags; ``tolerance`` bounds the symmetry/peak audits."""

    lags: np.ndarray
    values: np.ndarray
    tolerance: float = 0.0

    def __post_init__(self):
        lags, values = _frozen(self.lags), _frozen(self.values)
        if lags.shape != values.shape:
            raise ValueError("lags and values differ in length")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "tolerance", float(self.tolerance))

    def at(self, lag: float) -> float:
        idx = np.flatnonzero(self.lags == lag)
        if idx.size == 0:
            raise KeyError(lag)
        return float(self.values[idx[0]])

    def audit(self) -> list[str]:
        """Violations of the zero-lag peak and even-symmetry properties."""
        problems = []
        zero = np.flatnonzero(self.lags == 0)
        if zero.size:
            z0 = abs(self.values[zero[0]])
            worst = np.max(np.abs(self.values))
            if worst > z0 + self.tolerance:
                problems.append(f"|R| peaks at {worst:.6g} > R(0) = {z0:.6g} beyond tolerance")
        lookup = {float(l): float(v) for l, v in zip(self.lags, self.values)}
        for lag, v in lookup.items():
            if lag > 0 and -lag in lookup and abs(v - lookup[-lag]) > self.tolerance:
                problems.append(f"R({lag:g}) and R({-lag:g}) differ by {abs(v - lookup[-lag]):.3g}")
        return problems


def besicovitch_mean(record: SampledRecord) -> float:
    """Trapezoidal time average ``(1/T) * integral of x`` over the record."""
    T = record.require_duration()
    x = record.samples
    return float((x.sum() - 0.5 * (x[0] + x[-1])) * record.sample_period / T)


def bohr_coefficients(record: SampledRecord, omegas) -> np.ndarray:
    """Vectorised :func:`bohr_coefficient` over an array of frequencies."""
    record.require_duration()
    omegas = _omegas_of(omegas)
    if np.any(omegas < 0) or not np.all(np.isfinite(omegas)):
        raise ValueError("projection frequencies must be finite and >= 0")
    if omegas.size == 0:
        return np.zeros(0, dtype=np.complex128)
    return kernels.project(record.samples, record.start_time, record.sample_period, omegas)


def bohr_coefficient(record: SampledRecord, omega: float) -> complex:
    """``(1/T) * integral x(t) exp(-j omega t) dt`` by the trapezoidal rule.

    Phases are referenced to absolute time, so coefficients from records with
    a common clock are directly comparable.
    """
    omega = float(omega)
    if omega < 0:
        raise ValueError(f"omega must be >= 0, got {omega}")
    return complex(bohr_coefficients(record, [omega])[0])


def project_onto(record: SampledRecord, freqs) -> LineSpectrum:
    """One component per requested frequency; omega = 0 gives the real mean."""
    omegas = _omegas_of(freqs)
    if omegas.size == 0:
        raise ValueError("no frequencies to project onto")
    coeffs = bohr_coefficients(record, omegas)
    coeffs = np.where(omegas == 0, coeffs.real, coeffs)
    return LineSpectrum.from_arrays(omegas, coeffs)


def reconstruct(spectrum: LineSpectrum, times) -> np.ndarray:
    """Evaluate ``C0 + 2 Re sum C_k exp(j omega_k t)`` at ``times``."""
    t = np.asarray(times, dtype=np.float64).reshape(-1)
    if len(spectrum) == 0:
        return np.zeros_like(t)
    om, amps = spectrum.omegas, spectrum.amplitudes
    zero = om == 0
    out = np.full(t.shape, float(np.sum(amps[zero].real)))
    if np.any(~zero):
        phasors = np.exp(1j * np.outer(t, om[~zero]))
        out += 2.0 * (phasors @ amps[~zero]).real
    return out


def _lag_product(x: np.ndarray, shift: int, dt: float) -> float:
    # trapezoidal mean of x(t - tau) x(t) over the overlapping window
    n = x.size
    if shift == 0:
        prod = x * x
    else:
        prod = x[shift:] * x[: n - shift]
    if prod.size < 2:
        raise ValueError("lag leaves fewer than two overlapping samples")
    return float((prod.sum() - 0.5 * (prod[0] + prod[-1])) / (prod.size - 1))


def autocorrelation_single(
    record: SampledRecord, lags: Sequence[float], tolerance: float | None = None
) -> CorrelationEstimate:
    """Single-record time-average autocorrelation of the mean-removed record.

    Each lag uses only the overlapping window of length ``T - |tau|``.
    Lags between sample shifts are linearly interpolated. ``tolerance`` is the
    audit tolerance stored on the result; by default 5% of the zero-lag value.
    """
    T = record.require_duration()
    dt = record.sample_period
    lags = np.asarray(lags, dtype=np.float64).reshape(-1)
    if np.any(np.abs(lags) >= T / 2):
        bad = lags[np.abs(lags) >= T / 2][0]
        raise ValueError(f"lag {bad:g} s is not below half the record duration T/2 = {T / 2:g} s")
    x = record.samples - besicovitch_mean(record)
    cache: dict[int, float] = {}

    def z(shift: int) -> float:
        if shift not in cache:
            cache[shift] = _lag_product(x, shift, dt)
        return cache[shift]

    values = np.empty_like(lags)
    for i, lag in enumerate(np.abs(lags)):
        pos = lag / dt
        lo = int(np.floor(pos))
        frac = pos - lo
        if frac < 1e-9:
            values[i] = z(lo)
        elif frac > 1 - 1e-9:
            values[i] = z(lo + 1)
        else:
            values[i] = (1 - frac) * z(lo) + frac * z(lo + 1)
    if tolerance is None:
        tolerance = 0.05 * abs(z(0))
    return CorrelationEstimate(lags, values, tolerance)


def power_weights(spectrum: LineSpectrum) -> LineSpectrum:
    """Correlation weights ``(a^2 + b^2) / 2 = 2|C|^2`` of the centred part."""
    om, amps = spectrum.omegas, spectrum.amplitudes
    keep = om > 0
    return LineSpectrum.from_arrays(om[keep], 2.0 * np.abs(amps[keep]) ** 2)


def correlation_from_spectrum(weights: LineSpectrum, lags) -> CorrelationEstimate:
    """``R(tau) = sum_k w_k cos(omega_k tau)`` with ``w_k`` the real part of each amplitude."""
    lags = np.asarray(lags, dtype=np.float64).reshape(-1)
    if len(weights) == 0:
        return CorrelationEstimate(lags, np.zeros_like(lags))
    w = weights.amplitudes.real
    values = np.cos(np.outer(lags, weights.omegas)) @ w
    return CorrelationEstimate(lags, values)


def trapezoid_leakage(offsets, duration: float, sample_period: float) -> np.ndarray:
    """Worst-case ``|(1/T) trapz exp(j d t)|`` for a unit phasor at offset ``d``.

    Equals ``dt / (T |tan(d dt / 2)|)``, which never exceeds the continuous
    bound ``2 / (T |d|)`` for ``|d| dt < pi``.
    """
    d = np.abs(np.asarray(offsets, dtype=np.float64))
    half = np.tan(0.5 * d * sample_period)
    with np.errstate(divide="ignore"):
        return sample_period / (duration * np.abs(half))


def leakage_bound(
    spectrum: LineSpectrum, omega: float, duration: float, sample_period: float, exclude: float = 0.0
) -> float:
    """Bound on what ``spectrum``'s components contribute to a projection at ``omega``.

    Both the ``+omega_k`` line and its negative-frequency image are counted.
    Components with ``|omega - omega_k| <= exclude`` (the line being measured)
    are skipped.
    """
    om, amps = spectrum.omegas, np.abs(spectrum.amplitudes)
    total = 0.0
    for w_k, a in zip(om, amps):
        if a == 0:
            continue
        if abs(omega - w_k) > exclude:
            total += a * float(trapezoid_leakage(omega - w_k, duration, sample_period))
        if w_k > 0 and omega + w_k > exclude:
            total += a * float(trapezoid_leakage(omega + w_k, duration, sample_period))
    return total
