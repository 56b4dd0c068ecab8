"""Synthetic MIMO plants with line-spectrum inputs, coupling and noise.

Channels act in the frequency domain: each input line ``C`` at ``omega``
becomes ``C * W(j omega)`` on the output (steady state, no transients), so the
set of output lines is exactly the set of forcing lines and every oracle is
exact. A coupling spectrum shared by inputs ``r`` and ``c`` is added to both
and reaches output ``p`` through ``W_rp + W_cp``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .freqset import FrequencySet, semiring_check, set_intersect
from .ident import RationalModel
from .signals import LineSpectrum, SampledRecord, reconstruct
from .spectrum import coincidence_tolerance

__all__ = [
    "PlantConfigError",
    "InputSpec",
    "OutputSpec",
    "CouplingSpec",
    "PlantConfig",
    "Realization",
    "gen_disjoint_frequencies",
    "gen_frequency_family",
    "randomize",
    "synthesize",
    "simulate",
    "load_plant_config",
    "plant_config_from_obj",
    "plant_config_to_obj",
    "write_realization_csv",
    "SCENARIOS",
    "scenario",
]


class PlantConfigError(ValueError):
    pass


def gen_disjoint_frequencies(
    count: int, omega_min: float, omega_max: float, min_gap: float, seed=None, label: str = ""
) -> FrequencySet:
    """``count`` random frequencies in the band with pairwise gaps >= ``min_gap``.

    Draws sorted uniforms on the band shrunk by the reserved gaps, then spreads
    them back out, so every feasible packing is reachable.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    span = omega_max - omega_min
    if omega_min < 0 or span < 0:
        raise ValueError(f"invalid band [{omega_min}, {omega_max}]")
    if count and span < count * min_gap:
        raise ValueError(
            f"cannot place {count} frequencies {min_gap:g} apart in a band of width {span:g}"
        )
    rng = np.random.default_rng(seed)
    gap = min_gap * (1 + 1e-9)
    slack = max(span - (count - 1) * gap, 0.0) if count else 0.0
    u = np.sort(rng.uniform(0.0, slack, size=count))
    freqs = omega_min + u + gap * np.arange(count)
    return FrequencySet(freqs, min_gap, label)


def gen_frequency_family(
    counts: Sequence[int], omega_min: float, omega_max: float, min_gap: float, seed=None, labels=None
) -> list[FrequencySet]:
    """Several mutually gap-separated sets, interleaved at random over one band."""
    rng = np.random.default_rng(seed)
    pool = gen_disjoint_frequencies(sum(counts), omega_min, omega_max, min_gap, rng).freqs
    order = rng.permutation(pool.size)
    labels = labels or [""] * len(counts)
    out, start = [], 0
    for c, lab in zip(counts, labels):
        out.append(FrequencySet(np.sort(pool[order[start:start + c]]), min_gap, lab))
        start += c
    return out


def randomize(spectrum: LineSpectrum, rng, random_amplitudes: bool = False) -> LineSpectrum:
    """One realization: keep ``|C|`` and draw uniform phases.

    With ``random_amplitudes`` each line instead gets ``|C| (g1 + j g2) / sqrt(2)``
    with standard normal ``g``, so ``E|C_k|^2`` equals the nominal ``|C_k|^2``.
    The mean line (omega = 0) is never randomised.
    """
    rng = np.random.default_rng(rng)
    om, amps = spectrum.omegas, np.abs(spectrum.amplitudes)
    if random_amplitudes:
        g = rng.standard_normal((om.size, 2))
        c = amps * (g[:, 0] + 1j * g[:, 1]) / np.sqrt(2.0)
    else:
        c = amps * np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=om.size))
    c = np.where(om == 0, spectrum.amplitudes.real, c)
    return LineSpectrum.from_arrays(om, c)


def _check_nyquist(spectrum: LineSpectrum, sample_period: float, what: str = "spectrum"):
    nyq = np.pi / sample_period
    if len(spectrum) and spectrum.omegas.max() >= nyq:
        raise PlantConfigError(
            f"{what} has a line at {spectrum.omegas.max():g} rad/s, at or above Nyquist {nyq:g} rad/s"
        )


def _sample_count(duration: float, sample_period: float) -> int:
    n = duration / sample_period
    if abs(n - round(n)) > 1e-6 * max(1.0, n) or round(n) < 1:
        raise PlantConfigError(f"duration {duration:g} is not a positive multiple of sample_period {sample_period:g}")
    return int(round(n)) + 1


def synthesize(
    spectrum: LineSpectrum,
    seed,
    duration: float,
    sample_period: float,
    start_time: float = 0.0,
    random_amplitudes: bool = False,
    channel_id: str = "",
) -> SampledRecord:
    """Sample ``m + sum 2|C_k| cos(omega_k t + phi_k)`` with random phases drawn from ``seed``."""
    _check_nyquist(spectrum, sample_period)
    n = _sample_count(duration, sample_period)
    lines = randomize(spectrum, seed, random_amplitudes)
    t = start_time + sample_period * np.arange(n)
    return SampledRecord(reconstruct(lines, t), sample_period, start_time, channel_id)


@dataclass(frozen=True)
class InputSpec:
    label: str
    spectrum: LineSpectrum = LineSpectrum()
    noise: LineSpectrum = LineSpectrum()


@dataclass(frozen=True)
class OutputSpec:
    label: str
    noise: LineSpectrum = LineSpectrum()


@dataclass(frozen=True)
class CouplingSpec:
    inputs: tuple[str, str]
    spectrum: LineSpectrum = LineSpectrum()


def _nonzero(spec: LineSpectrum) -> np.ndarray:
    om = spec.omegas
    return om[om > 0]


@dataclass(frozen=True)
class PlantConfig:
    """Ground truth for :func:`simulate`. Missing channels are disconnected."""

    inputs: tuple
    outputs: tuple
    channels: Mapping[tuple[str, str], RationalModel]
    duration: float
    sample_period: float
    coupling: tuple = ()
    seed: int = 0
    start_time: float = 0.0
    random_amplitudes: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "coupling", tuple(self.coupling))
        object.__setattr__(self, "channels", dict(self.channels))

    @property
    def input_labels(self) -> list[str]:
        return [s.label for s in self.inputs]

    @property
    def output_labels(self) -> list[str]:
        return [s.label for s in self.outputs]

    @property
    def delta(self) -> float:
        return coincidence_tolerance(self.duration)

    def channel(self, q: str, p: str) -> RationalModel | None:
        return self.channels.get((q, p))

    def response(self, q: str, p: str, nu) -> np.ndarray:
        model = self.channel(q, p)
        nu = np.asarray(nu, dtype=np.float64)
        if model is None:
            return np.zeros(nu.shape, dtype=complex)
        return model.response(nu)

    def validate(self) -> None:
        labels = self.input_labels + self.output_labels
        if len(set(labels)) != len(labels):
            raise PlantConfigError(f"duplicate channel labels: {labels}")
        if not self.inputs or not self.outputs:
            raise PlantConfigError("a plant needs at least one input and one output")
        _sample_count(self.duration, self.sample_period)
        for q, p in self.channels:
            if q not in self.input_labels or p not in self.output_labels:
                raise PlantConfigError(f"channel ({q}, {p}) names an unknown input or output")
        for c in self.coupling:
            if len(c.inputs) != 2 or c.inputs[0] == c.inputs[1] or not set(c.inputs) <= set(self.input_labels):
                raise PlantConfigError(f"coupling must join two distinct known inputs, got {c.inputs}")
        for s in self.inputs:
            _check_nyquist(s.spectrum, self.sample_period, f"input {s.label}")
            _check_nyquist(s.noise, self.sample_period, f"input noise {s.label}")
        for s in self.outputs:
            _check_nyquist(s.noise, self.sample_period, f"output noise {s.label}")
        for c in self.coupling:
            _check_nyquist(c.spectrum, self.sample_period, f"coupling {c.inputs}")

        delta = self.delta
        exact = [FrequencySet.from_values(_nonzero(s.spectrum), delta, s.label) for s in self.inputs]
        if len(exact) > 1:
            report = semiring_check(exact)
            if not report:
                raise PlantConfigError(f"exact input spectra overlap: {report.violations[:3]}")
        coupled = [FrequencySet.from_values(_nonzero(c.spectrum), delta, "coupling:" + "+".join(c.inputs)) for c in self.coupling]
        noise = [FrequencySet.from_values(_nonzero(s.noise), delta, "noise:" + s.label) for s in (*self.inputs, *self.outputs)]
        signal_sets = exact + coupled
        for group, others, what in ((coupled, exact, "coupling vs exact"), (noise, signal_sets, "noise vs signal")):
            for a in group:
                for b in others:
                    if a.label != b.label and len(set_intersect(a, b)):
                        raise PlantConfigError(f"{what} spectra overlap: {a.label} and {b.label}")
        for s in self.inputs:
            mean = s.spectrum.omegas == 0
            if np.any(mean) and np.any(s.spectrum.amplitudes[mean] != 0):
                for p in self.output_labels:
                    model = self.channel(s.label, p)
                    if model is not None and model.astatism > 0:
                        raise PlantConfigError(
                            f"input {s.label} has a nonzero mean but channel to {p} integrates it"
                        )


@dataclass
class Realization:
    """Observed records plus every ground-truth line spectrum behind them."""

    inputs: list
    outputs: list
    config: PlantConfig
    exact_inputs: dict  # label -> realized LineSpectrum
    input_noise: dict
    coupling: list  # (pair, realized LineSpectrum)
    exact_outputs: dict  # label -> LineSpectrum driven by exact inputs
    coupling_outputs: dict  # label -> LineSpectrum driven by coupling
    output_noise: dict

    def input(self, label: str) -> SampledRecord:
        return next(r for r in self.inputs if r.channel_id == label)

    def output(self, label: str) -> SampledRecord:
        return next(r for r in self.outputs if r.channel_id == label)

    @property
    def times(self) -> np.ndarray:
        return self.inputs[0].times

    def coupling_into(self, label: str) -> LineSpectrum:
        acc = LineSpectrum()
        for pair, spec in self.coupling:
            if label in pair:
                acc = acc.merged(spec)
        return acc

    def exact_input_signal(self, label: str, times=None) -> np.ndarray:
        return reconstruct(self.exact_inputs[label], self.times if times is None else times)

    def exact_output_signal(self, label: str, times=None, include_coupling: bool = False) -> np.ndarray:
        spec = self.exact_outputs[label]
        if include_coupling:
            spec = spec.merged(self.coupling_outputs[label])
        return reconstruct(spec, self.times if times is None else times)

    def channel_output_spectrum(self, q: str, p: str) -> LineSpectrum:
        """Output lines forced by the exact part of input ``q`` alone."""
        src = self.exact_inputs[q]
        return src.scaled(self.config.response(q, p, src.omegas))

    def truth_json_obj(self) -> dict:
        def lines(spec):
            return [{"omega": c.omega, "re": c.amplitude.real, "im": c.amplitude.imag} for c in spec]

        return {
            "format_version": 1,
            "name": self.config.name,
            "seed": self.config.seed,
            "exact_inputs": {k: lines(v) for k, v in self.exact_inputs.items()},
            "input_noise": {k: lines(v) for k, v in self.input_noise.items()},
            "coupling": [{"inputs": list(pair), "lines": lines(spec)} for pair, spec in self.coupling],
            "exact_outputs": {k: lines(v) for k, v in self.exact_outputs.items()},
            "coupling_outputs": {k: lines(v) for k, v in self.coupling_outputs.items()},
            "output_noise": {k: lines(v) for k, v in self.output_noise.items()},
        }


def simulate(config: PlantConfig) -> Realization:
    """Draw one realization of the plant; identical configs give identical samples."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = _sample_count(config.duration, config.sample_period)
    t = config.start_time + config.sample_period * np.arange(n)
    ra = config.random_amplitudes

    exact = {s.label: randomize(s.spectrum, rng, ra) for s in config.inputs}
    in_noise = {s.label: randomize(s.noise, rng, ra) for s in config.inputs}
    coupling = [(tuple(c.inputs), randomize(c.spectrum, rng, ra)) for c in config.coupling]
    out_noise = {s.label: randomize(s.noise, rng, ra) for s in config.outputs}

    inputs = []
    for s in config.inputs:
        total = exact[s.label].merged(in_noise[s.label])
        for pair, spec in coupling:
            if s.label in pair:
                total = total.merged(spec)
        inputs.append(SampledRecord(reconstruct(total, t), config.sample_period, config.start_time, s.label))

    exact_out, coupling_out, outputs = {}, {}, []
    for o in config.outputs:
        p = o.label
        forced = LineSpectrum()
        for q in config.input_labels:
            src = exact[q]
            if len(src) and config.channel(q, p) is not None:
                forced = forced.merged(src.scaled(config.response(q, p, src.omegas)))
        induced = LineSpectrum()
        for (r, c), spec in coupling:
            if len(spec):
                gain = config.response(r, p, spec.omegas) + config.response(c, p, spec.omegas)
                induced = induced.merged(spec.scaled(gain))
        exact_out[p], coupling_out[p] = forced, induced
        total = forced.merged(induced).merged(out_noise[p])
        outputs.append(SampledRecord(reconstruct(total, t), config.sample_period, config.start_time, p))

    return Realization(inputs, outputs, config, exact, in_noise, coupling, exact_out, coupling_out, out_noise)


# --- JSON schema -----------------------------------------------------------

def _spectrum_from_obj(obj) -> LineSpectrum:
    """``[{"omega": w, "amplitude": A}]`` with ``A`` the cosine peak amplitude."""
    if not obj:
        return LineSpectrum()
    return LineSpectrum.from_real_amplitudes([o["omega"] for o in obj], [o["amplitude"] for o in obj])


def _spectrum_to_obj(spec: LineSpectrum) -> list:
    return [{"omega": c.omega, "amplitude": abs(c.amplitude) * (1 if c.omega == 0 else 2)} for c in spec]


def plant_config_from_obj(obj: Mapping) -> PlantConfig:
    try:
        inputs = [
            InputSpec(i["label"], _spectrum_from_obj(i.get("tones")), _spectrum_from_obj(i.get("noise")))
            for i in obj["inputs"]
        ]
        outputs = [OutputSpec(o["label"], _spectrum_from_obj(o.get("noise"))) for o in obj["outputs"]]
        channels = {
            (c["input"], c["output"]): RationalModel.normalized(c["b"], c["a"]) for c in obj.get("channels", [])
        }
        coupling = [CouplingSpec(tuple(c["inputs"]), _spectrum_from_obj(c.get("tones"))) for c in obj.get("coupling", [])]
        return PlantConfig(
            inputs=inputs,
            outputs=outputs,
            channels=channels,
            duration=float(obj["duration"]),
            sample_period=float(obj["sample_period"]),
            coupling=coupling,
            seed=int(obj.get("seed", 0)),
            start_time=float(obj.get("start_time", 0.0)),
            random_amplitudes=bool(obj.get("random_amplitudes", False)),
            name=str(obj.get("name", "")),
        )
    except KeyError as exc:
        raise PlantConfigError(f"plant config is missing field {exc}") from None


def plant_config_to_obj(config: PlantConfig) -> dict:
    return {
        "format_version": 1,
        "name": config.name,
        "duration": config.duration,
        "sample_period": config.sample_period,
        "start_time": config.start_time,
        "seed": config.seed,
        "random_amplitudes": config.random_amplitudes,
        "inputs": [
            {"label": s.label, "tones": _spectrum_to_obj(s.spectrum), "noise": _spectrum_to_obj(s.noise)}
            for s in config.inputs
        ],
        "outputs": [{"label": s.label, "noise": _spectrum_to_obj(s.noise)} for s in config.outputs],
        "channels": [
            {"input": q, "output": p, "b": m.b.tolist(), "a": m.a.tolist()} for (q, p), m in config.channels.items()
        ],
        "coupling": [{"inputs": list(c.inputs), "tones": _spectrum_to_obj(c.spectrum)} for c in config.coupling],
    }


def load_plant_config(path) -> PlantConfig:
    return plant_config_from_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def write_realization_csv(path, realization: Realization) -> None:
    """Same layout the CLI ingests: a ``t`` column, then inputs, then outputs."""
    records = realization.inputs + realization.outputs
    t = realization.times
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [r.channel_id for r in records])
        cols = [r.samples for r in records]
        for k in range(t.size):
            w.writerow([repr(float(t[k]))] + [repr(float(c[k])) for c in cols])


# --- built-in scenarios ----------------------------------------------------

def _lines(freqs, amp) -> LineSpectrum:
    freqs = np.asarray(getattr(freqs, "freqs", freqs))
    return LineSpectrum.from_real_amplitudes(freqs, np.broadcast_to(amp, freqs.shape))


_NOISE_DB = 10.0
_NOISE_AMP = 10 ** (-_NOISE_DB / 20)
_BAND = (0.5, 14.0)
_T = 1200.0
_DT = 0.2


def _lag(k, tau) -> RationalModel:
    return RationalModel.normalized([k], [1.0, tau])


def _resonant(k, zero_tau, wn, zeta) -> RationalModel:
    return RationalModel.normalized([k, k * zero_tau], [1.0, 2 * zeta / wn, 1 / wn**2])


def _output_noise(freqs, output: str, inputs, channels) -> LineSpectrum:
    """Noise lines 10 dB below the median forced line of ``output``."""
    peaks = []
    for spec in inputs:
        model = channels.get((spec.label, output))
        if model is not None and len(spec.spectrum):
            peaks.append(2 * np.abs(spec.spectrum.amplitudes) * np.abs(model.response(spec.spectrum.omegas)))
    return _lines(freqs, _NOISE_AMP * float(np.median(np.concatenate(peaks))))


def _scenario_identity(seed: int) -> PlantConfig:
    (tones,) = gen_frequency_family([8], *_BAND, 0.3, seed)
    return PlantConfig(
        inputs=[InputSpec("x1", _lines(tones, 1.0))],
        outputs=[OutputSpec("y1")],
        channels={("x1", "y1"): RationalModel.normalized([1.0], [1.0])},
        duration=_T,
        sample_period=_DT,
        seed=seed,
        name="identity",
    )


def _scenario_independent_2x1(seed: int) -> PlantConfig:
    x1, x2, n1, n2, m1 = gen_frequency_family([8, 8, 4, 4, 8], *_BAND, 0.3, seed)
    inputs = [
        InputSpec("x1", _lines(x1, 1.0), _lines(n1, _NOISE_AMP)),
        InputSpec("x2", _lines(x2, 1.0), _lines(n2, _NOISE_AMP)),
    ]
    channels = {
        ("x1", "y1"): _lag(2.0, 0.1),
        ("x2", "y1"): _resonant(1.5, 0.3, 10.0, 0.75),
    }
    return PlantConfig(
        inputs=inputs,
        outputs=[OutputSpec("y1", _output_noise(m1, "y1", inputs, channels))],
        channels=channels,
        duration=_T,
        sample_period=_DT,
        seed=seed,
        name="independent-2x1",
    )


def _scenario_correlated_3x2(seed: int) -> PlantConfig:
    sets = gen_frequency_family([8, 8, 8, 3, 2, 2, 2, 2, 3, 3], *_BAND, 0.3, seed)
    x1, x2, x3, f12, f23, n1, n2, n3, m1, m2 = sets
    inputs = [
        InputSpec("x1", _lines(x1, 1.0), _lines(n1, _NOISE_AMP)),
        InputSpec("x2", _lines(x2, 1.0), _lines(n2, _NOISE_AMP)),
        InputSpec("x3", _lines(x3, 1.0), _lines(n3, _NOISE_AMP)),
    ]
    channels = {
        ("x1", "y1"): _lag(2.0, 0.1),
        ("x2", "y1"): _resonant(1.5, 0.3, 10.0, 0.75),
        ("x3", "y1"): _lag(2.0, 0.05),
        ("x1", "y2"): _lag(1.0, 0.08),
        ("x2", "y2"): _lag(1.2, 0.06),
        ("x3", "y2"): _resonant(1.0, 0.1, 8.0, 0.6),
    }
    return PlantConfig(
        inputs=inputs,
        outputs=[
            OutputSpec("y1", _output_noise(m1, "y1", inputs, channels)),
            OutputSpec("y2", _output_noise(m2, "y2", inputs, channels)),
        ],
        channels=channels,
        coupling=[CouplingSpec(("x1", "x2"), _lines(f12, 0.8)), CouplingSpec(("x2", "x3"), _lines(f23, 0.8))],
        duration=_T,
        sample_period=_DT,
        seed=seed,
        name="correlated-3x2",
    )


def pitch_channel_model() -> RationalModel:
    """Astatic ninth-order stand-in for a pitch channel with three elastic modes."""
    num = np.polynomial.polynomial.polyfromroots([-1.5])
    den = np.polynomial.polynomial.polyfromroots([0.0, -0.8, -20.0])
    for wn, zeta in ((6.0, 0.2), (9.0, 0.15), (13.0, 0.1)):
        den = np.polynomial.polynomial.polymul(den, [wn * wn, 2 * zeta * wn, 1.0])
    # low-frequency behaviour 0.8 / s
    gain = 0.8 * float(den[1]) / float(num[0])
    return RationalModel.normalized(gain * num, den)


def thrust_channel_model() -> RationalModel:
    """Fifth-order static channel with one lightly damped mode."""
    den = np.polynomial.polynomial.polyfromroots([-2.0, -8.0, -25.0])
    den = np.polynomial.polynomial.polymul(den, [144.0, 2 * 0.3 * 12.0, 1.0])
    return RationalModel.normalized([2.0 * den[0]], den)


def _scenario_pitch_4x1(seed: int) -> PlantConfig:
    x1, x2, x3, x4, n1, n2, m1 = gen_frequency_family([14, 6, 4, 4, 3, 3, 4], 0.3, 10.0, 0.2, seed)
    # scale the pitch demand with frequency so the integrating channel leaves every line visible
    x1_lines = LineSpectrum.from_real_amplitudes(x1.freqs, 0.5 + 0.5 * x1.freqs)
    return PlantConfig(
        inputs=[
            InputSpec("x1", x1_lines, _lines(n1, _NOISE_AMP)),
            InputSpec("x2", _lines(x2, 1.0), _lines(n2, _NOISE_AMP)),
            InputSpec("x3", _lines(x3, 1.0)),
            InputSpec("x4", _lines(x4, 1.0)),
        ],
        outputs=[OutputSpec("y", _lines(m1, 0.2))],
        channels={
            ("x1", "y"): pitch_channel_model(),
            ("x2", "y"): thrust_channel_model(),
            ("x3", "y"): _lag(1.0, 0.1),
            ("x4", "y"): _lag(0.8, 0.05),
        },
        duration=_T,
        sample_period=_DT,
        seed=seed,
        name="pitch-4x1",
    )


SCENARIOS = {
    "identity": _scenario_identity,
    "independent-2x1": _scenario_independent_2x1,
    "correlated-3x2": _scenario_correlated_3x2,
    "pitch-4x1": _scenario_pitch_4x1,
}


def scenario(name: str, seed: int = 1) -> PlantConfig:
    try:
        return SCENARIOS[name](seed)
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
