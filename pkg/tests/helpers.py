import numpy as np

from freqsep import LineSpectrum, SampledRecord, trapezoid_leakage


def sample_lines(spectrum: LineSpectrum, t) -> np.ndarray:
    """Direct cosine evaluation, independent of the library's reconstruction."""
    t = np.asarray(t, dtype=float)
    x = np.zeros_like(t)
    for c in spectrum:
        if c.omega == 0:
            x += c.amplitude.real
        else:
            x += 2 * abs(c.amplitude) * np.cos(c.omega * t + np.angle(c.amplitude))
    return x


def record_of(spectrum: LineSpectrum, duration: float, dt: float, start: float = 0.0, label: str = "x"):
    n = int(round(duration / dt)) + 1
    t = start + dt * np.arange(n)
    return SampledRecord(sample_lines(spectrum, t), dt, start, label)


def cosines(omegas, peaks, phases=None):
    """``sum A_k cos(w_k t + phi_k)`` as a LineSpectrum."""
    omegas = np.asarray(omegas, dtype=float)
    peaks = np.broadcast_to(np.asarray(peaks, dtype=float), omegas.shape)
    phases = np.zeros_like(omegas) if phases is None else np.asarray(phases, dtype=float)
    return LineSpectrum.from_arrays(omegas, 0.5 * peaks * np.exp(1j * phases))


def product_leakage(spec, T, dt):
    """Bound on the off-diagonal terms of the time average of x^2."""
    om, amp = spec.omegas, np.abs(spec.amplitudes)
    tol = 0.0
    for i in range(om.size):
        tol += 2 * amp[i] ** 2 * trapezoid_leakage(2 * om[i], T, dt)
        for j in range(om.size):
            if i != j:
                tol += 2 * amp[i] * amp[j] * (
                    trapezoid_leakage(om[i] - om[j], T, dt) + trapezoid_leakage(om[i] + om[j], T, dt)
                )
    return float(tol)
