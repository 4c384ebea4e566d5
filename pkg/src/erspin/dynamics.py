"""Two-pulse (Hahn) and CPMG echo simulation on an ensemble of two-level lines.

Each spectral line is reduced to a two-level system in the frame rotating at
the drive frequency.  Time zero is the centre of the pi/2 pulse; the k-th pi
pulse is centred at (2k - 1) tau and the k-th echo forms at 2k tau.  Finite
pulses use the Rabi frequency ``1 / (2 t_pi)`` (MHz).  Dephasing is the
phenomenological amplitude factor ``exp(-t / T2)`` with t the time since the
pi/2 pulse.

Times are in microseconds and frequencies in MHz throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import simpson

from . import _kernels

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
MIN_SAMPLES_PER_TAU = 100
OVERSAMPLE = 10


class UndersamplingError(ValueError):
    pass


@dataclass(frozen=True)
class PulseSequence:
    kind: str  # "twoPulse" or "cpmg"
    drive_freq: float  # MHz
    tau: float  # us
    t_pi: float = 0.0  # us; 0 with ideal=True
    t_pi_half: float | None = None  # us; defaults to t_pi / 2
    n_pulses: int = 1
    b1: float = 0.0  # T, annotation
    ideal: bool = True
    laser_gate_windows: tuple = ()  # (start, stop) us pairs, annotation only

    def __post_init__(self):
        if self.kind not in ("twoPulse", "cpmg"):
            raise ValueError(f"kind must be 'twoPulse' or 'cpmg', got {self.kind!r}")
        if self.kind == "twoPulse":
            object.__setattr__(self, "n_pulses", 1)
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")
        if not self.ideal and not self.t_pi > 0:
            raise ValueError("finite pulses need t_pi > 0")
        if not self.tau > self.t_pi:
            raise ValueError("tau must exceed the pi-pulse length")
        if self.t_pi_half is None:
            object.__setattr__(self, "t_pi_half", self.t_pi / 2)

    @property
    def pi_pulse_centers(self):
        return [(2 * k - 1) * self.tau for k in range(1, self.n_pulses + 1)]

    @property
    def echo_centers(self):
        return [2 * k * self.tau for k in range(1, self.n_pulses + 1)]

    @property
    def rabi(self):
        return 0.5 / self.t_pi if self.t_pi > 0 else math.inf

    def segments(self):
        """(start, duration, omega, phase, angle) rows for the echo kernels."""
        # Hahn: all pulses about x; CPMG: refocusing pulses about y
        pi_phase = 0.0 if self.kind == "twoPulse" else math.pi / 2
        rows = []
        if self.ideal:
            rows.append((0.0, 0.0, 0.0, 0.0, math.pi / 2))
            t = 0.0
            for c in self.pi_pulse_centers:
                rows.append((t, c - t, 0.0, 0.0, -1.0))
                rows.append((c, 0.0, 0.0, pi_phase, math.pi))
                t = c
            rows.append((t, 0.0, 0.0, 0.0, -1.0))
        else:
            h = self.t_pi_half / 2
            rows.append((-h, self.t_pi_half, self.rabi, 0.0, -1.0))
            t = h
            for c in self.pi_pulse_centers:
                start = c - self.t_pi / 2
                rows.append((t, start - t, 0.0, 0.0, -1.0))
                rows.append((start, self.t_pi, self.rabi, pi_phase, -1.0))
                t = start + self.t_pi
            rows.append((t, 0.0, 0.0, 0.0, -1.0))
        return np.array(rows, dtype=float)


@dataclass(frozen=True)
class EnsembleSpec:
    """Spectral lines ``(frequency MHz, weight, T2 us)`` with Gaussian inhomogeneous broadening."""

    lines: tuple
    inhom_width: float = 0.0  # MHz FWHM
    n_spins: int = 200
    seed: int = 0

    def __post_init__(self):
        lines = tuple(tuple(float(x) for x in ln) for ln in self.lines)
        if not lines:
            raise ValueError("at least one line is required")
        for f, w, t2 in lines:
            if not w > 0:
                raise ValueError("line weights must be positive")
            if not t2 > 0:
                raise ValueError("T2 must be positive (use inf for no decay)")
        if self.n_spins < 1:
            raise ValueError("n_spins must be >= 1")
        if self.inhom_width < 0:
            raise ValueError("inhom_width must be non-negative")
        object.__setattr__(self, "lines", lines)

    def members(self, drive_freq):
        """Detunings, weights and 1/T2 for every simulated ensemble member."""
        rng = np.random.default_rng(self.seed)
        per_line = self.n_spins if self.inhom_width > 0 else 1
        total = sum(w for _, w, _ in self.lines)
        det, wt, inv = [], [], []
        sigma = self.inhom_width * FWHM_TO_SIGMA
        for f, w, t2 in self.lines:
            offs = rng.normal(0.0, sigma, per_line) if per_line > 1 else np.zeros(1)
            det.append(f - drive_freq + offs)
            wt.append(np.full(per_line, w / total / per_line))
            inv.append(np.full(per_line, 0.0 if math.isinf(t2) else 1.0 / t2))
        return np.concatenate(det), np.concatenate(wt), np.concatenate(inv)

    def max_detuning(self, drive_freq):
        return max(abs(f - drive_freq) for f, _, _ in self.lines) + self.inhom_width


@dataclass(frozen=True, eq=False)
class EchoTrace:
    times: np.ndarray  # us, uniform
    amplitude: np.ndarray  # complex
    echo_centers: list = dc_field(default_factory=list)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def rows(self):
        return ([t, a.real, a.imag, abs(a)] for t, a in zip(self.times, self.amplitude))

    CSV_HEADER = ("time_us", "re", "im", "abs")


def required_sample_rate(seq: PulseSequence, ens: EnsembleSpec):
    """Minimum sampling rate (samples/us) for the given sequence and ensemble."""
    return OVERSAMPLE * ens.max_detuning(seq.drive_freq)


def simulate_sequence(seq: PulseSequence, ens: EnsembleSpec, sample_rate=None, t_end=None,
                      use_numba=None, threads=1) -> EchoTrace:
    """Ensemble-averaged complex coherence sampled on a uniform grid from t = 0.

    The sampling step is chosen so that tau is an integer number of samples,
    which puts every nominal echo centre exactly on a sample.
    """
    need = required_sample_rate(seq, ens)
    if sample_rate is None:
        sample_rate = need
    elif sample_rate < need:
        raise UndersamplingError(
            f"sample rate {sample_rate:g} /us is below the required {need:g} /us "
            f"({OVERSAMPLE}x the maximum detuning)"
        )
    per_tau = max(MIN_SAMPLES_PER_TAU, math.ceil(seq.tau * sample_rate - 1e-9))
    dt = seq.tau / per_tau
    if t_end is None:
        t_end = seq.echo_centers[-1] + seq.tau
    times = dt * np.arange(int(round(t_end / dt)) + 1)
    det, wt, inv = ens.members(seq.drive_freq)
    amp = _kernels.echo_signal(times, det, wt, inv, seq.segments(), use_numba=use_numba, threads=threads)
    return EchoTrace(times, amp, list(seq.echo_centers))


def echo_envelope(trace: EchoTrace, window):
    """Echo intensities: integral of |amplitude|^2 over a window centred on each echo.

    Returns a list of ``(center, intensity)``.  Simpson's rule on the interior
    samples, trapezoids on the partial end intervals.
    """
    centers = list(trace.echo_centers)
    if not window > 0:
        raise ValueError("window must be positive")
    if len(centers) > 1 and window > np.min(np.diff(centers)) + 1e-12:
        raise ValueError("integration windows of neighbouring echoes overlap")
    t = trace.times
    y = np.abs(trace.amplitude) ** 2
    out = []
    for c in centers:
        lo, hi = c - window / 2, c + window / 2
        if lo < t[0] - 1e-9 or hi > t[-1] + 1e-9:
            raise ValueError(f"echo window around {c} us extends beyond the trace")
        out.append((c, _integrate(t, y, max(lo, t[0]), min(hi, t[-1]))))
    return out


def _integrate(t, y, lo, hi):
    eps = 1e-9 * (t[1] - t[0])
    inner = np.nonzero((t >= lo - eps) & (t <= hi + eps))[0]
    if len(inner) < 2:
        ya, yb = np.interp([lo, hi], t, y)
        return 0.5 * (ya + yb) * (hi - lo)
    i0, i1 = inner[0], inner[-1]
    total = simpson(y[i0:i1 + 1], x=t[i0:i1 + 1])
    if t[i0] > lo:
        total += 0.5 * (np.interp(lo, t, y) + y[i0]) * (t[i0] - lo)
    if t[i1] < hi:
        total += 0.5 * (np.interp(hi, t, y) + y[i1]) * (hi - t[i1])
    return float(total)


@dataclass(frozen=True, eq=False)
class DecayData:
    kind: str
    x: np.ndarray  # tau (twoPulse) or T (cpmg), us
    intensity: np.ndarray

    @property
    def pairs(self):
        return list(zip(self.x.tolist(), self.intensity.tolist()))


def decay_model(kind, x, t2, stretch=1.0, amplitude=1.0):
    """Noiseless echo intensity.

    twoPulse (x = tau): ``A exp(-2 (2 tau / T2)^s)``, i.e. ``exp(-4 tau / T2)`` for s = 1.
    cpmg (x = T since the pi/2 pulse): ``A exp(-2 (T / T2)^s)``.
    """
    x = np.asarray(x, dtype=float)
    if kind == "twoPulse":
        arg = 2.0 * x / t2
    elif kind == "cpmg":
        arg = x / t2
    else:
        raise ValueError(f"kind must be 'twoPulse' or 'cpmg', got {kind!r}")
    return amplitude * np.exp(-2.0 * arg**stretch)


def decay_curve(kind, t2, points, stretch=1.0, noise=0.0, seed=0) -> DecayData:
    """Synthetic echo-decay dataset with multiplicative Gaussian noise of relative size ``noise``."""
    if not t2 > 0:
        raise ValueError("T2 must be positive")
    if not 1.0 <= stretch <= 3.0:
        raise ValueError("stretch must lie in [1, 3]")
    x = np.asarray(points, dtype=float)
    y = decay_model(kind, x, t2, stretch)
    if noise:
        y = y * (1.0 + noise * np.random.default_rng(seed).standard_normal(len(x)))
    return DecayData(kind, x, y)
