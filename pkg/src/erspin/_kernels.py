"""Numeric inner loops, each in a numba and a pure-numpy flavour.

The public names (``accumulate_lines``, ``echo_signal``) dispatch on
:data:`erspin._accel.USE_NUMBA`.  Both flavours are importable directly so
they can be benchmarked and cross-checked against each other.

Every reduction runs in a fixed order per output element, so results do not
depend on the number of threads.
"""

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ._accel import USE_NUMBA, njit, prange

LORENTZIAN, GAUSSIAN = 0, 1
_LN2 = math.log(2.0)


# --- lineshape accumulation ------------------------------------------------


@njit(parallel=True)
def _accumulate_lines_nb(freqs, centers, weights, hwhm, kind, out):
    n_rows, n_lines = centers.shape
    n_freq = freqs.shape[0]
    if kind == LORENTZIAN:
        norm = 1.0 / (math.pi * hwhm)
    else:
        norm = math.sqrt(_LN2 / math.pi) / hwhm
    for r in prange(n_rows):
        for t in range(n_lines):
            w = weights[r, t]
            if w == 0.0:
                continue
            c = centers[r, t]
            for k in range(n_freq):
                x = (freqs[k] - c) / hwhm
                if kind == LORENTZIAN:
                    out[r, k] += w * norm / (1.0 + x * x)
                else:
                    out[r, k] += w * norm * math.exp(-_LN2 * x * x)
    return out


def _accumulate_rows_np(freqs, centers, weights, hwhm, kind, out):
    if kind == LORENTZIAN:
        norm = 1.0 / (np.pi * hwhm)
    else:
        norm = np.sqrt(_LN2 / np.pi) / hwhm
    for r in range(centers.shape[0]):
        keep = weights[r] != 0.0
        if not np.any(keep):
            continue
        x = (freqs[None, :] - centers[r, keep, None]) / hwhm
        shape = 1.0 / (1.0 + x * x) if kind == LORENTZIAN else np.exp(-_LN2 * x * x)
        # sequential over lines to keep the summation order fixed
        acc = out[r]
        for w, row in zip(weights[r, keep], shape):
            acc += w * norm * row
    return out


def _accumulate_lines_np(freqs, centers, weights, hwhm, kind, out, threads=1):
    if threads <= 1 or centers.shape[0] < 2:
        return _accumulate_rows_np(freqs, centers, weights, hwhm, kind, out)
    chunks = np.array_split(np.arange(centers.shape[0]), threads)
    with ThreadPoolExecutor(threads) as pool:
        list(pool.map(lambda idx: _fill_rows(freqs, centers, weights, hwhm, kind, out, idx), chunks))
    return out


def _fill_rows(freqs, centers, weights, hwhm, kind, out, idx):
    if len(idx) == 0:
        return
    sub = np.zeros((len(idx), out.shape[1]))
    _accumulate_rows_np(freqs, centers[idx], weights[idx], hwhm, kind, sub)
    out[idx] += sub


def accumulate_lines(freqs, centers, weights, fwhm, kind=LORENTZIAN, threads=1, use_numba=None):
    """Sum area-normalized lines into a (rows, len(freqs)) array.

    ``centers`` and ``weights`` have shape (rows, lines); lines with zero weight
    are skipped.
    """
    freqs = np.ascontiguousarray(freqs, dtype=float)
    centers = np.ascontiguousarray(centers, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    out = np.zeros((centers.shape[0], freqs.shape[0]))
    hwhm = 0.5 * float(fwhm)
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        import numba

        prev = numba.get_num_threads()
        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
        try:
            return _accumulate_lines_nb(freqs, centers, weights, hwhm, kind, out)
        finally:
            numba.set_num_threads(prev)
    return _accumulate_lines_np(freqs, centers, weights, hwhm, kind, out, threads)


# --- two-level ensemble propagation ---------------------------------------
#
# Rotating-frame Hamiltonian (cycles/us): H = delta/2 sz + omega/2 (cos(phi) sx + sin(phi) sy).
# Spinor (a, b) on (|up>, |down>); coherence m = 2 a conj(b).


@njit
def _rotate_nb(a, b, delta, omega, phase, t, angle):
    if angle >= 0.0:
        # instantaneous rotation by `angle` about (cos phi, sin phi, 0)
        nx, ny, nz = math.cos(phase), math.sin(phase), 0.0
        half = 0.5 * angle
    else:
        w = math.sqrt(delta * delta + omega * omega)
        if w == 0.0:
            return a, b
        nx, ny, nz = omega * math.cos(phase) / w, omega * math.sin(phase) / w, delta / w
        half = math.pi * w * t
    c, s = math.cos(half), math.sin(half)
    u00 = complex(c, -s * nz)
    u01 = -1j * s * complex(nx, -ny)
    u10 = -1j * s * complex(nx, ny)
    u11 = complex(c, s * nz)
    return u00 * a + u01 * b, u10 * a + u11 * b


@njit
def _boundary_states_nb(det, seg_start, seg_dur, seg_omega, seg_phase, seg_angle):
    n_spin, n_seg = det.shape[0], seg_start.shape[0]
    states = np.empty((n_spin, n_seg + 1, 2), dtype=np.complex128)
    for s in range(n_spin):
        a, b = 0.0 + 0.0j, 1.0 + 0.0j
        states[s, 0, 0], states[s, 0, 1] = a, b
        for g in range(n_seg):
            a, b = _rotate_nb(a, b, det[s], seg_omega[g], seg_phase[g], seg_dur[g], seg_angle[g])
            states[s, g + 1, 0], states[s, g + 1, 1] = a, b
    return states


@njit(parallel=True)
def _echo_signal_nb(times, det, weight, inv_t2, seg_start, seg_dur, seg_omega, seg_phase, seg_angle, seg_of):
    states = _boundary_states_nb(det, seg_start, seg_dur, seg_omega, seg_phase, seg_angle)
    out = np.zeros(times.shape[0], dtype=np.complex128)
    for k in prange(times.shape[0]):
        g = seg_of[k]
        t = times[k]
        el = t - seg_start[g]
        acc = 0.0 + 0.0j
        for s in range(det.shape[0]):
            a, b = _rotate_nb(states[s, g, 0], states[s, g, 1], det[s], seg_omega[g], seg_phase[g], el, -1.0)
            acc += weight[s] * math.exp(-t * inv_t2[s]) * 2.0 * a * np.conj(b)
        out[k] = acc
    return out


def _unitary_np(delta, omega, phase, t, angle):
    """Elements (u00, u01, u10, u11) broadcast over delta and t."""
    if angle >= 0.0:
        nx, ny, nz = np.cos(phase), np.sin(phase), np.zeros_like(delta)
        half = np.full(np.broadcast(delta, t).shape, 0.5 * angle)
    else:
        w = np.sqrt(delta * delta + omega * omega)
        safe = np.where(w == 0.0, 1.0, w)
        nx = np.where(w == 0.0, 0.0, omega * np.cos(phase) / safe)
        ny = np.where(w == 0.0, 0.0, omega * np.sin(phase) / safe)
        nz = np.where(w == 0.0, 0.0, delta / safe)
        half = np.pi * w * t
    c, s = np.cos(half), np.sin(half)
    return c - 1j * s * nz, -1j * s * (nx - 1j * ny), -1j * s * (nx + 1j * ny), c + 1j * s * nz


def _echo_signal_np(times, det, weight, inv_t2, seg_start, seg_dur, seg_omega, seg_phase, seg_angle, seg_of,
                    chunk=1024):
    n_seg = len(seg_start)
    a = np.zeros(len(det), dtype=complex)
    b = np.ones(len(det), dtype=complex)
    bounds = [(a, b)]
    for g in range(n_seg):
        u00, u01, u10, u11 = _unitary_np(det, seg_omega[g], seg_phase[g], seg_dur[g], seg_angle[g])
        a, b = u00 * a + u01 * b, u10 * a + u11 * b
        bounds.append((a, b))
    out = np.zeros(len(times), dtype=complex)
    for g in np.unique(seg_of):
        idx = np.nonzero(seg_of == g)[0]
        a0, b0 = bounds[g]
        for lo in range(0, len(idx), chunk):
            sel = idx[lo:lo + chunk]
            t = times[sel]
            el = (t - seg_start[g])[None, :]
            u00, u01, u10, u11 = _unitary_np(det[:, None], seg_omega[g], seg_phase[g], el, -1.0)
            a = u00 * a0[:, None] + u01 * b0[:, None]
            b = u10 * a0[:, None] + u11 * b0[:, None]
            m = 2.0 * a * b.conj() * (weight[:, None] * np.exp(-np.outer(inv_t2, t)))
            out[sel] = m.sum(axis=0)
    return out


def echo_signal(times, det, weight, inv_t2, segments, use_numba=None, threads=1):
    """Weighted ensemble coherence at each sample time.

    ``segments`` is a (n, 5) array of (start, duration, omega, phase, angle);
    ``angle >= 0`` marks an instantaneous rotation.  Samples are evaluated in
    the last segment that starts at or before them.
    """
    seg = np.asarray(segments, dtype=float)
    times = np.ascontiguousarray(times, dtype=float)
    starts = np.ascontiguousarray(seg[:, 0])
    seg_of = np.searchsorted(starts, times, side="right") - 1
    if np.any(seg_of < 0):
        raise ValueError("sample times precede the first segment")
    args = (
        times,
        np.ascontiguousarray(det, dtype=float),
        np.ascontiguousarray(weight, dtype=float),
        np.ascontiguousarray(inv_t2, dtype=float),
        starts,
        np.ascontiguousarray(seg[:, 1]),
        np.ascontiguousarray(seg[:, 2]),
        np.ascontiguousarray(seg[:, 3]),
        np.ascontiguousarray(seg[:, 4]),
        seg_of.astype(np.int64),
    )
    if use_numba is None:
        use_numba = USE_NUMBA
    if use_numba:
        import numba

        prev = numba.get_num_threads()
        numba.set_num_threads(max(1, min(threads, numba.config.NUMBA_NUM_THREADS)))
        try:
            return _echo_signal_nb(*args)
        finally:
            numba.set_num_threads(prev)
    return _echo_signal_np(*args)
