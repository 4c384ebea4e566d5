"""Field x frequency spectrum maps: synthesis, file I/O and model/data comparison.

The synthetic intensity is a proxy for a Raman-heterodyne map:

    I(B, f) = R(f) * sum_t S_t(B)^2 * dp_t(B) * L(f - f_t(B))

with S_t the RF transition strength, dp_t the Boltzmann population difference
at the resonator temperature, L an area-normalized lineshape and R a
Lorentzian resonator response in drive frequency.  It reproduces line
positions and rough relative brightness only; optical pumping and detection
efficiency are not modeled.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import _kernels
from .io import format_value, read_csv, read_kv, write_csv, write_kv
from .levels import DEFAULT_GAP, degeneracy_groups, solve_many
from .spin import as_model
from .transitions import _group_average, rf_operator

H_OVER_K = 4.799243073366221e-5  # K/MHz
DEFAULT_FWHM = 5.0  # MHz


class MapFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LineshapeSpec:
    kind: str = "lorentzian"
    fwhm: float = DEFAULT_FWHM  # MHz

    def __post_init__(self):
        if self.kind not in ("lorentzian", "gaussian"):
            raise ValueError(f"unknown lineshape {self.kind!r}")
        if not self.fwhm > 0:
            raise ValueError("fwhm must be positive")

    @property
    def code(self):
        return _kernels.LORENTZIAN if self.kind == "lorentzian" else _kernels.GAUSSIAN


@dataclass(frozen=True, eq=False)
class SpectrumGrid:
    """Intensity on a (field step, frequency) grid.

    ``field_values`` are signed field magnitudes (T) along ``direction``.
    ``degenerate`` is set when the map was identically zero and could not be
    normalized.
    """

    field_values: np.ndarray
    freqs: np.ndarray
    intensity: np.ndarray
    direction: np.ndarray = dc_field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    meta: dict = dc_field(default_factory=dict)
    degenerate: bool = False

    def __post_init__(self):
        inten = np.asarray(self.intensity, dtype=float)
        if inten.shape != (len(self.field_values), len(self.freqs)):
            raise ValueError("intensity shape must be (len(field_values), len(freqs))")
        if np.any(inten < 0):
            raise ValueError("intensity must be non-negative")

    @property
    def fields(self):
        return np.outer(self.field_values, self.direction)

    def equals(self, other):
        return (
            np.array_equal(self.field_values, other.field_values)
            and np.array_equal(self.freqs, other.freqs)
            and np.array_equal(self.intensity, other.intensity)
            and np.array_equal(self.direction, other.direction)
        )


def _sweep_direction(fields):
    span = fields[-1] - fields[0]
    n = np.linalg.norm(span)
    if n == 0:
        nz = np.linalg.norm(fields[0])
        return fields[0] / nz if nz else np.array([0.0, 0.0, 1.0])
    return span / n


def boltzmann_populations(energies, temperature):
    """Thermal populations for an (..., d) array of energies in MHz."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    beta = 0.0 if np.isinf(temperature) else H_OVER_K / temperature
    e = np.asarray(energies, dtype=float)
    w = np.exp(-(e - e.min(axis=-1, keepdims=True)) * beta)
    return w / w.sum(axis=-1, keepdims=True)


def transition_lines(model, fields, rf_direction, temperature, populations="boltzmann",
                     gap_threshold=DEFAULT_GAP):
    """Line centres (MHz) and weights (strength^2 * population difference) for every pair.

    Returns ``(centers, weights, pairs)`` with centers/weights of shape
    (n_fields, n_pairs) and pairs the (i, j) index arrays.
    """
    model = as_model(model)
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    e, v = solve_many(model.hamiltonians(fields))
    rf = rf_operator(model, rf_direction)
    m2 = np.abs(np.einsum("nai,ab,nbj->nij", v.conj(), rf, v)) ** 2
    for k in np.nonzero(np.any(np.diff(e, axis=1) < gap_threshold, axis=1))[0]:
        m2[k] = _group_average(m2[k], degeneracy_groups(e[k], gap_threshold), conserve_total=True) ** 2
    i, j = np.triu_indices(model.dim, 1)
    centers = e[:, j] - e[:, i]
    if populations == "boltzmann":
        p = boltzmann_populations(e, temperature)
        dp = p[:, i] - p[:, j]
    elif populations == "uniform":
        dp = np.ones_like(centers)
    else:
        raise ValueError(f"populations must be 'boltzmann' or 'uniform', got {populations!r}")
    return centers, m2[:, i, j] * dp, (i, j)


def resonator_response(freqs, center, width):
    if center is None:
        return np.ones_like(freqs)
    if not width > 0:
        raise ValueError("resonator width must be positive")
    x = (freqs - center) / (0.5 * width)
    return 1.0 / (1.0 + x * x)


def synthesize_map(
    model,
    fields,
    freqs,
    rf_direction,
    lineshape=LineshapeSpec(),
    temperature=4.7,
    resonator_center=None,
    resonator_width=None,
    populations="boltzmann",
    threads=1,
    meta=None,
    gap_threshold=DEFAULT_GAP,
) -> SpectrumGrid:
    """Synthetic map over a field sweep ``fields`` (n, 3) and frequency axis ``freqs`` (MHz).

    ``populations="uniform"`` drops the Boltzmann factor (for optically
    pumped excited-state maps).  The result is scaled to unit maximum.
    """
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    freqs = np.asarray(freqs, dtype=float)
    if np.any(np.diff(freqs) <= 0):
        raise ValueError("frequency axis must be strictly increasing")
    direction = _sweep_direction(fields)
    field_values = fields @ direction
    if len(field_values) > 1 and not (
        np.all(np.diff(field_values) > 0) or np.all(np.diff(field_values) < 0)
    ):
        raise ValueError("field sweep must be monotone along its direction")
    centers, weights, _ = transition_lines(model, fields, rf_direction, temperature, populations, gap_threshold)
    inten = _kernels.accumulate_lines(freqs, centers, weights, lineshape.fwhm, lineshape.code, threads=threads)
    inten *= resonator_response(freqs, resonator_center, resonator_width)[None, :]
    np.maximum(inten, 0.0, out=inten)
    top = inten.max() if inten.size else 0.0
    degenerate = not top > 0
    if not degenerate:
        inten /= top
    info = {
        "temperature_K": temperature,
        "lineshape": lineshape.kind,
        "fwhm_MHz": lineshape.fwhm,
        "populations": populations,
        "rf_direction": " ".join(format_value(float(x)) for x in np.asarray(rf_direction, float)),
    }
    if resonator_center is not None:
        info["resonator_center_MHz"] = resonator_center
        info["resonator_width_MHz"] = resonator_width
    if degenerate:
        info["normalization"] = "degenerate"
    info.update(meta or {})
    return SpectrumGrid(field_values, freqs, inten, direction, info, degenerate)


def export_map(grid: SpectrumGrid, path, meta=None, sidecar=True):
    """Write the grid CSV (first row frequencies, first column fields) and a ``.meta`` sidecar."""
    info = {"direction": " ".join(format_value(float(x)) for x in grid.direction)}
    info.update(meta or {})
    rows = ([fv, *row] for fv, row in zip(grid.field_values, grid.intensity))
    text = write_csv(path, ["field_T", *(format_value(float(f)) for f in grid.freqs)], rows, info)
    if sidecar:
        write_kv(str(path) + ".meta", {**grid.meta, "degenerate": grid.degenerate})
    return text


def _monotone(x):
    d = np.diff(x)
    return np.all(d > 0) or np.all(d < 0)


def ingest_measured_map(path) -> SpectrumGrid:
    """Read a grid CSV: first row = frequency axis (MHz), first column = field (T)."""
    meta, header, rows = read_csv(path)
    try:
        freqs = np.array([float(x) for x in header[1:]])
    except ValueError as exc:
        raise MapFormatError(f"{path}: header row: bad frequency value ({exc})") from None
    if len(freqs) == 0:
        raise MapFormatError(f"{path}: header row has no frequency columns")
    if np.any(~np.isfinite(freqs)):
        raise MapFormatError(f"{path}: header row: non-finite frequency")
    if not _monotone(freqs):
        raise MapFormatError(f"{path}: header row: frequency axis is not monotone")
    fv = np.empty(len(rows))
    inten = np.empty((len(rows), len(freqs)))
    for r, (lineno, cells) in enumerate(rows):
        if len(cells) != len(freqs) + 1:
            raise MapFormatError(
                f"{path}: row {r + 1} (line {lineno}) has {len(cells)} cells, expected {len(freqs) + 1}"
            )
        try:
            vals = np.array([float(c) for c in cells])
        except ValueError as exc:
            raise MapFormatError(f"{path}: row {r + 1} (line {lineno}): {exc}") from None
        bad = np.nonzero(~np.isfinite(vals))[0]
        if len(bad):
            raise MapFormatError(f"{path}: row {r + 1} (line {lineno}), column {bad[0] + 1}: NaN or infinite value")
        if np.any(vals[1:] < 0):
            raise MapFormatError(f"{path}: row {r + 1} (line {lineno}): negative intensity")
        fv[r] = vals[0]
        inten[r] = vals[1:]
    if len(fv) > 1 and not _monotone(fv):
        raise MapFormatError(f"{path}: field column is not monotone")
    direction = np.array([0.0, 0.0, 1.0])
    if "direction" in meta:
        direction = np.array([float(x) for x in meta.pop("direction").split()])
    sidecar = Path(str(path) + ".meta")
    info = dict(meta)
    degenerate = False
    if sidecar.exists():
        info.update(read_kv(sidecar))
        degenerate = info.pop("degenerate", "0") in ("1", "true", "True")
    return SpectrumGrid(fv, freqs, inten, direction, info, degenerate)


def _ascending(grid):
    fv, fr, inten = grid.field_values, grid.freqs, grid.intensity
    if len(fv) > 1 and fv[1] < fv[0]:
        fv, inten = fv[::-1], inten[::-1]
    if len(fr) > 1 and fr[1] < fr[0]:
        fr, inten = fr[::-1], inten[:, ::-1]
    return fv, fr, inten


def _step(x):
    return float(np.median(np.abs(np.diff(x)))) if len(x) > 1 else 0.0


def _interp_freq(fr, inten, frq):
    """Linear interpolation of every row of ``inten`` from axis ``fr`` onto ``frq`` (zero outside)."""
    if len(fr) == 1:
        return np.where(frq[None, :] == fr[0], inten, 0.0)
    k = np.clip(np.searchsorted(fr, frq, side="right") - 1, 0, len(fr) - 2)
    w = (frq - fr[k]) / (fr[k + 1] - fr[k])
    out = inten[:, k] * (1.0 - w) + inten[:, k + 1] * w
    out[:, (frq < fr[0]) | (frq > fr[-1])] = 0.0
    return out


def _interp_field(fv, inten, fq):
    if len(fv) == 1:
        return np.repeat(inten, len(fq), axis=0)
    return _interp_freq(fv, inten.T, fq).T


def compare_maps(model: SpectrumGrid, data: SpectrumGrid, window=None, max_offset=50.0, offset_step=None):
    """Normalized cross-correlation maximized over a frequency offset.

    Both maps are interpolated onto the coarser of the two grids over their
    overlap.  The model is shifted as ``model(B, f - offset)``; returns
    ``(score, offset)`` with score in [-1, 1] and offset in MHz.
    """
    mb, mf, mi = _ascending(model)
    db, df, di = _ascending(data)
    b_lo, b_hi = max(mb[0], db[0]), min(mb[-1], db[-1])
    f_lo, f_hi = max(mf[0], df[0]), min(mf[-1], df[-1])
    if window is not None:
        f_lo, f_hi = max(f_lo, window[0]), min(f_hi, window[1])
    if b_lo > b_hi or f_lo >= f_hi:
        raise ValueError("model and data maps do not overlap")
    fstep = max(_step(mf), _step(df))
    bstep = max(_step(mb), _step(db))
    step = float(offset_step) if offset_step else fstep
    n_b = int(np.floor((b_hi - b_lo) / bstep + 1e-9)) + 1 if bstep > 0 else 1
    bq = b_lo + bstep * np.arange(n_b)
    n_f = int(np.floor((f_hi - f_lo) / fstep + 1e-9)) + 1
    fq = f_lo + fstep * np.arange(n_f)
    dq = _interp_freq(df, _interp_field(db, di, bq), fq)
    m_rows = _interp_field(mb, mi, bq)

    n_off = int(np.floor(max_offset / step + 1e-9))
    offsets = step * np.arange(-n_off, n_off + 1)
    best = (-np.inf, 0.0)
    for off in sorted(offsets, key=lambda o: (abs(o), o)):
        src = fq - off
        valid = (src >= mf[0]) & (src <= mf[-1])
        if valid.sum() < 2:
            continue
        mq = _interp_freq(mf, m_rows, src[valid])
        score = _ncc(mq, dq[:, valid])
        if score > best[0] + 1e-12:
            best = (score, float(off))
    if not np.isfinite(best[0]):
        raise ValueError("no frequency offset leaves an overlap between the maps")
    return best


def _ncc(a, b):
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    den = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / den) if den > 0 else 0.0
