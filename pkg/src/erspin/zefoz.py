"""Search for zero first-order Zeeman (ZEFOZ) points of a transition.

Local search is a Nelder-Mead simplex on |grad f|^2 from seeded random starts
inside the search box, followed by a few Newton steps ``B -= C^-1 grad f``
using the finite-difference curvature C.  Pair indices always refer to the
energy-ordered levels at the current field.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .levels import DEFAULT_GAP, solve_levels
from .spin import as_model
from .transitions import DEFAULT_STEP, LevelTrackingError, freq_curvature, freq_gradient

log = logging.getLogger(__name__)

#: Objective value returned when either level of the pair is degenerate.
DEGENERACY_PENALTY = 1e12  # MHz^2/T^2
DEFAULT_TOL = 1e-3  # MHz/T
MERGE_RADIUS = 1e-4  # T
DEFAULT_STARTS = 32


@dataclass(frozen=True, eq=False)
class ZefozPoint:
    field: np.ndarray  # T
    pair: tuple
    frequency: float  # MHz
    gradient_norm: float  # S1, MHz/T
    curvature_norm: float  # S2, MHz/T^2
    converged: bool
    starts: int

    CSV_HEADER = ("B_D1", "B_D2", "B_b", "low", "high", "f_MHz", "S1_MHz_per_T", "S2_MHz_per_T2", "starts", "converged")

    def row(self):
        return [*self.field, self.pair[0], self.pair[1], self.frequency, self.gradient_norm,
                self.curvature_norm, self.starts, int(self.converged)]


def _gradient(model, field, pair, gap_threshold):
    lv = solve_levels(model.hamiltonian(field), field, gap_threshold)
    grad, degenerate = freq_gradient(lv, model, *pair)
    return lv, grad, degenerate


def _fast_objective(model, field, pair, gap_threshold):
    e, v = np.linalg.eigh(model.h0 + np.tensordot(field, model.dh, axes=1))
    gaps = np.diff(e)
    for k in pair:
        if (k > 0 and gaps[k - 1] < gap_threshold) or (k < len(gaps) and gaps[k] < gap_threshold):
            return DEGENERACY_PENALTY
    i, j = pair
    grad = np.einsum("a,kab,b->k", v[:, j].conj(), model.dh, v[:, j]).real - np.einsum(
        "a,kab,b->k", v[:, i].conj(), model.dh, v[:, i]
    ).real
    return float(grad @ grad)


def objective(model, field, pair, gap_threshold=DEFAULT_GAP):
    """|grad f_pair|^2 in MHz^2/T^2, or :data:`DEGENERACY_PENALTY` at degeneracies."""
    model = as_model(model)
    field = np.asarray(field, dtype=float)
    if field.shape != (3,):
        raise ValueError("field must be a 3-vector")
    return _fast_objective(model, field, tuple(pair), gap_threshold)


def characterize(model, point, pair, step=DEFAULT_STEP, gap_threshold=DEFAULT_GAP):
    """Return ``(S1, S2)``: gradient norm (MHz/T) and curvature spectral norm (MHz/T^2)."""
    model = as_model(model)
    point = np.asarray(point, dtype=float)
    lv, grad, _ = _gradient(model, point, pair, gap_threshold)
    curv = freq_curvature(model, point, *pair, step=step, levels=lv)
    return float(np.linalg.norm(grad)), float(np.max(np.abs(np.linalg.eigvalsh(curv))))


def _newton_polish(model, b, pair, box_lo, box_hi, tol, step, gap_threshold, iters=8):
    # Newton steps on the gradient over the free axes only
    free = box_hi > box_lo
    for _ in range(iters):
        lv, grad, degenerate = _gradient(model, b, pair, gap_threshold)
        if degenerate or np.linalg.norm(grad[free]) < tol * 1e-3:
            break
        try:
            curv = freq_curvature(model, b, *pair, step=step, levels=lv)
            delta = np.zeros(3)
            delta[free] = np.linalg.lstsq(curv[np.ix_(free, free)], grad[free], rcond=1e-12)[0]
        except (LevelTrackingError, np.linalg.LinAlgError):
            break
        trial = b - delta
        if np.any(trial < box_lo - step) or np.any(trial > box_hi + step):
            break
        _, g2, d2 = _gradient(model, trial, pair, gap_threshold)
        if d2 or np.linalg.norm(g2[free]) >= np.linalg.norm(grad[free]):
            break
        b = trial
    return b


def find_zefoz(
    model,
    pair,
    box,
    n_starts=DEFAULT_STARTS,
    seed=0,
    tol=DEFAULT_TOL,
    merge_radius=MERGE_RADIUS,
    step=DEFAULT_STEP,
    gap_threshold=DEFAULT_GAP,
):
    """Seeded multi-start search for ZEFOZ points of ``pair`` inside ``box``.

    ``box`` is a (3, 2) array of (low, high) field limits in tesla; an axis
    with low == high is held fixed.  Returns converged, de-duplicated points
    sorted by curvature norm (ascending).  An empty list means no start
    converged; the reason is logged.
    """
    model = as_model(model)
    box = np.asarray(box, dtype=float).reshape(3, 2)
    lo, hi = box[:, 0], box[:, 1]
    if np.any(hi < lo):
        raise ValueError("search box limits must satisfy low <= high")
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    free = hi > lo
    if not np.any(free):
        raise ValueError("search box is empty")
    scale = np.where(free, hi - lo, 1.0)
    rng = np.random.default_rng(seed)
    starts = lo + rng.random((n_starts, 3)) * (hi - lo)

    pair = tuple(pair)

    def f(x):
        b = lo.copy()
        b[free] = x
        return _fast_objective(model, b, pair, gap_threshold)

    found = []
    n_fail = 0
    for b0 in starts:
        res = minimize(
            f, b0[free], method="Nelder-Mead", bounds=list(zip(lo[free], hi[free])),
            options={
                "xatol": 1e-7 * scale[free].min(), "fatol": (0.1 * tol) ** 2,
                "maxiter": 2000, "initial_simplex": _simplex(b0[free], 0.05 * scale[free]),
            },
        )
        b = lo.copy()
        b[free] = res.x
        b = _newton_polish(model, b, pair, lo, hi, tol, step, gap_threshold)
        _, grad, degenerate = _gradient(model, b, pair, gap_threshold)
        gnorm = float(np.linalg.norm(grad))
        inside = np.all(b >= lo - merge_radius) and np.all(b <= hi + merge_radius)
        if degenerate or gnorm >= tol or not inside:
            n_fail += 1
            continue
        found.append((b, gnorm))

    points = []
    for b, gnorm in sorted(found, key=lambda t: (t[1], tuple(t[0]))):
        for k, (pb, pg, count) in enumerate(points):
            if np.linalg.norm(b - pb) < merge_radius:
                points[k] = (pb, pg, count + 1)
                break
        else:
            points.append((b, gnorm, 1))

    out = []
    for b, gnorm, count in points:
        lv = solve_levels(model.hamiltonian(b), b, gap_threshold)
        try:
            _, s2 = characterize(model, b, pair, step=step, gap_threshold=gap_threshold)
        except LevelTrackingError:
            s2 = float("nan")
        i, j = pair
        out.append(ZefozPoint(b, (i, j), float(lv.energies[j] - lv.energies[i]), gnorm, s2, True, count))
    out.sort(key=lambda p: (np.inf if np.isnan(p.curvature_norm) else p.curvature_norm, tuple(p.field)))
    if not out:
        log.info("find_zefoz: %d of %d starts ended above %g MHz/T, degenerate or outside the box; pair %s",
                 n_fail, n_starts, tol, pair)
    return out


def _simplex(x0, size):
    n = len(x0)
    sim = np.tile(x0, (n + 1, 1))
    for k in range(n):
        sim[k + 1, k] += size[k]
    return sim
