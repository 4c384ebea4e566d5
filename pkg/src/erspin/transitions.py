"""Transition tables: frequencies, RF strengths, Zeeman gradients and curvatures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .levels import DEFAULT_GAP, MIN_OVERLAP, LevelSet, _align_groups, _greedy_assign, solve_levels
from .spin import as_model

DEFAULT_STEP = 1e-4  # T, curvature stencil


class LevelTrackingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Transition:
    low: int
    high: int
    frequency: float  # MHz
    strength: float  # MHz/T along the RF direction
    gradient: np.ndarray  # MHz/T
    curvature: np.ndarray  # MHz/T^2
    degenerate: bool = False
    label: str = ""

    CSV_HEADER = (
        "low", "high", "f_MHz", "strength_MHz_per_T", "grad_D1", "grad_D2", "grad_b",
        "curv_11", "curv_12", "curv_13", "curv_22", "curv_23", "curv_33", "flags",
    )

    def row(self):
        c = self.curvature
        return [
            self.low, self.high, self.frequency, self.strength, *self.gradient,
            c[0, 0], c[0, 1], c[0, 2], c[1, 1], c[1, 2], c[2, 2],
            "degenerate" if self.degenerate else "",
        ]


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if v.shape != (3,) or not np.isfinite(n) or n == 0:
        raise ValueError("rf direction must be a non-zero 3-vector")
    return v / n


def rf_operator(model, rf_direction):
    """n.dH/dB: the magnetic-dipole coupling to a unit RF field (MHz/T)."""
    n = _unit(rf_direction)
    return np.tensordot(n, as_model(model).dh, axes=1)


def strength_matrix(levels: LevelSet, model, rf_direction):
    """|<i| n.dH/dB |j>| for all level pairs, in MHz/T.

    Inside degenerate groups the eigenbasis is arbitrary, so for a pair of
    groups (Gi, Gj) every entry is replaced by
    ``sqrt(sum |M_ab|^2 / min(|Gi|, |Gj|))`` which does not depend on the basis
    and reduces to ``|M_ij|`` for non-degenerate levels.
    """
    v = levels.states
    m2 = np.abs(v.conj().T @ rf_operator(model, rf_direction) @ v) ** 2
    return _group_average(m2, levels.groups)


def _group_average(m2, groups, conserve_total=False):
    # conserve_total: divide by |Gi||Gj| so the block sums to the basis-free total
    # (line intensities); otherwise by min(|Gi|, |Gj|) (per-transition strength)
    out = np.sqrt(m2)
    big = [g for g in groups if len(g) > 1]
    if not big:
        return out
    for gi in groups:
        for gj in groups:
            if len(gi) == 1 and len(gj) == 1:
                continue
            block = np.ix_(gi, gj)
            n = len(gi) * len(gj) if conserve_total else min(len(gi), len(gj))
            out[block] = np.sqrt(m2[block].sum() / n)
    return out


def transition_strength(levels: LevelSet, model, i, j, rf_direction):
    """Magnetic-dipole transition strength between levels i and j (MHz/T)."""
    if i == j:
        raise ValueError("i and j must differ")
    return float(strength_matrix(levels, model, rf_direction)[i, j])


def level_gradients(levels: LevelSet, model):
    """Hellmann-Feynman dE_k/dB for every level, shape (d, 3), plus degeneracy flags.

    For levels inside a degenerate group dH/dB_k is diagonalized within the
    group and the level at position p of the group gets the p-th branch slope.
    """
    model = as_model(model)
    v = levels.states
    d = levels.dim
    grads = np.empty((d, 3))
    flags = np.zeros(d, dtype=bool)
    for k in range(3):
        dk = v.conj().T @ model.dh[k] @ v
        grads[:, k] = dk.diagonal().real
        for g in levels.groups:
            if len(g) > 1:
                grads[g, k] = np.linalg.eigvalsh(dk[np.ix_(g, g)])
                flags[g] = True
    return grads, flags


def freq_gradient(levels: LevelSet, model, i, j):
    """Return ``(grad f_ij, degenerate)``, grad in MHz/T.

    When either level sits in a degenerate group, each component is the
    largest-magnitude slope difference over the group branches and
    ``degenerate`` is True.
    """
    model = as_model(model)
    groups = levels.groups
    gi = next(g for g in groups if i in g)
    gj = next(g for g in groups if j in g)
    v = levels.states
    if len(gi) == 1 and len(gj) == 1:
        grad = np.array(
            [
                (v[:, j].conj() @ model.dh[k] @ v[:, j]).real
                - (v[:, i].conj() @ model.dh[k] @ v[:, i]).real
                for k in range(3)
            ]
        )
        return grad, False
    grad = np.empty(3)
    for k in range(3):
        a = np.linalg.eigvalsh(v[:, gi].conj().T @ model.dh[k] @ v[:, gi])
        b = np.linalg.eigvalsh(v[:, gj].conj().T @ model.dh[k] @ v[:, gj])
        diffs = (b[None, :] - a[:, None]).ravel()
        grad[k] = diffs[np.argmax(np.abs(diffs))]
    return grad, True


def _track_to(center: LevelSet, lv: LevelSet):
    aligned = _align_groups(center.states, lv)
    overlap = np.abs(center.states.conj().T @ aligned)
    assign, _ = _greedy_assign(overlap)
    return lv.energies[assign], overlap[np.arange(center.dim), assign]


def level_curvatures(model, field, step=DEFAULT_STEP, levels=None, gap_threshold=DEFAULT_GAP):
    """Hessians d2E_k/dB_a dB_b (MHz/T^2) of every tracked level, shape (d, 3, 3).

    Central differences on a 19-point stencil; energies at each stencil point
    are matched to the centre eigenvectors by overlap.  Returns
    ``(hessians, min_overlap)`` where ``min_overlap`` is per level.
    """
    model = as_model(model)
    b0 = np.asarray(field, dtype=float)
    center = levels if levels is not None else solve_levels(model.hamiltonian(b0), b0, gap_threshold)
    e0 = center.energies
    worst = np.ones(center.dim)
    cache = {}

    def energy(offset):
        key = tuple(offset)
        if key not in cache:
            b = b0 + step * np.asarray(offset, dtype=float)
            e, ov = _track_to(center, solve_levels(model.hamiltonian(b), b, gap_threshold))
            np.minimum(worst, ov, out=worst)
            cache[key] = e
        return cache[key]

    hess = np.empty((center.dim, 3, 3))
    eye = np.eye(3, dtype=int)
    for a in range(3):
        hess[:, a, a] = (energy(eye[a]) - 2 * e0 + energy(-eye[a])) / step**2
        for b in range(a + 1, 3):
            pp = energy(eye[a] + eye[b])
            pm = energy(eye[a] - eye[b])
            mp = energy(-eye[a] + eye[b])
            mm = energy(-eye[a] - eye[b])
            hess[:, a, b] = hess[:, b, a] = (pp - pm - mp + mm) / (4 * step**2)
    return 0.5 * (hess + hess.transpose(0, 2, 1)), worst


def freq_curvature(model, field, i, j, step=DEFAULT_STEP, levels=None, min_overlap=MIN_OVERLAP):
    """Symmetric Hessian of f_ij(B) = E_j - E_i in MHz/T^2 by finite differences."""
    hess, worst = level_curvatures(model, field, step, levels)
    if worst[i] < min_overlap or worst[j] < min_overlap:
        raise LevelTrackingError(
            f"levels {i}/{j} could not be followed across the curvature stencil "
            f"(overlap {min(worst[i], worst[j]):.3f}); use a smaller step than {step:g} T"
        )
    c = hess[j] - hess[i]
    return 0.5 * (c + c.T)


def transition_table(levels: LevelSet, model, rf_direction, band, curvature=True, step=DEFAULT_STEP):
    """All level pairs with frequency inside ``band`` = (fmin, fmax) MHz."""
    fmin, fmax = band
    if not fmin < fmax:
        raise ValueError("band must satisfy min < max")
    model = as_model(model)
    strengths = strength_matrix(levels, model, rf_direction)
    grads, flags = level_gradients(levels, model)
    e = levels.energies
    pairs = [
        (i, j)
        for i in range(levels.dim)
        for j in range(i + 1, levels.dim)
        if fmin <= e[j] - e[i] <= fmax
    ]
    if not pairs:
        return []
    if curvature:
        hess, _ = level_curvatures(model, levels.field, step, levels)
    out = []
    for i, j in pairs:
        if flags[i] or flags[j]:
            grad, degen = freq_gradient(levels, model, i, j)
        else:
            grad, degen = grads[j] - grads[i], False
        curv = hess[j] - hess[i] if curvature else np.full((3, 3), np.nan)
        out.append(
            Transition(
                i, j, float(e[j] - e[i]), float(strengths[i, j]), grad,
                0.5 * (curv + curv.T), degen, getattr(model, "label", ""),
            )
        )
    return out


def strength_from_pi_pulse(t_pi, b1):
    """Transition strength (MHz/T) implied by a pi-pulse length ``t_pi`` (s) at RF amplitude ``b1`` (T).

    Convention: Rabi frequency (cycles/s) = strength * b1 and a pi pulse is
    half a Rabi cycle, so strength = 1 / (2 t_pi b1).
    """
    if t_pi <= 0 or b1 <= 0:
        raise ValueError("t_pi and b1 must be positive")
    return 1.0 / (2.0 * t_pi * b1) / 1e6
