"""Diagonalization, degeneracy grouping and adiabatic level tracking."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .spin import HERMITIAN_TOL

DEFAULT_GAP = 0.1  # MHz, below the narrowest observed linewidth
TIE_TOL = 1e-6
MIN_OVERLAP = 0.5


class NonHermitianError(ValueError):
    pass


class TrackingWarning(UserWarning):
    pass


def _fix_phases(vecs):
    """Make the largest-magnitude component of every column real positive."""
    idx = np.argmax(np.abs(vecs), axis=-2)
    big = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    return vecs * (big.conj() / np.abs(big))


def degeneracy_groups(energies, threshold=DEFAULT_GAP):
    """Partition ascending ``energies`` into runs whose adjacent gaps are below ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    e = np.asarray(energies.energies if isinstance(energies, LevelSet) else energies, dtype=float)
    groups, current = [], [0]
    for k in range(1, len(e)):
        if e[k] - e[k - 1] < threshold:
            current.append(k)
        else:
            groups.append(current)
            current = [k]
    if len(e):
        groups.append(current)
    return groups


@dataclass(frozen=True, eq=False)
class LevelSet:
    """Eigen-decomposition at one field point.

    ``energies`` ascending (MHz); ``states[:, k]`` is the eigenvector of
    ``energies[k]``.
    """

    energies: np.ndarray
    states: np.ndarray
    field: np.ndarray
    gap_threshold: float = DEFAULT_GAP

    @property
    def dim(self):
        return len(self.energies)

    @property
    def groups(self):
        return degeneracy_groups(self.energies, self.gap_threshold)

    def group_of(self, k):
        for g in self.groups:
            if k in g:
                return g
        raise IndexError(k)

    def is_degenerate(self, k):
        return len(self.group_of(k)) > 1


def check_hermitian(h, tol=HERMITIAN_TOL):
    h = np.asarray(h)
    if h.ndim < 2 or h.shape[-1] != h.shape[-2]:
        raise NonHermitianError("Hamiltonian must be square")
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    dev = float(np.max(np.abs(h - np.swapaxes(h, -1, -2).conj()), initial=0.0))
    if dev > tol * scale:
        raise NonHermitianError(f"matrix is not Hermitian (max |H - H^dagger| = {dev:.3g} MHz)")


def solve_levels(h, field=None, gap_threshold=DEFAULT_GAP) -> LevelSet:
    """Full eigen-decomposition of a Hermitian matrix with a fixed phase convention."""
    h = np.asarray(h, dtype=complex)
    check_hermitian(h)
    energies, states = np.linalg.eigh(h)
    states = _fix_phases(states)
    f = np.zeros(3) if field is None else np.asarray(field, dtype=float)
    return LevelSet(energies, states, f, gap_threshold)


def solve_many(hs):
    """Batched eigen-decomposition; returns ``(energies, states)`` stacks."""
    hs = np.asarray(hs, dtype=complex)
    check_hermitian(hs)
    energies, states = np.linalg.eigh(hs)
    return energies, _fix_phases(states)


def levels_at(model, field, gap_threshold=DEFAULT_GAP) -> LevelSet:
    return solve_levels(model.hamiltonian(field), field, gap_threshold)


@dataclass(frozen=True, eq=False)
class TrackedSweep:
    """Energies relabeled along a sweep so each label follows one adiabatic branch.

    ``permutations[k, label]`` is the ascending-order index of ``label`` at
    step k.  ``crossings[k]`` marks steps where the energy ordering of the
    branches changed; ``ambiguous[k]`` marks steps where the assignment fell
    back on the index tie-break.
    """

    fields: np.ndarray
    energies: np.ndarray
    states: np.ndarray
    permutations: np.ndarray
    crossings: np.ndarray
    ambiguous: np.ndarray
    min_overlap: np.ndarray

    def frequency(self, i, j):
        return self.energies[:, j] - self.energies[:, i]


def _greedy_assign(overlap, tie_tol=TIE_TOL):
    n = overlap.shape[0]
    ov = overlap.copy()
    assign = np.full(n, -1)
    ambiguous = False
    for _ in range(n):
        top = ov.max()
        rows, cols = np.nonzero(ov >= top - tie_tol)
        first = np.lexsort((cols, rows))[0]
        r, c = rows[first], cols[first]
        rivals = (rows == r) ^ (cols == c)
        if np.any(rivals):
            ambiguous = True
        assign[r] = c
        ov[r, :] = -1.0
        ov[:, c] = -1.0
    return assign, ambiguous


def _align_groups(prev, lv: LevelSet):
    """Rotate each degenerate eigen-subspace of ``lv`` towards the previous vectors."""
    vecs = lv.states.copy()
    for g in lv.groups:
        if len(g) < 2:
            continue
        w = vecs[:, g]
        proj = w.conj().T @ prev
        weight = np.sum(np.abs(proj) ** 2, axis=0)
        chosen = np.sort(np.argsort(-weight, kind="stable")[: len(g)])
        x, _, yh = np.linalg.svd(proj[:, chosen])
        w = w @ (x @ yh)
        # column order follows the chosen previous labels
        vecs[:, g] = w
    return vecs


def track_levels(sweep, tie_tol=TIE_TOL, min_overlap=MIN_OVERLAP) -> TrackedSweep:
    """Relabel a sequence of :class:`LevelSet` by maximal eigenvector overlap.

    Assignment is greedy on ``|<v_i(B_k)|v_j(B_k+1)>|``; near-ties within
    ``tie_tol`` go to the lower index and flag the step.  Degenerate groups are
    first rotated towards the previous step so the choice of basis inside a
    degenerate subspace does not matter.
    """
    sweep = list(sweep)
    if not sweep:
        raise ValueError("empty sweep")
    n, d = len(sweep), sweep[0].dim
    energies = np.empty((n, d))
    states = np.empty((n, d, d), dtype=complex)
    perms = np.empty((n, d), dtype=int)
    crossings = np.zeros(n, dtype=bool)
    ambiguous = np.zeros(n, dtype=bool)
    worst = np.ones(n)

    perms[0] = np.arange(d)
    energies[0] = sweep[0].energies
    states[0] = sweep[0].states
    ref = sweep[0].states
    for k in range(1, n):
        lv = sweep[k]
        aligned = _align_groups(ref, lv)
        overlap = np.abs(ref.conj().T @ aligned)
        assign, amb = _greedy_assign(overlap, tie_tol)
        perms[k] = assign
        ambiguous[k] = amb
        crossings[k] = not np.array_equal(assign, perms[k - 1])
        worst[k] = overlap[np.arange(d), assign].min()
        energies[k] = lv.energies[assign]
        states[k] = lv.states[:, assign]
        ref = aligned[:, assign]
    if np.any(worst < min_overlap):
        bad = int(np.argmax(worst < min_overlap))
        warnings.warn(
            f"eigenvector overlap {worst[bad]:.3f} < {min_overlap} at sweep step {bad}; "
            "use smaller field steps",
            TrackingWarning,
            stacklevel=2,
        )
    fields = np.array([lv.field for lv in sweep], dtype=float)
    return TrackedSweep(fields, energies, states, perms, crossings, ambiguous, worst)


def sweep_levels(model, fields, gap_threshold=DEFAULT_GAP):
    """Solve and track levels of an affine model along ``fields`` (n, 3)."""
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    e, v = solve_many(model.hamiltonians(fields))
    sweep = [LevelSet(e[k], v[k], fields[k], gap_threshold) for k in range(len(fields))]
    return track_levels(sweep)
