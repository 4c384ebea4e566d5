import numpy as np
import pytest

from conftest import avoided_crossing, electron_toy
from erspin.spin import MU_B, SpinHamiltonian, SpinParams
from erspin.zefoz import (
    DEFAULT_TOL,
    DEGENERACY_PENALTY,
    MERGE_RADIUS,
    ZefozPoint,
    characterize,
    find_zefoz,
    objective,
)
from erspin.transitions import freq_gradient
from erspin.levels import levels_at

# S = I = 1/2 with a fully anisotropic hyperfine tensor: four non-degenerate
# levels at zero field, so every transition has a parity-forced ZEFOZ point there
TOY = SpinParams(g=np.diag([2.0, 3.0, 5.0]), A=np.diag([100.0, 250.0, 600.0]), nuclear_spin=0.5)
BOX = np.array([[-0.01, 0.01]] * 3)


def test_objective_electron_toy():
    p = electron_toy(nuclear_spin=0)
    for b in ([0, 0, 0.1], [0.03, -0.2, 0.01]):
        assert objective(p, b, (0, 1)) == pytest.approx((2 * MU_B) ** 2, rel=1e-12)


def test_objective_zero_at_origin():
    assert objective(TOY, np.zeros(3), (0, 3)) < 1e-12


def test_objective_parity():
    r = np.random.default_rng(5)
    for _ in range(10):
        b = r.normal(0, 0.005, 3)
        for pair in [(0, 1), (0, 3), (1, 2)]:
            assert objective(TOY, b, pair) == pytest.approx(objective(TOY, -b, pair), rel=1e-9)


def test_objective_degeneracy_penalty():
    assert objective(electron_toy(), [0, 0, 0.1], (0, 8)) == DEGENERACY_PENALTY


def test_finds_origin():
    pts = find_zefoz(TOY, (0, 3), BOX, n_starts=32, seed=0)
    assert pts
    best = min(pts, key=lambda p: np.linalg.norm(p.field))
    assert np.linalg.norm(best.field) < 1e-5
    assert best.gradient_norm < 1e-3
    assert best.converged


def test_electron_toy_has_no_zefoz():
    assert find_zefoz(electron_toy(nuclear_spin=0), (0, 1), BOX, n_starts=8, seed=0) == []


def test_seeded_determinism():
    a = find_zefoz(TOY, (1, 3), BOX, n_starts=8, seed=11)
    b = find_zefoz(TOY, (1, 3), BOX, n_starts=8, seed=11)
    assert [p.row() for p in a] == [p.row() for p in b]


def test_points_converged_and_distinct():
    model = SpinHamiltonian(TOY)
    pts = find_zefoz(model, (0, 3), BOX, n_starts=16, seed=2)
    for p in pts:
        grad, _ = freq_gradient(levels_at(model, p.field), model, *p.pair)
        assert np.linalg.norm(grad) < DEFAULT_TOL
        assert np.all(p.field >= BOX[:, 0] - MERGE_RADIUS) and np.all(p.field <= BOX[:, 1] + MERGE_RADIUS)
    for a in range(len(pts)):
        for b in range(a + 1, len(pts)):
            assert np.linalg.norm(pts[a].field - pts[b].field) >= MERGE_RADIUS
    s2 = [p.curvature_norm for p in pts]
    assert s2 == sorted(s2)


def test_fixed_axis_box():
    box = BOX.copy()
    box[2] = 0.0
    pts = find_zefoz(TOY, (0, 3), box, n_starts=8, seed=0)
    assert pts and all(p.field[2] == 0.0 for p in pts)


def test_bad_inputs():
    with pytest.raises(ValueError):
        find_zefoz(TOY, (0, 3), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        find_zefoz(TOY, (0, 3), BOX, n_starts=0)


def test_characterize_linear_toy():
    s1, s2 = characterize(SpinParams(g=np.diag([0, 0, 2.0]), nuclear_spin=0), [0, 0, 0.1], (0, 1))
    assert s1 == pytest.approx(2 * MU_B)
    assert s2 < 1e-3


def test_characterize_avoided_crossing():
    delta, s = 2.0, 500.0
    s1, s2 = characterize(avoided_crossing(delta, s), np.zeros(3), (0, 1), step=1e-6)
    assert s1 < 1e-9
    assert s2 == pytest.approx(2 * s**2 / delta, rel=1e-2)


def test_characterize_rotation_invariant():
    iso = SpinParams(g=2.5 * np.eye(3), A=300 * np.eye(3), nuclear_spin=0.5)
    b = np.array([0.004, -0.002, 0.003])
    r = np.random.default_rng(0)
    q, _ = np.linalg.qr(r.normal(size=(3, 3)))
    for pair in [(0, 3), (1, 2)]:
        _, s2 = characterize(iso, b, pair)
        _, s2r = characterize(iso, q @ b, pair)
        assert s2r == pytest.approx(s2, rel=1e-4)


def test_row_matches_header():
    p = ZefozPoint(np.zeros(3), (0, 3), 1.0, 0.0, 1.0, True, 3)
    assert len(p.row()) == len(ZefozPoint.CSV_HEADER)
