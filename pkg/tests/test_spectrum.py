import numpy as np
import pytest

from conftest import electron_toy
from erspin.levels import levels_at
from erspin.spectrum import (
    LineshapeSpec,
    MapFormatError,
    SpectrumGrid,
    boltzmann_populations,
    compare_maps,
    export_map,
    ingest_measured_map,
    synthesize_map,
)
from erspin.spin import MU_B, AffineModel, SpinHamiltonian
from erspin.transitions import transition_table


def _sweep(axis, lo, hi, n):
    f = np.zeros((n, 3))
    f[:, axis] = np.linspace(lo, hi, n)
    return f


def _kite_model(center=900.0, slope=2000.0, coupling=50.0):
    """Level 0 plus a doublet at ``center`` split linearly by B_b; RF along D1 drives 0 -> doublet."""
    h0 = np.diag([0.0, center, center]).astype(complex)
    dh = np.zeros((3, 3, 3), dtype=complex)
    dh[2] = np.diag([0.0, slope, -slope])
    dh[0, 0, 1] = dh[0, 1, 0] = coupling
    dh[0, 0, 2] = dh[0, 2, 0] = coupling
    return AffineModel(h0, dh, label="kite")


def test_lineshape_validation():
    with pytest.raises(ValueError):
        LineshapeSpec("voigt")
    with pytest.raises(ValueError):
        LineshapeSpec(fwhm=0)


def test_boltzmann():
    p = boltzmann_populations(np.array([0.0, 1000.0]), 4.7)
    assert p[0] / p[1] == pytest.approx(np.exp(1000 * 4.799243073366221e-5 / 4.7))
    assert np.allclose(boltzmann_populations(np.array([0.0, 1e4]), np.inf), 0.5)


@pytest.mark.parametrize("kind", ["lorentzian", "gaussian"])
def test_isolated_line_positions(kind):
    model = SpinHamiltonian(electron_toy(nuclear_spin=0))
    fields = _sweep(2, 0.02, 0.04, 21)
    freqs = np.linspace(500, 1200, 1401)
    shape = LineshapeSpec(kind, 5.0)
    grid = synthesize_map(model, fields, freqs, [1, 0, 0], shape)
    assert grid.intensity.max() == pytest.approx(1.0)
    assert np.all(grid.intensity >= 0)
    for b, row in zip(fields, grid.intensity):
        ft = 2 * MU_B * b[2]
        if 500 < ft < 1200:
            assert abs(freqs[np.argmax(row)] - ft) <= shape.fwhm / 2


def test_line_positions_match_table(ground_params):
    model = SpinHamiltonian(ground_params)
    fields = _sweep(0, -0.01, 0.01, 11)
    freqs = np.linspace(700, 1200, 2001)
    grid = synthesize_map(model, fields, freqs, [0, 0, 1], LineshapeSpec(fwhm=0.5))
    for b, row in zip(fields, grid.intensity):
        table = [t.frequency for t in transition_table(levels_at(model, b), model, [0, 0, 1], (700, 1200), curvature=False)]
        peak = freqs[np.argmax(row)]
        assert min(abs(peak - f) for f in table) <= 0.25


def test_infinite_temperature_is_degenerate():
    model = SpinHamiltonian(electron_toy(nuclear_spin=0))
    grid = synthesize_map(model, _sweep(2, 0.02, 0.04, 5), np.linspace(500, 1200, 101), [1, 0, 0],
                          temperature=np.inf)
    assert grid.degenerate
    assert np.all(grid.intensity == 0)
    assert grid.meta["normalization"] == "degenerate"


def test_kite_topology():
    model = _kite_model()
    fields = _sweep(2, -0.01, 0.01, 41)
    freqs = np.linspace(850, 950, 1001)
    grid = synthesize_map(model, fields, freqs, [1, 0, 0], LineshapeSpec(fwhm=1.0), populations="uniform")
    # integrated intensity is continuous through the degenerate point
    totals = grid.intensity.sum(axis=1)
    assert np.allclose(totals, totals[20], rtol=0.03)
    for b, row in zip(fields, grid.intensity):
        table = sorted(t.frequency for t in transition_table(levels_at(model, b), model, [1, 0, 0], (850, 950),
                                                             curvature=False))
        peaks = [k for k in range(1, len(row) - 1) if row[k] > row[k - 1] and row[k] >= row[k + 1] and row[k] > 0.3]
        if abs(b[2]) < 1e-12:
            assert len(peaks) == 1 and abs(freqs[peaks[0]] - 900) < 0.1
        elif 2 * 2000 * abs(b[2]) > 4:
            # two branches 900 +- slope*|B|, crossing at zero field
            assert len(peaks) == 2
            assert np.allclose(freqs[peaks], table, atol=0.1)
            assert np.allclose(table, [900 - 2000 * abs(b[2]), 900 + 2000 * abs(b[2])])


def test_map_parity(ground_params):
    fields = _sweep(0, -0.01, 0.01, 41)
    grid = synthesize_map(SpinHamiltonian(ground_params), fields, np.linspace(700, 1200, 501), [0, 0, 1])
    assert np.allclose(grid.intensity, grid.intensity[::-1], atol=1e-9)


def test_resonator_weighting():
    model = SpinHamiltonian(electron_toy(nuclear_spin=0))
    fields = _sweep(2, 0.02, 0.04, 11)
    freqs = np.linspace(500, 1200, 701)
    flat = synthesize_map(model, fields, freqs, [1, 0, 0])
    tuned = synthesize_map(model, fields, freqs, [1, 0, 0], resonator_center=600, resonator_width=50)
    row_max = tuned.intensity.max(axis=1)
    assert np.argmax(row_max) == np.argmin(np.abs(2 * MU_B * fields[:, 2] - 600))
    assert not np.allclose(flat.intensity, tuned.intensity)


def test_non_monotone_inputs():
    model = SpinHamiltonian(electron_toy(nuclear_spin=0))
    with pytest.raises(ValueError):
        synthesize_map(model, _sweep(2, 0.02, 0.04, 5), np.array([1.0, 3.0, 2.0]), [1, 0, 0])
    fields = _sweep(2, 0.02, 0.04, 5)[[0, 2, 1, 3, 4]]
    with pytest.raises(ValueError):
        synthesize_map(model, fields, np.linspace(500, 600, 11), [1, 0, 0])


# --- file I/O --------------------------------------------------------------


def test_ingest_small(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("field_T,700,701\n0.0,1,2\n0.001,3,4\n")
    g = ingest_measured_map(path)
    assert g.intensity.shape == (2, 2)
    assert np.array_equal(g.freqs, [700, 701])
    assert np.array_equal(g.intensity, [[1, 2], [3, 4]])


@pytest.mark.parametrize(
    "body, pattern",
    [
        ("field_T,700,701\n0.0,1,2\n0.001,3\n", "row 2"),
        ("field_T,700,701\n0.0,1,nan\n", "column 3"),
        ("field_T,701,700\n0.0,1,2\n0.001,1,2\n0.0005,1,2\n", "field column is not monotone"),
        ("field_T,700,702,701\n0.0,1,2,3\n", "not monotone"),
    ],
)
def test_ingest_errors(tmp_path, body, pattern):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(MapFormatError, match=pattern):
        ingest_measured_map(path)


def test_round_trip_bitwise(tmp_path, ground_params):
    grid = synthesize_map(SpinHamiltonian(ground_params), _sweep(1, -0.01, 0.01, 21), np.linspace(700, 1200, 251),
                          [0, 0, 1])
    path = tmp_path / "map.csv"
    export_map(grid, path)
    back = ingest_measured_map(path)
    assert back.equals(grid)
    assert back.meta["lineshape"] == "lorentzian"
    assert not back.degenerate


# --- comparison ------------------------------------------------------------


@pytest.fixture(scope="module")
def ground_map(ground_params):
    return synthesize_map(SpinHamiltonian(ground_params), _sweep(0, -0.01, 0.01, 51), np.linspace(700, 1200, 501),
                          [0, 0, 1])


def test_compare_identical(ground_map):
    score, offset = compare_maps(ground_map, ground_map)
    assert score == pytest.approx(1.0) and offset == 0.0


def test_compare_recovers_shift(ground_map):
    shifted = SpectrumGrid(ground_map.field_values, ground_map.freqs + 16.0, ground_map.intensity)
    score, offset = compare_maps(shifted, ground_map)
    step = ground_map.freqs[1] - ground_map.freqs[0]
    assert abs(offset - -16.0) <= step
    assert score > 0.99


def test_compare_noise():
    r = np.random.default_rng(7)
    fv, fr = np.linspace(-0.01, 0.01, 41), np.linspace(700, 1200, 201)
    a = SpectrumGrid(fv, fr, r.random((41, 201)))
    b = SpectrumGrid(fv, fr, r.random((41, 201)))
    score, _ = compare_maps(a, b, max_offset=10)
    assert abs(score) < 0.2


def test_compare_disjoint():
    fv = np.linspace(0, 1, 3)
    a = SpectrumGrid(fv, np.linspace(0, 10, 11), np.ones((3, 11)))
    b = SpectrumGrid(fv, np.linspace(100, 110, 11), np.ones((3, 11)))
    with pytest.raises(ValueError):
        compare_maps(a, b)


def test_compare_window(ground_map):
    score, offset = compare_maps(ground_map, ground_map, window=(800, 1000))
    assert score == pytest.approx(1.0) and offset == 0.0
