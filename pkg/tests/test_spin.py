import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import electron_toy, random_field, random_params
from erspin.spin import (
    MU_B,
    MU_N,
    AffineModel,
    InvalidSpinError,
    ParamFileError,
    SpinHamiltonian,
    SpinParams,
    UnsupportedSpinError,
    angular_momentum_operators,
    build_hamiltonian,
    field_derivative,
    format_params,
    load_params,
    parse_params,
    save_params,
    spin_operators,
)

half_integers = st.integers(min_value=0, max_value=15).map(lambda n: n / 2)


# --- angular momentum ------------------------------------------------------


def test_spin_half_jz():
    _, _, jz = angular_momentum_operators(0.5)
    assert np.array_equal(jz, np.diag([0.5, -0.5]))


def test_spin_half_commutator():
    jx, jy, jz = angular_momentum_operators(0.5)
    assert np.allclose(jx @ jy - jy @ jx, 1j * jz, atol=1e-15)


def test_casimir_seven_halves():
    ops = angular_momentum_operators(3.5)
    c = sum(a @ a for a in ops)
    assert np.allclose(c, 63 / 4 * np.eye(8), atol=1e-12)


def _ladder_oracle(j):
    # independent construction from <j m'|J+|j m> with m ascending, then reversed
    m = np.arange(-j, j + 1)
    n = len(m)
    jp = np.zeros((n, n))
    for k in range(n - 1):
        jp[k + 1, k] = np.sqrt((j - m[k]) * (j + m[k] + 1))
    jp = jp[::-1, ::-1]
    return (jp + jp.T) / 2, (jp - jp.T) / 2j, np.diag(m[::-1])


@given(half_integers)
def test_operators_match_ladder_oracle(j):
    for a, b in zip(angular_momentum_operators(j), _ladder_oracle(j)):
        assert np.allclose(a, b, atol=1e-12)


@given(half_integers)
def test_su2_algebra_and_casimir(j):
    jx, jy, jz = angular_momentum_operators(j)
    ops = (jx, jy, jz)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        assert np.allclose(ops[a] @ ops[b] - ops[b] @ ops[a], 1j * ops[c], atol=1e-10)
        assert np.allclose(ops[a], ops[a].conj().T)
    assert np.allclose(sum(o @ o for o in ops), j * (j + 1) * np.eye(round(2 * j + 1)), atol=1e-10)
    assert np.allclose(np.diag(jz).real, j - np.arange(round(2 * j + 1)))


@pytest.mark.parametrize("j", [0.3, -0.5, 1.25, float("nan")])
def test_invalid_spin(j):
    with pytest.raises(InvalidSpinError):
        angular_momentum_operators(j)


def test_spin_guardrail():
    with pytest.raises(UnsupportedSpinError):
        angular_momentum_operators(8)
    assert angular_momentum_operators(8, max_spin=None)[0].shape == (17, 17)


def test_embedding_acts_on_factors():
    S, I = spin_operators(0.5, 3.5)
    assert S.shape == I.shape == (3, 16, 16)
    # S and I commute componentwise
    for a in range(3):
        for b in range(3):
            assert np.allclose(S[a] @ I[b], I[b] @ S[a])
    # electron index slowest
    assert np.allclose(S[2], np.kron(np.diag([0.5, -0.5]), np.eye(8)))


# --- Hamiltonian -----------------------------------------------------------


def test_zero_hamiltonian():
    p = SpinParams(g=2 * np.eye(3))
    assert np.array_equal(build_hamiltonian(p, [0, 0, 0]), np.zeros((16, 16)))


def test_analytic_zeeman():
    h = build_hamiltonian(electron_toy(), [0, 0, 1.0])
    e = np.linalg.eigvalsh(h)
    assert np.allclose(e[:8], -MU_B, rtol=1e-12)
    assert np.allclose(e[8:], MU_B, rtol=1e-12)


def test_dimension_is_sixteen(rng):
    p = random_params(rng)
    assert p.dim == 16
    assert build_hamiltonian(p, random_field(rng)).shape == (16, 16)


def test_hermiticity(rng):
    for _ in range(50):
        h = build_hamiltonian(random_params(rng), random_field(rng, 1.0))
        assert np.max(np.abs(h - h.conj().T)) < 1e-9


def test_time_reversal_parity(rng):
    for _ in range(100):
        p = random_params(rng)
        b = random_field(rng, 0.5)
        model = SpinHamiltonian(p)
        ep = np.linalg.eigvalsh(model(b))
        em = np.linalg.eigvalsh(model(-b))
        assert np.max(np.abs(ep - em)) <= 1e-9 * np.max(np.abs(ep))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_affinity(seed):
    r = np.random.default_rng(seed)
    model = SpinHamiltonian(random_params(r))
    b1, b2 = random_field(r), random_field(r)
    lhs = model(b1 + b2) - model(b2)
    rhs = model(b1) - model(np.zeros(3))
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-9)


def test_field_derivative_single_term():
    S, _ = spin_operators(0.5, 3.5)
    p = SpinParams(g=np.eye(3))
    assert np.allclose(field_derivative(p, 2), MU_B * S[2])


def test_field_derivative_affine_exact(rng):
    p = random_params(rng)
    b = random_field(rng)
    for k in range(3):
        step = np.zeros(3)
        step[k] = 0.25  # power of two keeps the difference exact
        diff = build_hamiltonian(p, b + step) - build_hamiltonian(p, b)
        assert np.allclose(diff, 0.25 * field_derivative(p, k), atol=1e-9)


def test_field_derivative_off_diagonal_g():
    g = np.zeros((3, 3))
    g[0, 1] = 1.0
    p = SpinParams(g=g)
    S, _ = spin_operators(0.5, 3.5)
    d = field_derivative(p, 0)
    fd = (build_hamiltonian(p, [1e-3, 0, 0]) - build_hamiltonian(p, [-1e-3, 0, 0])) / 2e-3
    assert np.allclose(d, MU_B * S[1])
    assert np.allclose(d, fd, atol=1e-8)


def test_field_derivative_nuclear_zeeman():
    p = SpinParams(g=np.zeros((3, 3)), nuclear_g=1.0)
    _, I = spin_operators(0.5, 3.5)
    assert np.allclose(field_derivative(p, 0), -MU_N * I[0])
    off = p.replace(nuclear_zeeman=False)
    assert np.allclose(field_derivative(off, 0), 0)


def test_field_derivative_axis_error():
    with pytest.raises(IndexError):
        field_derivative(electron_toy(), 3)


def test_subsite_rotates_field(rng):
    p = random_params(rng)
    b = random_field(rng)
    h_sub = build_hamiltonian(p, b, subsite=True)
    assert np.allclose(h_sub, build_hamiltonian(p, b * np.array([-1, -1, 1])))


def test_affine_model_shape_checks():
    with pytest.raises(ValueError):
        AffineModel(np.eye(2), np.zeros((3, 3, 3)))
    m = AffineModel(np.eye(2), np.zeros((3, 2, 2)))
    with pytest.raises(ValueError):
        m.hamiltonian([0, 0])
    with pytest.raises(ValueError):
        m.hamiltonian([0, np.inf, 0])


# --- parameter validation and files ---------------------------------------


def test_q_must_be_traceless():
    with pytest.raises(ValueError, match="traceless"):
        SpinParams(g=np.eye(3), Q=np.diag([0.5, 0.0, 0.0]))


def test_q_must_be_symmetric():
    q = np.zeros((3, 3))
    q[0, 1] = 1.0
    with pytest.raises(ValueError, match="symmetric"):
        SpinParams(g=np.eye(3), Q=q)


def test_tensor_shape():
    with pytest.raises(ValueError, match="3x3"):
        SpinParams(g=np.eye(2))


GOOD = """\
# electron-only toy
label = toy
electron_spin = 1/2
nuclear_spin = 7/2
g = 2 0 0  0 2 0  0 0 2
A_MHz = 0 0 0 0 0 0 0 0 0
Q_MHz = 0 0 0 0 0 0 0 0 0
nuclear_g = 0
nuclear_zeeman = true
"""


def test_parse_round_trip(tmp_path):
    p = parse_params(GOOD)
    assert np.array_equal(p.g, 2 * np.eye(3))
    assert np.array_equal(p.A, np.zeros((3, 3)))
    assert p.nuclear_spin == 3.5 and p.label == "toy"
    path = tmp_path / "p.txt"
    save_params(p, path)
    assert load_params(path) == p


def test_round_trip_random(rng, tmp_path):
    p = random_params(rng)
    assert parse_params(format_params(p)) == p


def test_missing_q():
    text = "\n".join(line for line in GOOD.splitlines() if not line.startswith("Q_MHz"))
    with pytest.raises(ParamFileError, match="missing key qTensor"):
        parse_params(text)


def test_q_trace_reported():
    text = GOOD.replace("Q_MHz = 0 0 0", "Q_MHz = 0.5 0 0")
    with pytest.raises(ParamFileError, match="traceless") as info:
        parse_params(text)
    assert "0.5" in str(info.value)


def test_unknown_key_line_number():
    with pytest.raises(ParamFileError, match=r"<string>:3: unknown key"):
        parse_params(GOOD.replace("electron_spin", "electron_spinn"))


def test_malformed_tensor():
    with pytest.raises(ParamFileError, match="g"):
        parse_params(GOOD.replace("g = 2 0 0  0 2 0  0 0 2", "g = 2 0 0 0 2"))


def test_illustrative_file(ground_params):
    assert ground_params.dim == 16
    e = np.linalg.eigvalsh(build_hamiltonian(ground_params, [0, 0, 0]))
    assert np.min(np.diff(e)) > 0.1
