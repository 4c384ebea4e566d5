"""Spin system definition and Hamiltonian construction.

The Hamiltonian of one electronic state (energies in MHz, fields in tesla) is

    H = mu_B B.g.S + I.A.S + I.Q.I - mu_n g_n B.I

with S the effective electron spin and I the nuclear spin.  Tensors are given
in the right-handed (D1, D2, b) crystal frame.  Operators act on the product
space electron (x) nucleus, electron index slowest.

H is affine in B, so every model here is stored as a static part plus three
constant field-derivative matrices.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path

import numpy as np

MU_B = 13996.2  # Bohr magneton / h, MHz/T
MU_N = 7.6226  # nuclear magneton / h, MHz/T

#: Largest spin quantum number accepted by the operator builders (guardrail).
MAX_SPIN = 7.5

Q_TOL = 1e-9  # MHz
HERMITIAN_TOL = 1e-9  # MHz

AXIS_NAMES = ("D1", "D2", "b")


class InvalidSpinError(ValueError):
    """Spin quantum number is not a non-negative multiple of 1/2."""


class UnsupportedSpinError(ValueError):
    """Spin quantum number exceeds the configured guardrail."""


class ParamFileError(ValueError):
    """Malformed parameter file."""


def _check_spin(j, name="spin", max_spin=MAX_SPIN):
    twice = 2 * float(j)
    if not np.isfinite(twice) or twice < 0 or abs(twice - round(twice)) > 1e-12:
        raise InvalidSpinError(f"{name} must be a non-negative multiple of 1/2, got {j!r}")
    if max_spin is not None and float(j) > max_spin:
        raise UnsupportedSpinError(
            f"{name}={j} exceeds the supported maximum {max_spin}; raise erspin.spin.MAX_SPIN to allow it"
        )
    return round(twice) / 2


@functools.lru_cache(maxsize=None)
def _ang_mom(twice_j):
    j = twice_j / 2
    m = j - np.arange(twice_j + 1)
    # <m+1|J+|m> = sqrt(j(j+1) - m(m+1)); rows ordered m = j, j-1, ..., -j
    jp = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    jm = jp.conj().T
    jx = (jp + jm) / 2
    jy = (jp - jm) / 2j
    jz = np.diag(m).astype(complex)
    for a in (jx, jy, jz):
        a.setflags(write=False)
    return jx, jy, jz


def angular_momentum_operators(j, max_spin=MAX_SPIN):
    """Return ``(Jx, Jy, Jz)`` for spin ``j`` in the ``|j, m>`` basis, m descending."""
    j = _check_spin(j, "j", max_spin)
    return tuple(a.copy() for a in _ang_mom(round(2 * j)))


@functools.lru_cache(maxsize=None)
def _embedded(twice_s, twice_i):
    """Electron and nuclear operators embedded in the product space."""
    s_ops = _ang_mom(twice_s)
    i_ops = _ang_mom(twice_i)
    eye_s = np.eye(twice_s + 1)
    eye_i = np.eye(twice_i + 1)
    S = np.array([np.kron(a, eye_i) for a in s_ops])
    I = np.array([np.kron(eye_s, a) for a in i_ops])
    S.setflags(write=False)
    I.setflags(write=False)
    return S, I


def spin_operators(electron_spin, nuclear_spin, max_spin=MAX_SPIN):
    """Embedded ``(S, I)`` operator stacks, each of shape (3, d, d)."""
    s = _check_spin(electron_spin, "electron_spin", max_spin)
    i = _check_spin(nuclear_spin, "nuclear_spin", max_spin)
    return _embedded(round(2 * s), round(2 * i))


def _as_tensor(value, name):
    arr = np.array(value, dtype=float)
    if arr.size == 9 and arr.ndim == 1:
        arr = arr.reshape(3, 3)
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must be a 3x3 matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SpinParams:
    """Spin-Hamiltonian parameters of one electronic state.

    ``A`` and ``Q`` are in MHz, ``g`` and ``nuclear_g`` dimensionless.  ``Q``
    must be symmetric and traceless.  Set ``nuclear_zeeman=False`` to drop the
    ``-mu_n g_n B.I`` term.
    """

    g: np.ndarray
    A: np.ndarray = dc_field(default_factory=lambda: np.zeros((3, 3)))
    Q: np.ndarray = dc_field(default_factory=lambda: np.zeros((3, 3)))
    nuclear_g: float = 0.0
    electron_spin: float = 0.5
    nuclear_spin: float = 3.5
    nuclear_zeeman: bool = True
    label: str = ""

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "electron_spin", _check_spin(self.electron_spin, "electron_spin", None))
        set_(self, "nuclear_spin", _check_spin(self.nuclear_spin, "nuclear_spin", None))
        set_(self, "g", _as_tensor(self.g, "g"))
        set_(self, "A", _as_tensor(self.A, "A"))
        Q = _as_tensor(self.Q, "Q")
        if np.max(np.abs(Q - Q.T)) > Q_TOL:
            raise ValueError("Q must be symmetric (quadrupole convention: symmetric traceless tensor)")
        tr = float(np.trace(Q))
        if abs(tr) > Q_TOL:
            raise ValueError(
                f"Q must be traceless (trace = {tr:g} MHz); the quadrupole convention requires "
                "a symmetric traceless tensor"
            )
        set_(self, "Q", Q)
        set_(self, "nuclear_g", float(self.nuclear_g))
        set_(self, "nuclear_zeeman", bool(self.nuclear_zeeman))
        set_(self, "label", str(self.label))

    @property
    def dim(self):
        return round((2 * self.electron_spin + 1) * (2 * self.nuclear_spin + 1))

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return SpinParams(**kw)

    def __eq__(self, other):
        if not isinstance(other, SpinParams):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in self.__dataclass_fields__
        )

    __hash__ = None


class AffineModel:
    """Hamiltonian of the form ``H(B) = H0 + sum_k B_k D_k`` (MHz, tesla)."""

    def __init__(self, h0, dh, label=""):
        h0 = np.asarray(h0, dtype=complex)
        dh = np.asarray(dh, dtype=complex)
        if h0.ndim != 2 or h0.shape[0] != h0.shape[1]:
            raise ValueError("h0 must be square")
        if dh.shape != (3,) + h0.shape:
            raise ValueError(f"dh must have shape (3, {h0.shape[0]}, {h0.shape[0]})")
        self.h0 = 0.5 * (h0 + h0.conj().T)
        self.dh = 0.5 * (dh + dh.conj().transpose(0, 2, 1))
        self.h0.setflags(write=False)
        self.dh.setflags(write=False)
        self.label = label

    @property
    def dim(self):
        return self.h0.shape[0]

    def hamiltonian(self, field):
        b = np.asarray(field, dtype=float)
        if b.shape != (3,):
            raise ValueError("field must be a 3-vector (tesla)")
        if not np.all(np.isfinite(b)):
            raise ValueError("field components must be finite")
        return self.h0 + np.tensordot(b, self.dh, axes=1)

    __call__ = hamiltonian

    def hamiltonians(self, fields):
        """Stack of Hamiltonians for an (n, 3) array of fields."""
        fields = np.atleast_2d(np.asarray(fields, dtype=float))
        return self.h0[None] + np.tensordot(fields, self.dh, axes=1)

    def derivative(self, axis):
        if axis not in (0, 1, 2):
            raise IndexError(f"field axis must be 0, 1 or 2, got {axis!r}")
        return self.dh[axis]


class SpinHamiltonian(AffineModel):
    """Affine model built from :class:`SpinParams`.

    ``subsite=True`` gives the C2-related magnetic subsite, i.e. B rotated by
    180 degrees about b before it enters the Hamiltonian.
    """

    def __init__(self, params: SpinParams, subsite=False, max_spin=MAX_SPIN):
        S, I = spin_operators(params.electron_spin, params.nuclear_spin, max_spin)
        h0 = np.einsum("ab,aij,bjk->ik", params.A, I, S) + np.einsum(
            "ab,aij,bjk->ik", params.Q, I, I
        )
        dh = MU_B * np.einsum("ka,aij->kij", params.g, S)
        if params.nuclear_zeeman:
            dh = dh - MU_N * params.nuclear_g * I
        if subsite:
            dh = dh * np.array([-1.0, -1.0, 1.0])[:, None, None]
        super().__init__(h0, dh, label=params.label)
        self.params = params
        self.subsite = subsite


def as_model(obj, subsite=False) -> AffineModel:
    if isinstance(obj, AffineModel):
        return obj
    if isinstance(obj, SpinParams):
        return SpinHamiltonian(obj, subsite=subsite)
    raise TypeError(f"expected SpinParams or AffineModel, got {type(obj).__name__}")


def build_hamiltonian(params: SpinParams, field, subsite=False, max_spin=MAX_SPIN):
    """Hermitian Hamiltonian (MHz) at ``field`` (tesla, D1/D2/b frame)."""
    return SpinHamiltonian(params, subsite=subsite, max_spin=max_spin).hamiltonian(field)


def field_derivative(params: SpinParams, axis, subsite=False):
    """dH/dB_axis in MHz/T; independent of B."""
    if axis not in (0, 1, 2):
        raise IndexError(f"field axis must be 0, 1 or 2, got {axis!r}")
    return SpinHamiltonian(params, subsite=subsite).derivative(axis).copy()


# --- parameter files -------------------------------------------------------

_KEYS = {
    "electron_spin": "electronSpin",
    "nuclear_spin": "nuclearSpin",
    "g": "gTensor",
    "A_MHz": "aTensor",
    "Q_MHz": "qTensor",
    "nuclear_g": "nuclearG",
    "nuclear_zeeman": "nuclearZeeman",
    "label": "label",
}
_REQUIRED = ("g", "A_MHz", "Q_MHz")
_TENSORS = {"g": "g", "A_MHz": "A", "Q_MHz": "Q"}


def _parse_number(text):
    return float(Fraction(text)) if "/" in text else float(text)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_params(text, source="<string>") -> SpinParams:
    """Parse parameter-file text; see :func:`load_params` for the grammar."""
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParamFileError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ParamFileError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ParamFileError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            if key in _TENSORS:
                nums = [_parse_number(t) for t in re.split(r"[,\s]+", value) if t]
                if len(nums) != 9:
                    raise ValueError(f"expected 9 numbers (3x3 row-major), got {len(nums)}")
                values[key] = np.array(nums).reshape(3, 3)
            elif key in ("electron_spin", "nuclear_spin", "nuclear_g"):
                values[key] = _parse_number(value)
            elif key == "nuclear_zeeman":
                values[key] = _parse_bool(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ParamFileError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        lines[key] = lineno
    for key in _REQUIRED:
        if key not in values:
            raise ParamFileError(f"{source}: missing key {_KEYS[key]} ({key})")
    kw = {
        "g": values["g"],
        "A": values["A_MHz"],
        "Q": values["Q_MHz"],
        "nuclear_g": values.get("nuclear_g", 0.0),
        "electron_spin": values.get("electron_spin", 0.5),
        "nuclear_spin": values.get("nuclear_spin", 3.5),
        "nuclear_zeeman": values.get("nuclear_zeeman", True),
        "label": values.get("label", ""),
    }
    try:
        return SpinParams(**kw)
    except ValueError as exc:
        msg = str(exc)
        key = next((k for k, f in _TENSORS.items() if msg.startswith(f + " ")), None)
        if key is None and "spin" in msg:
            key = "electron_spin" if "electron" in msg else "nuclear_spin"
        where = f"{source}:{lines[key]}" if key in lines else source
        raise ParamFileError(f"{where}: {msg}") from None


def load_params(path) -> SpinParams:
    """Read a parameter file.

    One ``key = value`` per line, ``#`` starts a comment.  Keys:
    ``electron_spin`` and ``nuclear_spin`` (numbers or fractions like ``7/2``,
    defaults 1/2 and 7/2), ``g``, ``A_MHz``, ``Q_MHz`` (nine numbers each,
    row-major, separated by spaces or commas; required), ``nuclear_g``
    (default 0), ``nuclear_zeeman`` (true/false, default true), ``label``.
    Unknown or duplicated keys are errors.
    """
    path = Path(path)
    return parse_params(path.read_text(), source=str(path))


def format_params(params: SpinParams) -> str:
    def row(m):
        return " ".join(repr(float(x)) for x in np.asarray(m).ravel())

    return (
        f"label = {params.label}\n"
        f"electron_spin = {params.electron_spin!r}\n"
        f"nuclear_spin = {params.nuclear_spin!r}\n"
        f"g = {row(params.g)}\n"
        f"A_MHz = {row(params.A)}\n"
        f"Q_MHz = {row(params.Q)}\n"
        f"nuclear_g = {params.nuclear_g!r}\n"
        f"nuclear_zeeman = {'true' if params.nuclear_zeeman else 'false'}\n"
    )


def save_params(params: SpinParams, path):
    Path(path).write_text(format_params(params))
