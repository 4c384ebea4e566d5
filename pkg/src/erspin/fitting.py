"""Decay, lifetime and spin-Hamiltonian parameter fits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import least_squares

from .dynamics import DecayData, decay_model
from .spectrum import DEFAULT_FWHM
from .spin import MU_B, MU_N, SpinHamiltonian, SpinParams, spin_operators

EXCITED_LIFETIME = 11.0  # ms
GROUND_MIN_LIFETIME = 60.0  # ms
LIFETIME_FACTOR = 3.0
NO_DECAY_LOG_DROP = 1e-12

_SLOPE = {"twoPulse": 4.0, "cpmg": 2.0}  # ln I = ln A - _SLOPE * x / T2


class FitError(ValueError):
    pass


class UnderdeterminedError(FitError):
    pass


class IdentifiabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DecayFit:
    kind: str
    t2: float  # us
    amplitude: float
    stretch: float = 1.0
    residual_norm: float = 0.0  # of log-intensity residuals
    covariance_diag: tuple = ()  # variances of (amplitude, t2[, stretch])
    converged: bool = True
    message: str = ""

    def report(self):
        items = {
            "model": self.kind,
            "T2_us": self.t2,
            "amplitude": self.amplitude,
            "stretch": self.stretch,
            "residual_norm": self.residual_norm,
            "var_amplitude": self.covariance_diag[0] if self.covariance_diag else float("nan"),
            "var_T2": self.covariance_diag[1] if len(self.covariance_diag) > 1 else float("nan"),
            "converged": self.converged,
        }
        if len(self.covariance_diag) > 2:
            items["var_stretch"] = self.covariance_diag[2]
        if self.message:
            items["message"] = self.message
        return items


def _as_xy(data):
    if isinstance(data, DecayData):
        return data.x.astype(float), data.intensity.astype(float)
    arr = np.asarray(list(data), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise FitError("data must be a sequence of (x, intensity) pairs")
    return arr[:, 0], arr[:, 1]


def _linear_log_fit(x, y):
    """Least squares ln y = c0 + c1 x.  Returns (c, cov_c, rss)."""
    if np.any(~(y > 0)):
        raise FitError("intensities must be positive for a log-domain fit")
    if np.ptp(x) == 0:
        raise FitError("singular design: all abscissae are equal")
    X = np.column_stack([np.ones_like(x), x])
    ly = np.log(y)
    c, *_ = np.linalg.lstsq(X, ly, rcond=None)
    r = ly - X @ c
    rss = float(r @ r)
    dof = len(x) - 2
    s2 = rss / dof if dof > 0 else float("nan")
    cov = s2 * np.linalg.inv(X.T @ X)
    return c, cov, rss


def _fit_decay(kind, data, allow_stretch):
    x, y = _as_xy(data)
    need = 4 if allow_stretch else 3
    if len(x) < need:
        raise FitError(f"insufficient points: {len(x)} given, {need} needed")
    k = _SLOPE[kind]
    c, cov, rss = _linear_log_fit(x, y)
    amp = math.exp(c[0])
    # a log-intensity drop below roundoff across the data is no decay at all
    if c[1] * np.ptp(x) > -NO_DECAY_LOG_DROP:
        return DecayFit(kind, math.inf, amp, 1.0, math.sqrt(rss), (amp**2 * cov[0, 0], math.inf),
                        False, "no decay: log-intensity slope is not negative, T2 unbounded")
    t2 = -k / c[1]
    if not allow_stretch:
        var_t2 = (k / c[1] ** 2) ** 2 * cov[1, 1]
        return DecayFit(kind, t2, amp, 1.0, math.sqrt(rss), (amp**2 * cov[0, 0], var_t2))

    ly = np.log(y)

    def resid(p):
        return np.log(decay_model(kind, x, math.exp(p[1]), p[2], 1.0)) + p[0] - ly

    res = least_squares(resid, [c[0], math.log(t2), 1.0], bounds=([-np.inf, -np.inf, 0.2], [np.inf, np.inf, 5.0]),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14)
    dof = len(x) - 3
    rss = float(res.fun @ res.fun)
    try:
        cov = (rss / dof if dof > 0 else float("nan")) * np.linalg.inv(res.jac.T @ res.jac)
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.nan)
    amp, t2, s = math.exp(res.x[0]), math.exp(res.x[1]), float(res.x[2])
    return DecayFit(kind, t2, amp, s, math.sqrt(rss),
                    (amp**2 * cov[0, 0], t2**2 * cov[1, 1], cov[2, 2]), bool(res.success), res.message)


def fit_t2_two_pulse(data, allow_stretch=False) -> DecayFit:
    """Fit two-pulse echo intensities ``(tau, I)`` to ``A exp(-2 (2 tau / T2)^s)``.

    With the stretch fixed at 1 this is an exact linear fit of ln I against
    tau with slope -4/T2.
    """
    return _fit_decay("twoPulse", data, allow_stretch)


def fit_t2_cpmg(data, allow_stretch=False) -> DecayFit:
    """Fit CPMG echo intensities ``(T, I)`` to ``A exp(-2 (T / T2)^s)``."""
    return _fit_decay("cpmg", data, allow_stretch)


@dataclass(frozen=True)
class LifetimeFit:
    t1: float  # ms
    t1_lower: float  # ms, rate + 2 sigma
    amplitude: float
    classification: str  # excitedLike / groundLike / unclassified


def fit_lifetime(data, excited_lifetime=EXCITED_LIFETIME, factor=LIFETIME_FACTOR,
                 ground_min=GROUND_MIN_LIFETIME) -> LifetimeFit:
    """Fit echo intensity against dark time (ms) to ``A exp(-t / T1)`` and classify the state.

    ``excitedLike`` when T1 is within ``factor`` of the excited-state lifetime,
    ``groundLike`` when the 2-sigma lower bound on T1 exceeds ``ground_min``.
    """
    x, y = _as_xy(data)
    if len(x) < 3:
        raise FitError(f"insufficient points: {len(x)} given, 3 needed")
    c, cov, _ = _linear_log_fit(x, y)
    rate = -c[1] if -c[1] * np.ptp(x) > NO_DECAY_LOG_DROP else 0.0
    sigma = math.sqrt(cov[1, 1]) if np.isfinite(cov[1, 1]) else 0.0
    t1 = 1.0 / rate if rate > 0 else math.inf
    rate_hi = rate + 2.0 * sigma
    t1_lower = 1.0 / rate_hi if rate_hi > 0 else math.inf
    if excited_lifetime / factor <= t1 <= excited_lifetime * factor:
        label = "excitedLike"
    elif t1_lower > ground_min:
        label = "groundLike"
    else:
        label = "unclassified"
    return LifetimeFit(t1, t1_lower, math.exp(c[0]), label)


# --- spin-Hamiltonian refinement -------------------------------------------


@dataclass(frozen=True)
class LineObservation:
    field: tuple  # T
    frequency: float  # MHz
    pair: tuple | None = None


@dataclass(frozen=True, eq=False)
class HamFitResult:
    params: SpinParams
    residuals: np.ndarray  # model - observed, MHz
    converged: bool
    start_index: int
    ambiguous: tuple = ()  # observation indices with a second model line within the ambiguity radius
    variances: dict = dc_field(default_factory=dict)
    unidentified: tuple = ()  # parameter combinations the data cannot fix

    @property
    def residual_norm(self):
        return float(np.linalg.norm(self.residuals))


DEFAULT_SPREAD = {"g": 0.2, "A": 20.0, "Q": 2.0, "nuclear_g": 0.05}
_Q_FREE = ((0, 0), (1, 1), (0, 1), (0, 2), (1, 2))


def free_parameters(free_mask):
    """Expand a mask into ``[(name, i, j)]``.

    ``free_mask`` maps ``"g"``, ``"A"``, ``"Q"`` to 3x3 boolean arrays (or
    True for all components) and ``"nuclear_g"`` to a bool.  Q is kept
    symmetric and traceless: (1,0), (2,0), (2,1) follow their transposes and
    Q[2,2] = -Q[0,0] - Q[1,1], so only the five entries in ``_Q_FREE`` are
    independent.
    """
    out = []
    for name in ("g", "A", "Q"):
        m = (free_mask or {}).get(name, False)
        m = np.full((3, 3), bool(m)) if np.ndim(m) == 0 else np.asarray(m, dtype=bool)
        if name == "Q":
            m = m | m.T
            for i, j in _Q_FREE:
                if m[i, j] or (i == j and m[2, 2]):
                    out.append((name, i, j))
        else:
            out.extend((name, i, j) for i in range(3) for j in range(3) if m[i, j])
    if (free_mask or {}).get("nuclear_g", False):
        out.append(("nuclear_g", 0, 0))
    return out


def _param_name(p):
    name, i, j = p
    return "nuclear_g" if name == "nuclear_g" else f"{name}[{i + 1}{j + 1}]"


def _get(params, free):
    return np.array([params.nuclear_g if n == "nuclear_g" else getattr(params, n)[i, j] for n, i, j in free])


def _set(params, free, x):
    t = {"g": params.g.copy(), "A": params.A.copy(), "Q": params.Q.copy()}
    ng = params.nuclear_g
    for (n, i, j), v in zip(free, x):
        if n == "nuclear_g":
            ng = float(v)
        else:
            t[n][i, j] = v
            if n == "Q":
                t[n][j, i] = v
    q = t["Q"]
    q[2, 2] = -q[0, 0] - q[1, 1]
    return params.replace(g=t["g"], A=t["A"], Q=q, nuclear_g=ng)


def _observations(assignments):
    obs = []
    for a in assignments:
        if isinstance(a, LineObservation):
            obs.append(a)
        else:
            a = tuple(a)
            pair = tuple(int(k) for k in a[2]) if len(a) > 2 and a[2] is not None else None
            obs.append(LineObservation(tuple(float(v) for v in a[0]), float(a[1]), pair))
    return obs


class _Residuals:
    def __init__(self, obs, subsite=False):
        self.obs = obs
        self.subsite = subsite
        keys = sorted({o.field for o in obs})
        self.fields = np.array(keys, dtype=float)
        self.field_index = np.array([keys.index(o.field) for o in obs])
        self.f_obs = np.array([o.frequency for o in obs])

    def model_freqs(self, params):
        model = SpinHamiltonian(params, subsite=self.subsite)
        e = np.linalg.eigvalsh(model.hamiltonians(self.fields))
        iu, ju = np.triu_indices(e.shape[1], 1)
        return e, e[:, ju] - e[:, iu]

    def _match(self, e, ambiguity_radius=None):
        """Residuals, matched level pairs and ambiguous observation indices."""
        iu, ju = np.triu_indices(e.shape[1], 1)
        r = np.empty(len(self.obs))
        pairs = np.empty((len(self.obs), 2), dtype=int)
        amb = []
        for k, o in enumerate(self.obs):
            fi = self.field_index[k]
            if o.pair is not None:
                i, j = o.pair
                r[k] = e[fi, j] - e[fi, i] - o.frequency
                pairs[k] = i, j
                continue
            d = e[fi, ju] - e[fi, iu] - o.frequency
            order = np.argsort(np.abs(d), kind="stable")
            r[k] = d[order[0]]
            pairs[k] = iu[order[0]], ju[order[0]]
            if ambiguity_radius is not None and len(d) > 1 and abs(d[order[1]] - d[order[0]]) < ambiguity_radius:
                amb.append(k)
        return r, pairs, tuple(amb)

    def __call__(self, params, ambiguity_radius=None):
        e, _ = self.model_freqs(params)
        r, _, amb = self._match(e, ambiguity_radius)
        return (r, amb) if ambiguity_radius is not None else r

    def with_jacobian(self, params, free):
        """Residuals and their exact parameter Jacobian.

        H is linear in every parameter, so each column follows from
        Hellmann-Feynman: d(E_j - E_i) = <j|dH|j> - <i|dH|i>.
        """
        model = SpinHamiltonian(params, subsite=self.subsite)
        e, v = np.linalg.eigh(model.hamiltonians(self.fields))
        r, pairs, _ = self._match(e)
        S, I = spin_operators(params.electron_spin, params.nuclear_spin)
        fields = self.fields * (np.array([-1.0, -1.0, 1.0]) if self.subsite else 1.0)
        J = np.empty((len(r), len(free)))
        for fi, b in enumerate(fields):
            ops = []
            for n, a, c in free:
                if n == "g":
                    ops.append(MU_B * b[a] * S[c])
                elif n == "A":
                    ops.append(I[a] @ S[c])
                elif n == "Q" and a == c:
                    ops.append(I[a] @ I[a] - I[2] @ I[2])
                elif n == "Q":
                    ops.append(I[a] @ I[c] + I[c] @ I[a])
                else:
                    ops.append(-MU_N * np.einsum("k,kij->ij", b, I) if params.nuclear_zeeman else 0 * I[0])
            w = v[fi]
            diag = np.einsum("in,pij,jn->pn", w.conj(), np.array(ops), w).real  # (n_free, n_levels)
            sel = self.field_index == fi
            J[sel] = (diag[:, pairs[sel, 1]] - diag[:, pairs[sel, 0]]).T
        return r, J


def _null_directions(J, free, tol=1e-7):
    """Rank of ``J`` and its null directions written as parameter combinations."""
    names = [_param_name(p) for p in free]
    _, s, vt = np.linalg.svd(J, full_matrices=True)
    smax = s[0] if len(s) else 0.0
    rank = int(np.sum(s > tol * max(smax, 1e-300)))
    dirs = []
    for v in vt[rank:]:
        v = v / v[np.argmax(np.abs(v))]
        dirs.append(" ".join(f"{v[k]:+.3g}*{names[k]}" for k in np.argsort(-np.abs(v), kind="stable")
                             if abs(v[k]) > 0.05))
    return rank, tuple(dirs)


def _check_identifiable(J, free):
    """Raise when there are fewer observations than free parameters; warn on a rank-deficient Jacobian.

    A rank deficiency with enough data is usually a symmetry of the spectrum,
    e.g. a common rotation of the electron-spin frame (g -> g R^T, A -> A R^T)
    leaves every eigenvalue unchanged.  Line positions then fix the residual
    but not the parameters along those directions.
    """
    rank, dirs = _null_directions(J, free)
    msg = (f"{J.shape[0]} observations, {J.shape[1]} free parameters, rank {rank}; "
           "unconstrained directions: " + "; ".join(dirs))
    if J.shape[0] < J.shape[1]:
        raise UnderdeterminedError("under-determined fit: " + msg)
    if dirs:
        warnings.warn("parameters not identifiable from line positions: " + msg, IdentifiabilityWarning,
                      stacklevel=3)
    return dirs


def fit_hamiltonian_params(
    assignments,
    initial: SpinParams,
    free_mask=None,
    n_starts=8,
    seed=0,
    spread=None,
    ambiguity_radius=DEFAULT_FWHM,
    subsite=False,
    gtol_converged=1e-6,
):
    """Refine spin-Hamiltonian parameters against observed line positions.

    ``assignments`` are ``(field, frequency[, (i, j)])`` tuples or
    :class:`LineObservation`.  Without a pair the observation is matched to
    the nearest model transition, re-matched at every evaluation.  Start 0 is
    ``initial``; further starts add seeded Gaussian perturbations of size
    ``spread[name]``.  Each start runs Levenberg-Marquardt.  Results are
    sorted by residual norm.
    """
    obs = _observations(assignments)
    res_fn = _Residuals(obs, subsite)
    free = free_parameters(free_mask)
    if not free:
        r, amb = res_fn(initial, ambiguity_radius)
        return [HamFitResult(initial, r, True, 0, amb)]

    x0 = _get(initial, free)
    cache = {}

    def evaluate(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            cache[key] = res_fn.with_jacobian(_set(initial, free, x), free)
        return cache[key]

    def fun(x):
        return evaluate(x)[0]

    def jac(x):
        return evaluate(x)[1]

    unidentified = _check_identifiable(jac(x0), free)

    spread = {**DEFAULT_SPREAD, **(spread or {})}
    scale = np.array([spread[n] for n, _, _ in free])
    rng = np.random.default_rng(seed)
    starts = [x0] + [x0 + scale * rng.standard_normal(len(x0)) for _ in range(max(0, n_starts - 1))]

    results = []
    for k, xs in enumerate(starts):
        try:
            sol = least_squares(fun, xs, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * (len(xs) + 1))
        except ValueError:
            continue
        params = _set(initial, free, sol.x)
        r, amb = res_fn(params, ambiguity_radius)
        J = sol.jac
        grad = np.max(np.abs(J.T @ r)) if len(r) else 0.0
        # gradient of 0.5 |r|^2, relative to the natural scale |J| |r|
        gscale = max(1.0, float(np.linalg.norm(J)) * max(1.0, float(np.linalg.norm(r))))
        converged = sol.status > 0 and grad <= gtol_converged * gscale
        dof = len(r) - len(xs)
        try:
            cov = np.linalg.pinv(J.T @ J) * (float(r @ r) / dof if dof > 0 else float("nan"))
            var = {_param_name(p): float(cov[q, q]) for q, p in enumerate(free)}
        except np.linalg.LinAlgError:
            var = {}
        results.append(HamFitResult(params, r, converged, k, amb, var, unidentified))
    if not results:
        raise FitError("every start failed inside the least-squares solver")
    results.sort(key=lambda h: (h.residual_norm, h.start_index))
    return results
