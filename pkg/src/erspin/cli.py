"""Command-line interface.

Every command takes ``--seed`` (mandatory, recorded in the output header) and
writes CSV or key-value text whose ``#`` header lines name the tool version,
command, seed, parameters and SHA-256 digests of the input files.  The output
path and thread count are not recorded, so reruns with different ``--threads``
are byte-identical.

Exit codes: 0 success, 2 usage error, 3 unreadable input / unwritable output,
4 invalid input data, 5 numerical failure.  Failures print one line
``error: {json}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import EnsembleSpec, PulseSequence, echo_envelope, simulate_sequence
from .fitting import FitError, fit_hamiltonian_params, fit_lifetime, fit_t2_cpmg, fit_t2_two_pulse
from .io import csv_text, format_value, read_csv, read_kv, sha256_file, write_csv
from .levels import DEFAULT_GAP, solve_levels, sweep_levels
from .spectrum import LineshapeSpec, export_map, synthesize_map
from .spin import SpinHamiltonian, format_params, load_params
from .transitions import LevelTrackingError, Transition, transition_table
from .zefoz import ZefozPoint, find_zefoz

EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4, 5


class SweepParseError(ValueError):
    pass


class UsageError(Exception):
    pass


_AXES = {"D1": 0, "D2": 1, "b": 2}


def parse_sweep(spec):
    """Field path from ``axis=<D1|D2|b> from=<T> to=<T> steps=<int>`` or a vector-list file.

    A vector-list file has one field per row, three columns (D1, D2, b) in
    tesla, an optional header and ``#`` comment lines.
    """
    text = spec.strip()
    if "=" in text and not Path(text).exists():
        kv = {}
        for tok in text.split():
            if "=" not in tok:
                raise SweepParseError(f"bad sweep token {tok!r}; expected key=value")
            k, v = tok.split("=", 1)
            kv[k] = v
        unknown = set(kv) - {"axis", "from", "to", "steps"}
        if unknown:
            raise SweepParseError(f"unknown sweep keys: {', '.join(sorted(unknown))}")
        missing = {"axis", "from", "to", "steps"} - set(kv)
        if missing:
            raise SweepParseError(f"missing sweep keys: {', '.join(sorted(missing))}")
        if kv["axis"] not in _AXES:
            raise SweepParseError(f"axis must be one of D1, D2, b; got {kv['axis']!r}")
        try:
            lo, hi, steps = float(kv["from"]), float(kv["to"]), int(kv["steps"])
        except ValueError as exc:
            raise SweepParseError(f"bad sweep number: {exc}") from None
        if steps < 2:
            raise SweepParseError("steps must be >= 2")
        if lo == hi:
            raise SweepParseError("from and to must differ when steps > 1")
        fields = np.zeros((steps, 3))
        fields[:, _AXES[kv["axis"]]] = np.linspace(lo, hi, steps)
        return fields
    return read_vector_list(text)


def read_vector_list(path):
    _, header, rows = read_csv(path)
    try:
        first = [float(x) for x in header]
        body = [first] if len(first) == 3 else None
    except ValueError:
        body = []
    if body is None:
        raise SweepParseError(f"{path}: expected 3 columns")
    for lineno, cells in rows:
        if len(cells) != 3:
            raise SweepParseError(f"{path}:{lineno}: expected 3 columns, got {len(cells)}")
        try:
            body.append([float(x) for x in cells])
        except ValueError as exc:
            raise SweepParseError(f"{path}:{lineno}: {exc}") from None
    if not body:
        raise SweepParseError(f"{path}: no field vectors")
    return np.array(body)


def write_vector_list(fields, path, meta=None):
    return write_csv(path, ["B_D1", "B_D2", "B_b"], np.asarray(fields, dtype=float).tolist(), meta)


def parse_vector(text):
    text = text.strip()
    if text in _AXES:
        v = np.zeros(3)
        v[_AXES[text]] = 1.0
        return v
    if "=" in text and text.split("=")[0] in _AXES:
        v = np.zeros(3)
        v[_AXES[text.split("=")[0]]] = float(text.split("=")[1])
        return v
    parts = [float(x) for x in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError(f"expected a 3-vector, an axis name or axis=value, got {text!r}")
    return np.array(parts)


def parse_freq_axis(text):
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise ValueError(f"frequency axis must be start:stop:count, got {text!r}") from None
    if n < 2 or not hi > lo:
        raise ValueError("frequency axis needs stop > start and count >= 2")
    return np.linspace(lo, hi, n)


def parse_box(text, halfwidth):
    box = np.zeros((3, 2))
    if text is None:
        box[:, 0], box[:, 1] = -halfwidth, halfwidth
        return box
    for part in text.split(","):
        name, rng = part.split("=")
        lo, hi = (float(x) for x in rng.split(":"))
        box[_AXES[name.strip()]] = (lo, hi)
    return box


def parse_free_mask(text):
    """``A`` / ``A,Q`` / ``A[33],g[11],nuclear_g`` -> mask dict (1-based indices)."""
    mask = {}
    for tok in (t.strip() for t in text.split(",") if t.strip()):
        if tok == "nuclear_g":
            mask["nuclear_g"] = True
            continue
        name, _, idx = tok.partition("[")
        if name not in ("g", "A", "Q"):
            raise ValueError(f"unknown parameter {tok!r}")
        m = mask.setdefault(name, np.zeros((3, 3), dtype=bool))
        if not idx:
            m[:] = True
        else:
            idx = idx.rstrip("]")
            if len(idx) != 2 or not idx.isdigit():
                raise ValueError(f"bad component {tok!r}; use e.g. A[33]")
            m[int(idx[0]) - 1, int(idx[1]) - 1] = True
    return mask


# --- command implementations ----------------------------------------------


def _meta(args, inputs):
    meta = [("tool", "erspin"), ("version", __version__), ("command", args.command), ("seed", args.seed)]
    for key in sorted(vars(args)):
        if key in ("command", "seed", "out", "threads", "func", "log_level") or key.endswith("_out"):
            continue
        val = getattr(args, key)
        if val is None:
            continue
        meta.append((f"arg.{key}", json.dumps(val) if isinstance(val, (list, tuple)) else val))
    for p in inputs:
        meta.append((f"sha256.{Path(p).name}", sha256_file(p)))
    return meta


def _emit(args, text):
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def _fields_from(args):
    if getattr(args, "sweep", None):
        return parse_sweep(args.sweep)
    return parse_vector(args.field or "0,0,0")[None, :]


def cmd_levels(args):
    params = load_params(args.params)
    model = SpinHamiltonian(params, subsite=args.subsite)
    fields = _fields_from(args)
    tracked = sweep_levels(model, fields, args.gap)
    d = model.dim
    header = ["B_D1", "B_D2", "B_b", *(f"E{k}_MHz" for k in range(d))]
    rows = [[*f, *e] for f, e in zip(tracked.fields, tracked.energies)]
    inputs = [args.params] + ([args.sweep] if args.sweep and Path(args.sweep).exists() else [])
    _emit(args, csv_text(header, rows, _meta(args, inputs)))


def cmd_transitions(args):
    params = load_params(args.params)
    model = SpinHamiltonian(params, subsite=args.subsite)
    field = parse_vector(args.field)
    lv = solve_levels(model.hamiltonian(field), field, args.gap)
    table = transition_table(lv, model, parse_vector(args.rf), tuple(args.band), curvature=not args.no_curvature,
                             step=args.step)
    _emit(args, csv_text(Transition.CSV_HEADER, [t.row() for t in table], _meta(args, [args.params])))


def cmd_map(args):
    params = load_params(args.params)
    model = SpinHamiltonian(params, subsite=args.subsite)
    fields = parse_sweep(args.sweep)
    freqs = parse_freq_axis(args.freq)
    grid = synthesize_map(
        model, fields, freqs, parse_vector(args.rf), LineshapeSpec(args.lineshape, args.fwhm),
        temperature=args.temperature, resonator_center=args.resonator_center,
        resonator_width=args.resonator_width, populations=args.populations, threads=args.threads,
    )
    if args.out in (None, "-"):
        raise UsageError("map needs --out (a sidecar .meta file is written next to it)")
    inputs = [args.params] + ([args.sweep] if Path(args.sweep).exists() else [])
    export_map(grid, args.out, dict(_meta(args, inputs)))


def cmd_zefoz(args):
    params = load_params(args.params)
    model = SpinHamiltonian(params, subsite=args.subsite)
    box = parse_box(args.box, args.halfwidth)
    points = find_zefoz(model, tuple(args.pair), box, n_starts=args.starts, seed=args.seed, tol=args.tol)
    meta = _meta(args, [args.params]) + [("points", len(points))]
    _emit(args, csv_text(ZefozPoint.CSV_HEADER, [p.row() for p in points], meta))


_SEQ_KEYS = {
    "kind": str, "drive_MHz": float, "tau_us": float, "t_pi_us": float, "t_pi_half_us": float,
    "n_pulses": int, "b1_T": float, "ideal": lambda s: s.lower() in ("1", "true", "yes"), "laser_gates_us": str,
}


def load_sequence(path):
    """Key-value sequence block: kind, drive_MHz, tau_us, t_pi_us, t_pi_half_us, n_pulses, b1_T, ideal, laser_gates_us."""
    kv = read_kv(path)
    unknown = set(kv) - set(_SEQ_KEYS)
    if unknown:
        raise ValueError(f"{path}: unknown sequence keys {sorted(unknown)}")
    v = {k: _SEQ_KEYS[k](s) for k, s in kv.items()}
    gates = ()
    if "laser_gates_us" in v:
        gates = tuple(tuple(float(x) for x in g.split(":")) for g in v["laser_gates_us"].split(",") if g)
    return PulseSequence(
        kind=v.get("kind", "twoPulse"), drive_freq=v["drive_MHz"], tau=v["tau_us"], t_pi=v.get("t_pi_us", 0.0),
        t_pi_half=v.get("t_pi_half_us"), n_pulses=v.get("n_pulses", 1), b1=v.get("b1_T", 0.0),
        ideal=v.get("ideal", True), laser_gate_windows=gates,
    )


def cmd_echo_sim(args):
    inputs = []
    if args.sequence:
        seq = load_sequence(args.sequence)
        inputs.append(args.sequence)
    else:
        if args.drive is None or args.tau is None:
            raise UsageError("echo-sim needs --sequence or both --drive and --tau")
        seq = PulseSequence(args.kind, args.drive, args.tau, t_pi=args.t_pi, n_pulses=args.n_pulses,
                            ideal=not args.finite)
    lines = []
    for spec in args.line or []:
        f, w, t2 = spec.split(":")
        lines.append((float(f), float(w), float(t2)))
    if not lines:
        lines = [(seq.drive_freq, 1.0, float("inf"))]
    ens = EnsembleSpec(tuple(lines), args.inhom, args.spins, args.seed)
    trace = simulate_sequence(ens=ens, seq=seq, sample_rate=args.sample_rate, threads=args.threads)
    meta = _meta(args, inputs) + [("echo_centers_us", " ".join(repr(float(c)) for c in trace.echo_centers))]
    if args.window:
        for k, (c, inten) in enumerate(echo_envelope(trace, args.window)):
            meta.append((f"echo{k + 1}", f"{c!r} {inten!r}"))
    _emit(args, csv_text(trace.CSV_HEADER, trace.rows(), meta))


def _read_xy(path):
    _, header, rows = read_csv(path)
    out = []
    for lineno, cells in rows:
        if len(cells) < 2:
            raise ValueError(f"{path}:{lineno}: expected two columns")
        try:
            out.append((float(cells[0]), float(cells[1])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def _kv_text(meta, items):
    lines = [f"# {k}={format_value(v)}" for k, v in meta]
    lines += [f"{k} = {format_value(v)}" for k, v in items.items()]
    return "\n".join(lines) + "\n"


def cmd_fit_t2(args):
    data = _read_xy(args.data)
    fit = (fit_t2_two_pulse if args.model == "twoPulse" else fit_t2_cpmg)(data, allow_stretch=args.stretch)
    _emit(args, _kv_text(_meta(args, [args.data]), fit.report()))


def cmd_fit_lifetime(args):
    fit = fit_lifetime(_read_xy(args.data), excited_lifetime=args.excited_lifetime, factor=args.factor,
                       ground_min=args.ground_min)
    items = {"T1_ms": fit.t1, "T1_lower_ms": fit.t1_lower, "amplitude": fit.amplitude,
             "classification": fit.classification}
    _emit(args, _kv_text(_meta(args, [args.data]), items))


def read_line_list(path):
    """Observed lines: columns B_D1, B_D2, B_b (T), f_MHz and optionally low, high."""
    _, header, rows = read_csv(path)
    out = []
    for lineno, cells in rows:
        if len(cells) not in (4, 6):
            raise ValueError(f"{path}:{lineno}: expected 4 or 6 columns, got {len(cells)}")
        try:
            b = tuple(float(x) for x in cells[:3])
            f = float(cells[3])
            pair = (int(cells[4]), int(cells[5])) if len(cells) == 6 and cells[4] != "" else None
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        out.append((b, f, pair))
    return out


def cmd_fit_ham(args):
    initial = load_params(args.params)
    obs = read_line_list(args.data)
    results = fit_hamiltonian_params(obs, initial, parse_free_mask(args.free), n_starts=args.starts, seed=args.seed,
                                     subsite=args.subsite)
    best = results[0]
    meta = _meta(args, [args.params, args.data])
    items = {"residual_norm_MHz": best.residual_norm, "converged": best.converged, "start_index": best.start_index,
             "n_observations": len(obs), "ambiguous": " ".join(map(str, best.ambiguous)),
             "unidentified": "; ".join(best.unidentified)}
    items.update({f"var.{k}": v for k, v in best.variances.items()})
    _emit(args, _kv_text(meta, items) + "\n" + "\n".join(
        "# fitted " + line for line in format_params(best.params).splitlines()) + "\n")
    if args.params_out:
        Path(args.params_out).write_text(format_params(best.params))
    if args.residuals_out:
        rows = [[*o[0], o[1], r] for o, r in zip(obs, best.residuals)]
        write_csv(args.residuals_out, ["B_D1", "B_D2", "B_b", "f_obs_MHz", "residual_MHz"], rows, meta)


# --- parser ----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail(EXIT_USAGE, "UsageError", message)


def _fail(code, kind, message):
    sys.stderr.write("error: " + json.dumps({"code": code, "kind": kind, "message": message}) + "\n")
    sys.exit(code)


def build_parser():
    p = _Parser(prog="erspin", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"erspin {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, params=True):
        sp.add_argument("--seed", type=int, required=True, help="random seed (recorded in the output header)")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--out", "-o", default=None, help="output file (default stdout)")
        if params:
            sp.add_argument("--params", required=True, help="spin-Hamiltonian parameter file")
            sp.add_argument("--subsite", action="store_true", help="use the C2-related magnetic subsite")

    sp = sub.add_parser("levels", help="energy levels at a field or along a sweep (CSV)")
    common(sp)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--field", help="field vector in T, e.g. '0,0,0.01' or 'b=0.01'")
    g.add_argument("--sweep", help="'axis=b from=-0.01 to=0.01 steps=101' or a vector-list file")
    sp.add_argument("--gap", type=float, default=DEFAULT_GAP, help="degeneracy threshold (MHz)")
    sp.set_defaults(func=cmd_levels)

    sp = sub.add_parser("transitions", help="transition table at one field (CSV)")
    common(sp)
    sp.add_argument("--field", default="0,0,0")
    sp.add_argument("--rf", default="b", help="RF direction: D1, D2, b or a vector")
    sp.add_argument("--band", nargs=2, type=float, default=[700.0, 1200.0], metavar=("MIN", "MAX"))
    sp.add_argument("--no-curvature", action="store_true")
    sp.add_argument("--step", type=float, default=1e-4, help="curvature stencil step (T)")
    sp.add_argument("--gap", type=float, default=DEFAULT_GAP)
    sp.set_defaults(func=cmd_transitions)

    sp = sub.add_parser("map", help="synthetic field x frequency spectrum map (CSV grid + .meta)")
    common(sp)
    sp.add_argument("--sweep", required=True)
    sp.add_argument("--freq", default="700:1200:501", help="start:stop:count in MHz")
    sp.add_argument("--rf", default="b")
    sp.add_argument("--lineshape", choices=["lorentzian", "gaussian"], default="lorentzian")
    sp.add_argument("--fwhm", type=float, default=5.0, help="linewidth (MHz)")
    sp.add_argument("--temperature", type=float, default=4.7, help="K")
    sp.add_argument("--resonator-center", type=float, default=None, help="MHz")
    sp.add_argument("--resonator-width", type=float, default=None, help="MHz")
    sp.add_argument("--populations", choices=["boltzmann", "uniform"], default="boltzmann")
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("zefoz", help="search ZEFOZ points of one transition (CSV report)")
    common(sp)
    sp.add_argument("--pair", nargs=2, type=int, required=True, metavar=("LOW", "HIGH"))
    sp.add_argument("--box", default=None, help="'D1=-0.01:0.01,D2=-0.01:0.01,b=0:0' (T)")
    sp.add_argument("--halfwidth", type=float, default=0.01, help="cubic box half-width if --box is absent (T)")
    sp.add_argument("--starts", type=int, default=32)
    sp.add_argument("--tol", type=float, default=1e-3, help="gradient tolerance (MHz/T)")
    sp.set_defaults(func=cmd_zefoz)

    sp = sub.add_parser("echo-sim", help="simulate a two-pulse or CPMG echo trace (CSV)")
    common(sp, params=False)
    sp.add_argument("--sequence", help="key-value sequence file")
    sp.add_argument("--kind", choices=["twoPulse", "cpmg"], default="twoPulse")
    sp.add_argument("--drive", type=float, help="drive frequency (MHz)")
    sp.add_argument("--tau", type=float, help="pulse delay (us)")
    sp.add_argument("--t-pi", type=float, default=0.0, help="pi-pulse length (us)")
    sp.add_argument("--n-pulses", type=int, default=1)
    sp.add_argument("--finite", action="store_true", help="finite-width pulses (needs --t-pi)")
    sp.add_argument("--line", action="append", help="FREQ_MHz:WEIGHT:T2_us (repeatable)")
    sp.add_argument("--inhom", type=float, default=0.0, help="inhomogeneous FWHM (MHz)")
    sp.add_argument("--spins", type=int, default=200)
    sp.add_argument("--sample-rate", type=float, default=None, help="samples per us")
    sp.add_argument("--window", type=float, default=None, help="echo integration window (us)")
    sp.set_defaults(func=cmd_echo_sim)

    sp = sub.add_parser("fit-t2", help="fit T2 to echo-decay data (key-value report)")
    common(sp, params=False)
    sp.add_argument("--data", required=True, help="CSV with columns tau_or_T_us, intensity")
    sp.add_argument("--model", choices=["twoPulse", "cpmg"], default="twoPulse")
    sp.add_argument("--stretch", action="store_true", help="fit the stretch exponent too")
    sp.set_defaults(func=cmd_fit_t2)

    sp = sub.add_parser("fit-lifetime", help="fit a dark-time decay and classify the electronic state")
    common(sp, params=False)
    sp.add_argument("--data", required=True, help="CSV with columns dark_time_ms, intensity")
    sp.add_argument("--excited-lifetime", type=float, default=11.0, help="ms")
    sp.add_argument("--factor", type=float, default=3.0)
    sp.add_argument("--ground-min", type=float, default=60.0, help="ms")
    sp.set_defaults(func=cmd_fit_lifetime)

    sp = sub.add_parser("fit-ham", help="refine spin-Hamiltonian parameters against line positions")
    common(sp)
    sp.add_argument("--data", required=True, help="CSV: B_D1,B_D2,B_b,f_MHz[,low,high]")
    sp.add_argument("--free", required=True, help="free components, e.g. 'A' or 'A[33],g[11],nuclear_g'")
    sp.add_argument("--starts", type=int, default=8)
    sp.add_argument("--params-out", default=None)
    sp.add_argument("--residuals-out", default=None)
    sp.set_defaults(func=cmd_fit_ham)
    return p


def run(argv=None):
    """Parse ``argv`` and dispatch; returns the exit status."""
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        _fail(EXIT_USAGE, "UsageError", "--threads must be >= 1")
    try:
        args.func(args)
    except UsageError as exc:
        _fail(EXIT_USAGE, "UsageError", str(exc))
    except OSError as exc:
        _fail(EXIT_IO, type(exc).__name__, str(exc))
    except (LevelTrackingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except (ValueError, FitError) as exc:
        _fail(EXIT_DATA, type(exc).__name__, str(exc))
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
