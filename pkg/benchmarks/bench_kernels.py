"""Compare the numba and numpy backends of the two inner loops.

    python benchmarks/bench_kernels.py [--repeat 5] [--threads 1 4]

Times ``accumulate_lines`` (map synthesis, 500 field rows x 120 lines x 1001
frequency bins), ``echo_signal`` (400-spin finite-pulse CPMG trace) and the
end-to-end 500-step map, and checks that both backends agree and that the
output bytes do not depend on the thread count.  JIT compilation is excluded
by a warm-up call.
"""

import argparse
import os
import time
from pathlib import Path

import numpy as np

from erspin import _kernels
from erspin._accel import HAVE_NUMBA
from erspin.dynamics import PulseSequence
from erspin.spectrum import synthesize_map
from erspin.spin import SpinHamiltonian, load_params

DATA = Path(__file__).resolve().parents[1] / "data" / "illustrative_ground.txt"


def best_of(fn, repeat):
    fn()  # warm-up, compiles the numba path
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def line_inputs():
    rng = np.random.default_rng(0)
    centers = rng.uniform(650, 1250, (500, 120))
    weights = rng.uniform(0, 1, (500, 120))
    return np.linspace(700, 1200, 1001), centers, weights


def echo_inputs():
    seq = PulseSequence("cpmg", 900.0, 10.0, t_pi=0.2, n_pulses=8, ideal=False)
    rng = np.random.default_rng(1)
    n = 400
    det = rng.normal(0, 1.0, n)
    return np.linspace(0, 170, 17001), det, np.ones(n) / n, np.full(n, 1 / 300.0), seq.segments()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--threads", type=int, nargs="+", default=[1, 4])
    args = ap.parse_args(argv)

    backends = [False, True] if HAVE_NUMBA else [False]
    print(f"cpus={os.cpu_count()}  numba={'yes' if HAVE_NUMBA else 'no'}  repeat={args.repeat}")
    print(f"{'kernel':<18}{'backend':<8}{'threads':>8}{'best_s':>10}")

    freqs, centers, weights = line_inputs()
    echo = echo_inputs()
    results = {}
    for use_numba in backends:
        name = "numba" if use_numba else "numpy"
        for threads in args.threads:
            t, out = best_of(lambda: _kernels.accumulate_lines(freqs, centers, weights, 5.0, threads=threads,
                                                               use_numba=use_numba), args.repeat)
            results[("lines", name, threads)] = out
            print(f"{'accumulate_lines':<18}{name:<8}{threads:>8}{t:>10.4f}")
            t, out = best_of(lambda: _kernels.echo_signal(*echo, use_numba=use_numba, threads=threads), args.repeat)
            results[("echo", name, threads)] = out
            print(f"{'echo_signal':<18}{name:<8}{threads:>8}{t:>10.4f}")

    model = SpinHamiltonian(load_params(DATA))
    fields = np.zeros((500, 3))
    fields[:, 2] = np.linspace(-0.02, 0.02, 500)
    for threads in args.threads:
        t, _ = best_of(lambda: synthesize_map(model, fields, freqs, [0, 0, 1], threads=threads), args.repeat)
        print(f"{'map 500x120':<18}{'active':<8}{threads:>8}{t:>10.4f}")

    for kernel in ("lines", "echo"):
        for name in ["numba" if b else "numpy" for b in backends]:
            ref = results[(kernel, name, args.threads[0])].tobytes()
            same = all(results[(kernel, name, th)].tobytes() == ref for th in args.threads)
            print(f"{kernel}/{name}: bytes identical across threads: {same}")
        if HAVE_NUMBA:
            a, b = results[(kernel, "numba", args.threads[0])], results[(kernel, "numpy", args.threads[0])]
            err = np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)
            print(f"{kernel}: max relative backend difference {err:.2e}")


if __name__ == "__main__":
    main()
