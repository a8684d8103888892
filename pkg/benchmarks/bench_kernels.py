"""Benchmark the compiled training kernels against the numpy fallback.

Times the three hot operations (branch forward, branch backward, Adam
update) on the shipped model shapes, then times one full federated round,
and reports the numeric agreement between the two backends.

Usage: python benchmarks/bench_kernels.py [repeats]
"""

import sys
import time

import numpy as np

from crchfl.kernels import get_backend


def _timeit(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def _branch_args(rng, n, din, h1, h2, dout):
    return (
        np.ascontiguousarray(rng.normal(size=(n, din))),
        np.ascontiguousarray(rng.normal(size=(din, h1)) / np.sqrt(din)),
        rng.normal(size=h1),
        np.ascontiguousarray(rng.normal(size=(h1, h2)) / np.sqrt(h1)),
        rng.normal(size=h2),
        np.ascontiguousarray(rng.normal(size=(h2, dout)) / np.sqrt(h2)),
        rng.normal(size=dout),
    )


def bench_kernels(repeats=2000):
    try:
        compiled = get_backend("compiled")
    except ImportError:
        print("compiled kernels not built; run `pip install -e .` with a C toolchain")
        return 1
    numpy_backend = get_backend("numpy")

    rng = np.random.default_rng(0)
    shapes = {
        "branch1 (batch 32, 16-32-16-2)": _branch_args(rng, 32, 16, 32, 16, 2),
        "branch2 (batch 32, 48-64-32-7)": _branch_args(rng, 32, 48, 64, 32, 7),
    }

    print(f"{'operation':42s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s} "
          f"{'max rel diff':>13s}")
    for label, args in shapes.items():
        t_np = _timeit(lambda: numpy_backend.branch_forward(*args), repeats)
        t_cy = _timeit(lambda: compiled.branch_forward(*args), repeats)
        out_np = numpy_backend.branch_forward(*args)
        out_cy = compiled.branch_forward(*args)
        diff = max(
            float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))
            for a, b in zip(out_cy, out_np)
        )
        print(f"forward  {label:33s} {t_np * 1e6:8.1f}us {t_cy * 1e6:8.1f}us "
              f"{t_np / t_cy:7.2f}x {diff:13.2e}")

        x, w1, b1, w2, b2, w3, b3 = args
        a1, a2, out = numpy_backend.branch_forward(*args)
        dout = np.ascontiguousarray(rng.normal(size=out.shape) / out.shape[0])
        t_np = _timeit(lambda: numpy_backend.branch_backward(x, a1, a2, dout, w2, w3),
                       repeats)
        t_cy = _timeit(lambda: compiled.branch_backward(x, a1, a2, dout, w2, w3),
                       repeats)
        g_np = numpy_backend.branch_backward(x, a1, a2, dout, w2, w3)
        g_cy = compiled.branch_backward(x, a1, a2, dout, w2, w3)
        diff = max(
            float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))
            for a, b in zip(g_cy, g_np)
        )
        print(f"backward {label:33s} {t_np * 1e6:8.1f}us {t_cy * 1e6:8.1f}us "
              f"{t_np / t_cy:7.2f}x {diff:13.2e}")

    n = 4000  # roughly the shipped two-branch parameter count
    params = rng.normal(size=n)
    grad = rng.normal(size=n)
    state_np = (params.copy(), np.zeros(n), np.zeros(n))
    state_cy = (params.copy(), np.zeros(n), np.zeros(n))
    step = [0]

    def adam(backend, s):
        step[0] += 1
        backend.adam_update(s[0], grad, s[1], s[2], step[0], 1e-3, 0.9, 0.999,
                            1e-8, 3e-3)

    t_np = _timeit(lambda: adam(numpy_backend, state_np), repeats)
    t_cy = _timeit(lambda: adam(compiled, state_cy), repeats)
    print(f"{'adam update (4000 params)':42s} {t_np * 1e6:8.1f}us "
          f"{t_cy * 1e6:8.1f}us {t_np / t_cy:7.2f}x {'(in-place)':>13s}")
    return 0


def bench_end_to_end():
    """One full desk-scale run per backend; requires both to be importable."""
    import importlib
    import os
    import subprocess

    code = (
        "import time; t0=time.perf_counter()\n"
        "from crchfl.config import RunConfig, TopologySpec, TrainHyper\n"
        "from crchfl.federation import run_mode\n"
        "from crchfl import kernels\n"
        "topo = TopologySpec(2, (2, 3), (240, 240, 200, 200, 160), (800, 800))\n"
        "cfg = RunConfig(topology=topo, budget_mb=80.0, sample_size_mb=0.01,\n"
        "                model_size_mb=1.0, candidate_edge_intervals=(2, 3),\n"
        "                candidate_cloud_intervals=(1,), seed=1,\n"
        "                train_hyper=TrainHyper(learning_rate=1e-3))\n"
        "rep = run_mode(cfg, 'CRCHFL')\n"
        "print(f'{kernels.backend_name():9s} run: '\n"
        "      f'{time.perf_counter()-t0:.2f}s best={rep.best.accuracy:.4f}')\n"
    )
    for backend in ("compiled", "numpy"):
        env = dict(os.environ, CRCHFL_KERNELS=backend)
        subprocess.run([sys.executable, "-c", code], env=env, check=False)


if __name__ == "__main__":
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    rc = bench_kernels(repeats)
    if rc == 0:
        print()
        bench_end_to_end()
    sys.exit(rc)
