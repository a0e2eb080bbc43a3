"""Compare the compiled and pure-Python error-vector kernels.

Run with ``python3 benchmarks/bench_backends.py``.  The first column times
the kernels alone; the second a noisy three-repeater chain end to end.
"""

from qrsim.experiments import backend_benchmark

if __name__ == "__main__":
    timings = backend_benchmark()
    print(f"{'backend':10s} {'kernel_s':>9s} {'chain_cpu_s':>12s}")
    for t in timings:
        print(f"{t.backend:10s} {t.kernel_seconds:9.3f} {t.simulation_seconds:12.3f}")
    if len(timings) == 2:
        c, p = timings
        print(f"kernel speedup {p.kernel_seconds / c.kernel_seconds:.1f}x, "
              f"end-to-end speedup {p.simulation_seconds / c.simulation_seconds:.2f}x")
