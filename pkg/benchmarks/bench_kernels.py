"""Wall-clock comparison of the pure-Python engine and the compiled epoch loop.

    python3 benchmarks/bench_kernels.py [--F 98304] [--repeat 3]

Both backends must produce identical MetricsReports; the script checks that before timing.
"""

import argparse
import time

from redox_sim import _backend
from redox_sim.harness import build_sim_layout, default_config, make_cluster
from redox_sim.layout import LayoutConfig


def time_backend(config, layout, backend, repeat):
    best = float("inf")
    report = None
    for _ in range(repeat):
        cl = make_cluster(config, layout)
        t0 = time.perf_counter()
        cl.run(backend)
        best = min(best, time.perf_counter() - t0)
        report = cl.metrics()
    return best, report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--F", type=int, default=98304)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    print(f"{'variant':<22}{'backend':<10}{'seconds':>10}{'requests/s':>14}{'speedup':>9}")
    for prefetch in (True, False):
        for policy in ("greedy", "random"):
            lc = LayoutConfig(F=args.F, K=64, M=args.F // 512, N=3, P=8)
            config = default_config(layout=lc, prefetch=prefetch, refill_policy=policy)
            layout = build_sim_layout(config)
            results = {b: time_backend(config, layout, b, args.repeat) for b in _backend.available()}
            digests = {r.digest() for _, r in results.values()}
            if len(digests) != 1:
                raise SystemExit("backends disagree on the MetricsReport")
            name = f"{policy}{'+prefetch' if prefetch else ''}"
            base = results[_backend.PYTHON][0]
            for b, (secs, _) in results.items():
                print(f"{name:<22}{b:<10}{secs:>10.4f}{args.F / secs:>14,.0f}{base / secs:>8.1f}x")


if __name__ == "__main__":
    main()
