"""Compare per-query latency of the registry path against the cell index.

For each instance size the script times the same random queries through
both structures and prints medians and p90s.  The registry answers from the
tree at query time; the cell index looks answers up, so its medians should
sit well below and stay flat as n grows.

    python3 scripts/latency_scaling.py --sizes 256,1024,4096 --queries 500
"""

import argparse
import sys
import time
from dataclasses import dataclass

import numpy as np

from ballann import build_registry, generate_instance, normalize
from ballann.avd import avd_query, build_avd
from ballann.knn import query


@dataclass(frozen=True)
class LatencyConfig:
    sizes: tuple[int, ...] = (256, 512, 1024, 2048, 4096)
    ratio: int = 4
    eps: float = 0.5
    dim: int = 1
    seed: int = 4000
    queries: int = 300
    warmup: int = 20


def _time_ns(fn, queries) -> np.ndarray:
    out = np.empty(len(queries), dtype=np.int64)
    for i, q in enumerate(queries):
        t0 = time.perf_counter_ns()
        fn(q)
        out[i] = time.perf_counter_ns() - t0
    return out


def run(cfg: LatencyConfig) -> None:
    rng = np.random.default_rng(cfg.seed)
    print(f"# d={cfg.dim} k=n/{cfg.ratio} eps={cfg.eps} {cfg.queries} queries per size")
    print(f"{'n':>6} {'k':>6} {'reg_med_us':>11} {'reg_p90_us':>11} {'cell_med_us':>12} {'cell_p90_us':>12}")
    for n in cfg.sizes:
        k = n // cfg.ratio
        balls = generate_instance(cfg.seed + n, cfg.dim, n)
        reg = build_registry(normalize(balls, cfg.eps))
        a = build_avd(reg, k, cfg.eps, mode="practical")
        qs = [tuple(q) for q in rng.random((cfg.queries + cfg.warmup, cfg.dim))]
        for q in qs[: cfg.warmup]:
            query(reg, q, k, cfg.eps)
            avd_query(a, q)
        tr = _time_ns(lambda q: query(reg, q, k, cfg.eps), qs[cfg.warmup :])
        ta = _time_ns(lambda q: avd_query(a, q), qs[cfg.warmup :])
        print(
            f"{n:>6} {k:>6} {np.median(tr) / 1e3:>11.1f} {np.percentile(tr, 90) / 1e3:>11.1f} "
            f"{np.median(ta) / 1e3:>12.1f} {np.percentile(ta, 90) / 1e3:>12.1f}"
        )


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="256,512,1024,2048,4096")
    p.add_argument("--ratio", type=int, default=4)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--seed", type=int, default=4000)
    p.add_argument("--queries", type=int, default=300)
    args = p.parse_args(argv)
    run(
        LatencyConfig(
            sizes=tuple(int(s) for s in args.sizes.split(",")),
            ratio=args.ratio,
            eps=args.eps,
            dim=args.dim,
            seed=args.seed,
            queries=args.queries,
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
