"""Measure how the cell index size tracks the n/k storage budget.

Builds one index per instance size at a fixed k/n ratio and eps, then prints
the cell count |W|, the uncertified-cell count, and |W| normalised by the
n/k budget.  A flat last column is the point: storage should follow the
budget, not the raw instance size.

    python3 scripts/space_scaling.py --sizes 256,512,1024,2048,4096 --ratio 4
"""

import argparse
import sys
import time
from dataclasses import dataclass

from ballann import build_registry, generate_instance, normalize
from ballann.avd import build_avd


@dataclass(frozen=True)
class SpaceConfig:
    sizes: tuple[int, ...] = (256, 512, 1024, 2048, 4096)
    ratio: int = 4  # k = n // ratio
    eps: float = 0.5
    dim: int = 1
    seed: int = 4000
    mode: str = "practical"
    profile: str = "uniform"


def run(cfg: SpaceConfig) -> None:
    print(f"# d={cfg.dim} k=n/{cfg.ratio} eps={cfg.eps} mode={cfg.mode} profile={cfg.profile}")
    print(f"{'n':>6} {'k':>6} {'cells':>8} {'unc':>5} {'build_s':>8} {'cells/(n/k)':>12}")
    for n in cfg.sizes:
        k = n // cfg.ratio
        balls = generate_instance(cfg.seed + n, cfg.dim, n, cfg.profile)
        reg = build_registry(normalize(balls, cfg.eps))
        t0 = time.perf_counter()
        a = build_avd(reg, k, cfg.eps, mode=cfg.mode)
        dt = time.perf_counter() - t0
        w = int(a.stats["W"])
        print(f"{n:>6} {k:>6} {w:>8} {int(a.stats['uncertified']):>5} {dt:>8.2f} {w / (n / k):>12.1f}")


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="256,512,1024,2048,4096")
    p.add_argument("--ratio", type=int, default=4)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--seed", type=int, default=4000)
    p.add_argument("--mode", default="practical", choices=("practical", "strict"))
    p.add_argument("--profile", default="uniform")
    args = p.parse_args(argv)
    run(
        SpaceConfig(
            sizes=tuple(int(s) for s in args.sizes.split(",")),
            ratio=args.ratio,
            eps=args.eps,
            dim=args.dim,
            seed=args.seed,
            mode=args.mode,
            profile=args.profile,
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
