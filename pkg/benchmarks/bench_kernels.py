"""Time the numba and numpy backends of every hot kernel.

    python benchmarks/bench_kernels.py [--rows 500 20000] [--repeat 20]

Both backends are called through the public dispatchers with an explicit
``backend=`` argument, so the numbers include the same reshaping overhead
the planner pays. The first numba call (JIT compile or cache load) is
excluded.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from dambrl import _kernels as K


def cases(rows: int, rng: np.random.Generator):
    th = rng.uniform(-np.pi, np.pi, rows)
    obs = np.stack([np.cos(th), np.sin(th), rng.uniform(-8, 8, rows)], -1)
    u = rng.uniform(-2, 2, rows)
    cart = rng.uniform(-0.2, 0.2, (rows, 4))
    return {
        "pendulum_step": lambda b: K.pendulum_step(th, obs[:, 2], u, backend=b),
        "pendulum_obs_step": lambda b: K.pendulum_obs_step(obs, u, backend=b),
        "pendulum_obs_reward": lambda b: K.pendulum_obs_reward(obs, u, backend=b),
        "cartpole_step": lambda b: K.cartpole_step(cart, u / 2, backend=b),
        "cartpole_alive": lambda b: K.cartpole_alive(cart, backend=b),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, nargs="+", default=[500, 20000])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if K.HAVE_NUMBA else [])
    print(f"{'kernel':<22}{'rows':>8}" + "".join(f"{b + ' us':>14}" for b in backends) + f"{'speedup':>10}")
    rng = np.random.default_rng(0)
    for rows in args.rows:
        for name, fn in cases(rows, rng).items():
            times = []
            for b in backends:
                fn(b)  # warm-up / JIT
                t = min(timeit.repeat(lambda: fn(b), number=args.repeat, repeat=3)) / args.repeat
                times.append(t * 1e6)
            speed = f"{times[0] / times[1]:.2f}x" if len(times) == 2 else "-"
            print(f"{name:<22}{rows:>8}" + "".join(f"{t:>14.1f}" for t in times) + f"{speed:>10}")


if __name__ == "__main__":
    main()
