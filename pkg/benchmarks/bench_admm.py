"""Compare the compiled ADMM kernel with the NumPy fallback.

Times full solves of scenario-program QPs for the benchmark plant at a few
scenario counts, plus a batch of small random QPs, and checks that both
kernels return the same point.

    python benchmarks/bench_admm.py [--repeat 3] [--counts 64,256,523]
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from scenario_mpc.qp import AdmmSolver, QpProblem, QpSettings, backends
from scenario_mpc.scenarios import ScenarioSet
from scenario_mpc.sim import ProblemSetup, stream
from scenario_mpc.sp import assemble


def sp_problem(count: int) -> QpProblem:
    """Hard-constrained program (no slack) with true-model scenarios."""
    setup = ProblemSetup.example(slack_weight=None)
    etas = setup.plant.disturbances(stream(0, count), (count, setup.horizon))
    return assemble(setup.instance(ScenarioSet.known(setup.plant.model, etas))).problem


def small_problems(count: int) -> list[QpProblem]:
    rng = np.random.default_rng(0)
    out = []
    for _ in range(count):
        n, m = int(rng.integers(2, 9)), int(rng.integers(1, 13))
        f = rng.standard_normal((n, n))
        c = rng.standard_normal((m, n))
        out.append(QpProblem(f.T @ f, rng.standard_normal(n), c, -rng.uniform(0.1, 1, m), rng.uniform(0.1, 1, m)))
    return out


def time_solves(backend: str, problems, repeat: int, settings: QpSettings):
    solver = AdmmSolver(backend)
    times, sols = [], None
    for _ in range(repeat):
        start = time.perf_counter()
        sols = [solver.solve(p, settings) for p in problems]
        times.append(time.perf_counter() - start)
    return statistics.median(times), sols


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--counts", default="64,256,523", help="scenario counts for the program QPs")
    parser.add_argument("--small", type=int, default=200, help="number of small random QPs")
    args = parser.parse_args(argv)

    if backends.COMPILED not in backends.available():
        print("compiled kernel not built; nothing to compare", file=sys.stderr)
        return 1
    settings = QpSettings(polish=False)
    cases = [(f"program N={n}", [sp_problem(int(n))]) for n in args.counts.split(",")]
    cases.append((f"{args.small} small random", small_problems(args.small)))

    print(f"{'case':<22}{'vars':>6}{'rows':>8}{'iters':>8}{'compiled s':>12}{'python s':>11}{'speedup':>9}{'max |dz|':>11}")
    for name, problems in cases:
        t_fast, fast = time_solves(backends.COMPILED, problems, args.repeat, settings)
        t_slow, slow = time_solves(backends.PYTHON, problems, args.repeat, settings)
        dz = max(float(np.max(np.abs(a.z - b.z), initial=0.0)) for a, b in zip(fast, slow))
        iters = sum(s.iterations for s in fast)
        print(f"{name:<22}{problems[0].n_vars:>6}{problems[0].n_cons:>8}{iters:>8}"
              f"{t_fast:>12.4f}{t_slow:>11.4f}{t_slow / t_fast:>8.1f}x{dz:>11.1e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
