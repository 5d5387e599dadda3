#!/usr/bin/env python3
"""Fault-resilience experiment: asynchronous relaxation vs restarted CG.

Five staggered single-worker failures are injected at 90% multiples of the
fault-free CG step count, into both solvers' own step clocks.  The restarted
CG loses its Krylov space at every failure while the asynchronous solver
just keeps iterating, so the interesting output is each solver's step count
relative to its own fault-free run.
"""

import argparse
import sys

from aschur import GridSpec, SchurSystem, assemble, build_splitting, interface_diagonal, partition
from aschur.runtime import DelayModel, FaultEvent, FaultPlan, RuntimeConfig, async_solve, cg_with_restart
from aschur.solvers import cg_schur


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dims", type=int, nargs="+", default=[15, 15])
    parser.add_argument("--splits", type=int, nargs="+", default=[4, 2])
    parser.add_argument("--tol", type=float, default=1e-6)
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--delay-high", type=int, default=2)
    args = parser.parse_args(argv)

    problem = assemble(GridSpec(dims=tuple(args.dims)))
    decomp = partition(problem, tuple(args.splits))
    system = SchurSystem.build(problem, decomp)
    split = build_splitting(interface_diagonal(problem, decomp))

    _, cg_clean = cg_schur(system, tol=args.tol, k_max=10_000)
    k_cg = cg_clean.iterations_k
    triggers = [max(1, round(0.9 * k_cg * j)) for j in range(1, 6)]
    events = tuple(FaultEvent(victims=(j % decomp.p,), at_step=t) for j, t in enumerate(triggers))
    print(f"# problem {'x'.join(map(str, args.dims))}, p={decomp.p}, fault-free cg k={k_cg}, faults at {triggers}")

    _, cg_faulted = cg_with_restart(system, RuntimeConfig(tol=args.tol, k_max=100_000, faults=FaultPlan(events=events)))
    print("solver,seed,steps_clean,steps_faulted,ratio,final_residual")
    print(f"cg-restart,-,{k_cg},{cg_faulted.iterations_k},{cg_faulted.iterations_k / k_cg:.3f},{cg_faulted.final_residual:.3e}")

    delay = DelayModel(kind="uniform", low=0, high=args.delay_high, reorder=True)
    worst = 0.0
    for seed in range(args.seeds):
        base = RuntimeConfig(tol=args.tol, k_max=100_000, seed=seed, delay=delay)
        _, clean = async_solve(system, split, base)
        faulted_cfg = RuntimeConfig(
            tol=args.tol, k_max=100_000, seed=seed, delay=delay, faults=FaultPlan(events=events)
        )
        _, faulted = async_solve(system, split, faulted_cfg)
        ratio = faulted.sim_steps / clean.sim_steps
        worst = max(worst, ratio)
        print(f"async,{seed},{clean.sim_steps},{faulted.sim_steps},{ratio:.3f},{faulted.final_residual:.3e}")
    print(f"# worst async ratio {worst:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
