#!/usr/bin/env python3
"""Run the desk-scale problem suite and print a solver comparison table.

Columns mirror the summary CSV of the CLI: per problem and solver the
simulated step count, outer iteration count, maximum per-worker count and
the final residual, plus the step ratio against conjugate gradients.
"""

import argparse
import sys

import numpy as np

from aschur import GridSpec, SchurSystem, assemble, build_splitting, interface_diagonal, partition
from aschur.runtime import DelayModel, RuntimeConfig, async_solve
from aschur.solvers import cg_schur, sync_relaxation
from aschur.splitting import certify_async

SUITE = [
    ((3,), 1.0, 1.0, (2,)),
    ((7,), 1.0, 1.0, (2,)),
    ((15,), 0.5, 2.0, (4,)),
    ((31,), 1.0, 1.0, (8,)),
    ((7, 7), 1.0, 1.0, (2, 1)),
    ((7, 7), 1.0, 1.0, (2, 2)),
    ((9, 9), 0.5, 1.0, (3, 1)),
    ((15, 15), 1.0, 1.0, (2, 2)),
    ((15, 15), 1.0, 1.0, (4, 2)),
    ((13, 13), 1.0, 3.0, (3, 2)),
    ((5, 5, 5), 1.0, 1.0, (2, 1, 1)),
    ((5, 5, 5), 1.0, 1.0, (2, 2, 2)),
    ((7, 7, 5), 1.0, 1.0, (2, 2, 1)),
]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--tol", type=float, default=1e-6)
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--delay-high", type=int, default=5, help="upper bound of the uniform message delay")
    args = parser.parse_args(argv)

    print("problem,n,p,rho_async,solver,t_sim_steps,k,k_max,final_residual,steps_vs_cg")
    for dims, spacing, source, splits in SUITE:
        problem = assemble(GridSpec(dims=dims, spacing=spacing, source=source))
        decomp = partition(problem, splits)
        system = SchurSystem.build(problem, decomp)
        split = build_splitting(interface_diagonal(problem, decomp), alpha=args.alpha)
        rho = certify_async(system.subdomains, system.imap, split)
        label = "x".join(str(d) for d in dims)

        _, rep_cg = cg_schur(system, tol=args.tol, k_max=10_000)
        _, rep_sync = sync_relaxation(system, split, tol=args.tol, k_max=100_000)
        cfg = RuntimeConfig(
            tol=args.tol, k_max=100_000, seed=args.seed,
            delay=DelayModel(kind="uniform", low=0, high=args.delay_high, reorder=True),
        )
        _, rep_async = async_solve(system, split, cfg)

        for rep in (rep_cg, rep_sync, rep_async):
            ratio = rep.sim_steps / rep_cg.sim_steps if rep_cg.sim_steps else np.nan
            print(
                f"{label},{problem.A.nrows},{decomp.p},{rho:.4f},{rep.solver},"
                f"{rep.sim_steps},{rep.iterations_k},{rep.k_max},{rep.final_residual:.3e},{ratio:.2f}"
            )
    return 0


if __name__ == "__main__":
    sys.exit(main())
