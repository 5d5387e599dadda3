import json

import numpy as np
import pytest

from aschur.decomp import (
    assemble_schur_explicit,
    decomposition_to_json,
    extract_local,
    partition,
    prolong,
    restrict,
)
from aschur.linalg import SparseMatrix
from aschur.poisson import GridSpec, assemble, exact_solution
from aschur.solvers import assemble_interface_operator


def test_partition_1d_3_nodes():
    prob = assemble(GridSpec(dims=(3,)))
    dec = partition(prob, (2,))
    assert [p.tolist() for p in dec.parts] == [[0], [2]]
    assert dec.interface.tolist() == [1]
    assert dec.owner_count.tolist() == [2]


def test_partition_1d_7_nodes_balanced():
    prob = assemble(GridSpec(dims=(7,)))
    dec = partition(prob, (2,))
    assert dec.interface.tolist() == [3]
    assert [len(p) for p in dec.parts] == [3, 3]


def test_partition_2d_middle_column():
    prob = assemble(GridSpec(dims=(3, 3)))
    dec = partition(prob, (2, 1))
    assert dec.interface.tolist() == [1, 4, 7]
    assert [len(p) for p in dec.parts] == [3, 3]
    assert dec.owner_count.tolist() == [2, 2, 2]


def test_partition_cross_point_multiplicity():
    prob = assemble(GridSpec(dims=(3, 3)))
    dec = partition(prob, (2, 2))
    # center node sits on both separator planes
    center = 4
    t = dec.interface.tolist().index(center)
    assert dec.owner_count[t] == 4
    assert all(center in ids for ids in dec.local_interfaces)


def test_partition_rejects_infeasible_splits():
    prob = assemble(GridSpec(dims=(3,)))
    with pytest.raises(ValueError):
        partition(prob, (3,))
    with pytest.raises(ValueError):
        partition(prob, (2, 2))
    with pytest.raises(ValueError):
        partition(prob, (0,))


def test_partition_indices_cover_everything_once(suite):
    for case in suite.values():
        dec = case.decomp
        seen = np.concatenate([*dec.parts, dec.interface])
        assert len(seen) == case.problem.A.nrows
        assert len(np.unique(seen)) == len(seen)
        assert np.all(dec.owner_count >= 1)


def test_block_arrow_structure(suite):
    # every interior node couples only inside its own part or into the interface
    for case in suite.values():
        dense = case.problem.A.to_dense()
        iface = set(case.decomp.interface.tolist())
        for i, part in enumerate(case.decomp.parts):
            own = set(part.tolist())
            for row in part:
                for col in np.flatnonzero(dense[row]):
                    assert int(col) in own or int(col) in iface


def test_extract_local_1d_hand_values(tiny_1d):
    loc = tiny_1d.system.subdomains[0]
    np.testing.assert_array_equal(loc.A_II.to_dense(), [[2.0]])
    np.testing.assert_array_equal(loc.A_IG.to_dense(), [[-1.0]])
    np.testing.assert_array_equal(loc.A_GG, [[1.0]])
    np.testing.assert_array_equal(loc.weights, [0.5])
    np.testing.assert_array_equal(loc.b_G, [0.5])


def test_extract_local_single_subdomain_degenerate():
    prob = assemble(GridSpec(dims=(5,)))
    dec = partition(prob, (1,))
    assert dec.n_interface == 0
    loc = extract_local(prob, dec, 0)
    np.testing.assert_array_equal(loc.A_II.to_dense(), prob.A.to_dense())
    assert loc.n_gamma == 0
    assert loc.A_GG.shape == (0, 0)


def test_extract_local_validates_subdomain_id(tiny_1d):
    with pytest.raises(ValueError):
        extract_local(tiny_1d.problem, tiny_1d.decomp, 5)
    with pytest.raises(ValueError):
        extract_local(tiny_1d.problem, tiny_1d.decomp, 0, weighting="volume")


def test_reassembly_is_exact(suite):
    # prolonged weighted blocks telescope back to the assembled interface block
    for case in suite.values():
        dec = case.decomp
        n = dec.n_interface
        acc = np.zeros((n, n))
        wacc = np.zeros(n)
        for loc in case.system.subdomains:
            pos = loc.gamma_positions
            acc[np.ix_(pos, pos)] += loc.A_GG
            wacc[pos] += loc.weights
        target = case.problem.A.to_dense()[np.ix_(dec.interface, dec.interface)]
        np.testing.assert_array_equal(acc, target)
        np.testing.assert_array_equal(wacc, np.ones(n))


def test_sign_compatibility_of_weighted_blocks(suite):
    for case in suite.values():
        dec = case.decomp
        target = case.problem.A.to_dense()[np.ix_(dec.interface, dec.interface)]
        for loc in case.system.subdomains:
            block = target[np.ix_(loc.gamma_positions, loc.gamma_positions)]
            prod = loc.A_GG * block
            assert np.all(prod >= 0.0)
            assert np.array_equal(loc.A_GG == 0.0, block == 0.0)


def test_restrict_prolong_algebra(tiny_1d):
    imap = tiny_1d.system.imap
    x = np.array([7.0])
    for i in range(2):
        local = restrict(imap, i, x)
        np.testing.assert_array_equal(local, [7.0])
        back = prolong(imap, i, local)
        np.testing.assert_array_equal(restrict(imap, i, back), local)


def test_restrict_prolong_support(suite):
    case = suite["2d-15x15-p4"]
    imap = case.system.imap
    rng = np.random.default_rng(0)
    x = rng.normal(size=imap.n_interface)
    for i in range(case.system.p):
        y = prolong(imap, i, restrict(imap, i, x))
        pos = imap.gamma_positions[i]
        np.testing.assert_array_equal(y[pos], x[pos])
        mask = np.ones(imap.n_interface, dtype=bool)
        mask[pos] = False
        np.testing.assert_array_equal(y[mask], np.zeros(mask.sum()))
        np.testing.assert_array_equal(restrict(imap, i, prolong(imap, i, x[pos])), x[pos])


def test_neighbor_lists_symmetric(suite):
    for case in suite.values():
        imap = case.system.imap
        for (i, j), sharedpos in imap.shared.items():
            assert i < j
            assert j in imap.neighbors[i] and i in imap.neighbors[j]
            assert len(np.unique(sharedpos)) == len(sharedpos)
        for i, pos in enumerate(imap.gamma_positions):
            assert len(np.unique(pos)) == len(pos)


def test_schur_explicit_1d_hand_values(tiny_1d):
    for loc in tiny_1d.system.subdomains:
        S, d = assemble_schur_explicit(loc)
        np.testing.assert_allclose(S, [[0.5]], atol=1e-14)
        np.testing.assert_allclose(d, [1.0], atol=1e-14)


def test_schur_explicit_consistency_with_direct_solve(tiny_1d):
    S, d = assemble_interface_operator(tiny_1d.system)
    np.testing.assert_allclose(S @ np.array([2.0]), d, atol=1e-12)


def test_schur_explicit_rejects_oversized_interface(tiny_1d):
    from dataclasses import replace

    loc = replace(tiny_1d.system.subdomains[0], gamma_rows=np.arange(2001))
    with pytest.raises(ValueError):
        assemble_schur_explicit(loc)


def test_schur_equals_interface_block_when_decoupled(tiny_1d):
    loc = tiny_1d.system.subdomains[0]
    from dataclasses import replace

    decoupled = replace(loc, A_IG=SparseMatrix.zeros(loc.n_interior, loc.n_gamma))
    S, d = assemble_schur_explicit(decoupled)
    np.testing.assert_array_equal(S, decoupled.A_GG)


def test_interface_solution_matches_direct_solve(suite):
    for case in suite.values():
        S, d = assemble_interface_operator(case.system)
        x_g = np.linalg.solve(S, d)
        direct = exact_solution(case.problem)[case.decomp.interface]
        assert np.linalg.norm(x_g - direct) <= 1e-8 * max(np.linalg.norm(direct), 1e-30)


def test_decomposition_json_dump(tiny_1d):
    payload = json.loads(decomposition_to_json(tiny_1d.decomp))
    assert payload["p"] == 2
    assert payload["interior"] == [[0], [2]]
    assert payload["interface"] == [1]
    assert payload["local_interfaces"] == [[1], [1]]
    assert payload["multiplicity"] == [2]
