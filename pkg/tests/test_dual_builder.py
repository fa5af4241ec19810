"""Per-cell reductions, the assembled dual, and the transposed master.

The three reduction routes (explicit multipliers, precomputed
multipliers, vertex rows) describe the same feasible set on their
common domain, so every route must land on the same optimum.  That
equivalence, checked on randomized instances, is the main guard
against sign mistakes in any one route.
"""

import numpy as np
import pytest

from riskdual import (
    CapacityError,
    Cell,
    InputError,
    LPStatus,
    LinearProgram,
    ModelInfeasibleOnCell,
    PartitionIncompatibleError,
    ReductionMode,
    RiskFunctional,
    RiskKind,
    Sense,
    TestFunction,
    TestFunctionKind,
    assemble_dual_lp,
    build_box_partition,
    cell_vertices,
    concave_vertex_constraints,
    farkas_constraints_linear,
    maximize_linear_over_cell,
    precompute_cell_lambda,
    restrict_to_cell,
    solve_dcg,
    solve_dense_simplex,
)

from conftest import random_instance, two_point_model

ALL_MODES = (
    ReductionMode.EXPLICIT,
    ReductionMode.LAMBDA_ELIMINATED,
    ReductionMode.VERTEX,
)


def _solve(dual, budget=20_000):
    sol = solve_dense_simplex(dual.materialize(budget), budget=budget)
    assert sol.status is LPStatus.OPTIMAL
    return sol.objective


# -- the two-atom example --
#
# On {0, 1} with E[1 + x] pinned to b, the only measure puts mass
# 2 - b at 0 and b - 1 at 1, so the tail probability at 1 is b - 1.


@pytest.mark.parametrize("mode", ALL_MODES)
def test_two_point_example(mode):
    inst = two_point_model(14.0 / 9.0)
    assert _solve(inst.dual(mode)) == pytest.approx(5.0 / 9.0, abs=1e-12)


def test_two_point_example_column_generation():
    inst = two_point_model(14.0 / 9.0)
    dual = inst.dual()
    assert dual.corner_cell is not None  # threshold sits on the top corner
    seed, gen = dual.master_seed()
    sol = solve_dcg(seed, gen)
    assert sol.status is LPStatus.OPTIMAL
    assert sol.certified
    assert sol.objective == pytest.approx(5.0 / 9.0, abs=1e-12)


def test_two_point_variant_moment():
    # E[1 + x] = 7/4 forces mass 3/4 at 1
    inst = two_point_model(7.0 / 4.0)
    assert _solve(inst.dual()) == pytest.approx(3.0 / 4.0, abs=1e-12)


def test_two_point_infeasible_moment():
    # E[1 + x] of a probability measure on [0, 1] lives in [1, 2]
    inst = two_point_model(2.5)
    lp = inst.dual().materialize()
    sol = solve_dense_simplex(lp)
    # rows force the dual objective down without bound
    assert sol.status is LPStatus.UNBOUNDED


# -- per-cell reductions --


def test_precompute_lambda_on_a_box():
    cell = Cell([1.0, 1.0], [2.0, 2.0])
    lam, C = precompute_cell_lambda(cell, np.array([1.0, 1.0]))
    # support of <g, x> on the box is 4, reached at the top corner
    assert C == pytest.approx(-4.0, abs=1e-12)
    F = np.array([h.normal for h in cell.halfspaces])
    ell = np.array([h.bound for h in cell.halfspaces])
    assert np.all(lam >= 0)
    assert np.allclose(F.T @ lam, [-1.0, -1.0], atol=1e-12)
    assert lam @ ell == pytest.approx(C, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_precompute_lambda_matches_direct_lp(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 5))
    lows = rng.uniform(-3, 3, d)
    highs = lows + rng.uniform(0.2, 3.0, d)
    slice_sign = int(rng.choice([0, 1, -1]))
    tau = None
    if slice_sign:
        tau = float(lows.sum() + rng.uniform(0.1, 0.9) * (highs - lows).sum())
    cell = Cell(lows, highs, slice_sign=slice_sign, tau=tau)
    g = rng.normal(0, 1, d)
    lam, C = precompute_cell_lambda(cell, g)

    # the same multiplier program, handed to the simplex directly
    F = np.array([h.normal for h in cell.halfspaces])
    ell = np.array([h.bound for h in cell.halfspaces])
    lp = LinearProgram("max", ell, F.T, ["="] * d, -g, name="lambda_direct")
    sol = solve_dense_simplex(lp)
    assert sol.status is LPStatus.OPTIMAL
    assert C == pytest.approx(sol.objective, abs=1e-9)
    assert lam.shape == (len(cell.halfspaces),)


def test_precompute_lambda_unbounded_gradient():
    ray = Cell([0.0], [np.inf])
    with pytest.raises(ModelInfeasibleOnCell):
        precompute_cell_lambda(ray, np.array([1.0]))
    # the matching multiplier program has no feasible lam either
    F = np.array([h.normal for h in ray.halfspaces])
    ell = np.array([h.bound for h in ray.halfspaces])
    lp = LinearProgram("max", ell, F.T, ["="], [-1.0])
    assert solve_dense_simplex(lp).status is LPStatus.INFEASIBLE


def _simple_setup():
    part = build_box_partition([np.array([0.0, 0.5, 1.0])], 0.75)
    fns = [
        TestFunction(
            "mass_low", TestFunctionKind.SLAB_INDICATOR, 0, (0.0, 0.5),
            Sense.UPPER, 0.6,
        ),
        TestFunction(
            "mean", TestFunctionKind.SLAB_AFFINE, 0, (0.0, 1.0),
            Sense.EQUALITY, 0.45, v=np.array([1.0]), c=0.0,
        ),
    ]
    risk = RiskFunctional(RiskKind.VAR_INDICATOR, 0.75)
    return part, fns, risk


def test_explicit_block_shape():
    part, fns, risk = _simple_setup()
    cell = part.cell_at(0)
    rows = farkas_constraints_linear(cell, fns, risk)
    # one equality per coordinate plus the constant row
    assert len(rows) == cell.dimension + 1
    senses = [s for _, s, _ in rows]
    assert senses == ["="] * cell.dimension + [">="]
    coefs, _, rhs = rows[-1]
    assert coefs["z0"] == 1.0
    g, e = restrict_to_cell(risk, cell)
    assert rhs == e
    assert rows[0][2] == g[0]


def test_vertex_block_matches_vertices():
    part, fns, risk = _simple_setup()
    cell = part.cell_at(0)
    rows = concave_vertex_constraints(cell, fns, risk)
    assert len(rows) == len(cell_vertices(cell))
    for coefs, sense, _rhs in rows:
        assert sense == ">="
        assert coefs["z0"] == 1.0


def test_collapsed_row_support_equals_cell_maximum():
    inst = random_instance(5, d=2, m=2)
    dual = inst.dual()
    for cell in dual.iter_cells():
        if cell.degenerate:
            continue
        block = dual.cell_block(cell)
        if block.mode != "lambda":
            continue
        g, e = restrict_to_cell(inst.risk, cell)
        val, _, _ = maximize_linear_over_cell(cell, g)
        assert block.r_value == pytest.approx(val + e, abs=1e-9)
        assert block.support_value == pytest.approx(-val, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_reduction_modes_agree(seed):
    inst = random_instance(seed, affine=True, equality=True)
    values = [_solve(inst.dual(mode)) for mode in ALL_MODES]
    assert values[0] == pytest.approx(values[1], abs=1e-8)
    assert values[0] == pytest.approx(values[2], abs=1e-8)


@pytest.mark.parametrize("seed", range(10))
def test_relaxing_bounds_never_shrinks_the_value(seed):
    # a looser integral bound admits every measure the tight one did,
    # so the worst case can only move up
    inst = random_instance(seed)
    base = _solve(inst.dual())
    relaxed = []
    for fn in inst.testfns:
        bound = fn.bound
        if fn.sense is Sense.UPPER:
            bound += 0.1
        elif fn.sense is Sense.LOWER:
            bound = max(0.0, bound - 0.1)
        relaxed.append(
            TestFunction(fn.id, fn.kind, fn.axis, fn.slab, fn.sense, bound,
                         v=fn.v, c=fn.c)
        )
    looser = _solve(assemble_dual_lp(inst.partition, relaxed, inst.risk))
    assert looser >= base - 1e-9


@pytest.mark.parametrize("seed", range(10, 18))
def test_master_agrees_with_dual_rows(seed):
    inst = random_instance(seed, affine=(seed % 2 == 0))
    dual = inst.dual()
    row_value = _solve(dual)
    master = solve_dense_simplex(dual.master_lp(20_000), budget=20_000)
    assert master.status is LPStatus.OPTIMAL
    assert master.objective == pytest.approx(row_value, abs=1e-8)


@pytest.mark.parametrize("seed", range(18, 26))
def test_column_generation_agrees_with_single_shot(seed):
    inst = random_instance(seed)
    dual = inst.dual()
    single = solve_dense_simplex(dual.master_lp(20_000), budget=20_000)
    seed_lp, gen = dual.master_seed()
    dcg = solve_dcg(seed_lp, gen)
    assert dcg.status is LPStatus.OPTIMAL
    assert dcg.certified
    assert dcg.objective == pytest.approx(single.objective, abs=1e-9)


def test_generated_columns_match_the_materialized_master():
    inst = random_instance(42, d=2, m=4)
    dual = inst.dual()
    lp = dual.master_lp(20_000)
    gen = dual.master_generator()
    dense = lp.dense_matrix()
    for pos in range(gen.count):
        rows, vals, obj = gen.column_at(pos)
        col = np.zeros(lp.n_rows)
        col[rows] = vals
        assert np.allclose(col, dense[:, pos], atol=1e-12)
        assert obj == pytest.approx(float(lp.c[pos]), abs=1e-12)


def test_vectorized_pricing_matches_per_column_scores():
    inst = random_instance(43, d=2, m=4)
    gen = inst.dual().master_generator()
    rng = np.random.default_rng(0)
    n_rows = len(inst.dual().master_row_data()[1])
    duals = rng.normal(0, 1, n_rows)
    for use_obj in (True, False):
        fast = gen.reduced_costs(duals, use_objective=use_obj)
        slow = np.empty(gen.count)
        for pos in range(gen.count):
            rows, vals, obj = gen.column_at(pos)
            score = float(duals[rows] @ vals)
            slow[pos] = score - obj if use_obj else -score
        assert np.allclose(fast, slow, atol=1e-10)


def test_master_seed_covers_every_record_row():
    inst = random_instance(44, d=2, m=4)
    dual = inst.dual()
    seed_lp, _gen = dual.master_seed()
    M = seed_lp.dense_matrix()
    # each record row needs at least one seeded column touching it,
    # otherwise phase one starts from scratch on that row
    touched = np.any(M != 0.0, axis=1)
    assert np.all(touched[: len(dual.records)])


def test_corner_cell_covers_threshold_at_the_top():
    # sum can reach tau only at the single top corner
    part = build_box_partition([np.array([0.0, 1.0])] * 2, 2.0)
    risk = RiskFunctional(RiskKind.VAR_INDICATOR, 2.0)
    dual = assemble_dual_lp(part, [], risk)
    assert dual.corner_cell is not None
    assert not part.has_above_cells()
    assert _solve(dual) == pytest.approx(1.0)  # point mass at the corner


def test_no_corner_when_threshold_is_unreachable():
    part = build_box_partition([np.array([0.0, 1.0])] * 2, 2.5)
    risk = RiskFunctional(RiskKind.VAR_INDICATOR, 2.5)
    dual = assemble_dual_lp(part, [], risk)
    assert dual.corner_cell is None
    assert _solve(dual) == pytest.approx(0.0)


def test_shortfall_with_unbounded_domain_is_flagged():
    part = build_box_partition([np.array([0.0, 1.0, np.inf])], 0.5)
    risk = RiskFunctional(RiskKind.CVAR_HINGE, 0.5)
    dual = assemble_dual_lp(part, [], risk)
    assert dual.unbounded_above
    var_dual = assemble_dual_lp(part, [], RiskFunctional(RiskKind.VAR_INDICATOR, 0.5))
    assert not var_dual.unbounded_above


def test_assemble_validation():
    part, fns, risk = _simple_setup()
    with pytest.raises(InputError):
        assemble_dual_lp(part, fns, risk, mode="explicit")
    with pytest.raises(InputError):
        assemble_dual_lp(part, fns, RiskFunctional(RiskKind.VAR_INDICATOR, np.inf))
    with pytest.raises(InputError):
        # partition sliced elsewhere
        other = build_box_partition([np.array([0.0, 0.5, 1.0])], 0.25)
        assemble_dual_lp(other, fns, risk)
    with pytest.raises(InputError):
        unsliced = build_box_partition([np.array([0.0, 0.5, 1.0])])
        assemble_dual_lp(unsliced, fns, risk)
    with pytest.raises(InputError):
        bad_axis = [
            TestFunction(
                "f", TestFunctionKind.SLAB_INDICATOR, 3, (0.0, 0.5), Sense.UPPER, 1.0
            )
        ]
        assemble_dual_lp(part, bad_axis, risk)
    with pytest.raises(PartitionIncompatibleError):
        off_grid = [
            TestFunction(
                "f", TestFunctionKind.SLAB_INDICATOR, 0, (0.0, 0.4), Sense.UPPER, 1.0
            )
        ]
        assemble_dual_lp(part, off_grid, risk)


def test_vertex_mode_rejects_unbounded_cells():
    part = build_box_partition([np.array([0.0, 1.0, np.inf])], 0.5)
    risk = RiskFunctional(RiskKind.VAR_INDICATOR, 0.5)
    dual = assemble_dual_lp(part, [], risk, ReductionMode.VERTEX)
    with pytest.raises(Exception):
        dual.materialize()


def test_materialize_budget():
    inst = random_instance(3, d=2, m=4)
    with pytest.raises(CapacityError):
        inst.dual().materialize(4)
    with pytest.raises(CapacityError):
        inst.dual().master_lp(4)


def test_scan_order_prefers_cells_past_the_threshold():
    inst = random_instance(21, d=2, m=4, risk_kind=RiskKind.VAR_INDICATOR)
    dual = inst.dual()
    _grid, _flag, side, _mins, _maxs = inst.partition.ref_arrays()
    order = dual.scan_order
    first_below = np.argmax(side[order] < 0)
    # all cells past the threshold come before the first below cell
    assert np.all(side[order[:first_below]] > 0)
