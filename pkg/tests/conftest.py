"""Shared builders for the test suite.

Randomized model instances calibrate their integral bounds on an
empirical sample, so the sampling measure itself satisfies every
constraint and the resulting bound is finite.  scipy's linprog shows
up here purely as an independent reference solver for cross-checks;
the package itself never calls it.
"""

import numpy as np
from scipy.optimize import linprog

from riskdual import (
    LinearProgram,
    ReductionMode,
    RiskFunctional,
    RiskKind,
    Sense,
    TestFunction,
    TestFunctionKind,
    assemble_dual_lp,
    build_box_partition,
    empirical_integral,
    solve_dense_simplex,
)


class Instance:
    """A model bundled with the sample it was calibrated on."""

    def __init__(self, partition, testfns, risk, samples):
        self.partition = partition
        self.testfns = testfns
        self.risk = risk
        self.samples = samples

    def dual(self, mode=ReductionMode.LAMBDA_ELIMINATED):
        return assemble_dual_lp(self.partition, self.testfns, self.risk, mode)

    def bound(self, mode=ReductionMode.LAMBDA_ELIMINATED, budget=20_000):
        sol = solve_dense_simplex(self.dual(mode).materialize(budget), budget=budget)
        return sol


def jittered_breakpoints(rng, m, lo=0.0, hi=1.0):
    bp = np.linspace(lo, hi, m + 1)
    # jitter below half the spacing keeps the order strict
    bp[1:-1] += rng.uniform(-0.3, 0.3, size=m - 1) * (hi - lo) / m
    return bp


def _indicator(fn_id, axis, slab, sense, bound):
    return TestFunction(
        fn_id, TestFunctionKind.SLAB_INDICATOR, axis, slab, sense, bound
    )


def _affine(fn_id, axis, slab, sense, bound, v, c):
    return TestFunction(
        fn_id, TestFunctionKind.SLAB_AFFINE, axis, slab, sense, bound, v=v, c=c
    )


def random_instance(
    seed,
    *,
    d=None,
    m=None,
    affine=False,
    equality=False,
    risk_kind=None,
    two_sided=True,
    k=200,
    slack=0.05,
):
    """Indicator bounds on every slab of every axis, plus optional
    affine constraints, all calibrated on k beta-distributed samples.

    The threshold sits at an interior quantile of the sample sums so
    both sides of the slice are populated.
    """
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 3)) if d is None else d
    m = int(rng.choice([2, 4])) if m is None else m
    bps = [jittered_breakpoints(rng, m) for _ in range(d)]
    data = np.column_stack(
        [
            rng.beta(rng.uniform(0.8, 3.0), rng.uniform(0.8, 3.0), size=k)
            for _ in range(d)
        ]
    )
    tau = float(np.quantile(data.sum(axis=1), rng.uniform(0.5, 0.9)))
    partition = build_box_partition(bps, tau)
    if risk_kind is None:
        risk_kind = RiskKind.VAR_INDICATOR if rng.random() < 0.5 else RiskKind.CVAR_HINGE
    risk = RiskFunctional(risk_kind, tau)

    fns = []
    for a in range(d):
        bp = partition.breakpoints[a]
        for s in range(len(bp) - 1):
            slab = (float(bp[s]), float(bp[s + 1]))
            emp = empirical_integral(_indicator("probe", a, slab, Sense.UPPER, 0.0), data)
            fns.append(_indicator(f"up_{a}_{s}", a, slab, Sense.UPPER, emp + slack))
            if two_sided:
                fns.append(
                    _indicator(f"lo_{a}_{s}", a, slab, Sense.LOWER, max(0.0, emp - slack))
                )
    if affine:
        for j in range(int(rng.integers(1, 3))):
            a = int(rng.integers(0, d))
            bp = partition.breakpoints[a]
            i0 = int(rng.integers(0, len(bp) - 1))
            i1 = int(rng.integers(i0 + 1, len(bp)))
            slab = (float(bp[i0]), float(bp[i1]))
            v = rng.normal(0.0, 1.0, size=d)
            c = float(rng.normal())
            emp = empirical_integral(_affine("probe", a, slab, Sense.UPPER, 0.0, v, c), data)
            if equality and rng.random() < 0.5:
                fns.append(_affine(f"aff_{j}", a, slab, Sense.EQUALITY, emp, v, c))
            elif rng.random() < 0.5:
                fns.append(_affine(f"aff_{j}", a, slab, Sense.UPPER, emp + slack, v, c))
            else:
                fns.append(_affine(f"aff_{j}", a, slab, Sense.LOWER, emp - slack, v, c))
    return Instance(partition, fns, risk, data)


def two_point_model(moment, risk_kind=RiskKind.VAR_INDICATOR):
    """One axis, breakpoints {0, 1}, threshold at the top corner, and a
    single equality pinning the mean of 1 + x.  Measures supported on
    {0, 1} are then fully determined by the moment."""
    partition = build_box_partition([np.array([0.0, 1.0])], 1.0)
    fn = _affine(
        "mean_one_plus_x", 0, (0.0, 1.0), Sense.EQUALITY, moment,
        v=np.array([1.0]), c=1.0,
    )
    return Instance(partition, [fn], RiskFunctional(risk_kind, 1.0), None)


def random_lp(seed, m=None, n=None):
    """Small LP with quarter-integer data.  The coarse grid makes
    degenerate ties common, which is the point."""
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 7)) if m is None else m
    n = int(rng.integers(1, 9)) if n is None else n
    A = np.round(rng.normal(0.0, 1.0, (m, n)) * 4) / 4
    A[rng.random((m, n)) < 0.3] = 0.0
    senses = [("<=", ">=", "=")[int(rng.integers(0, 3))] for _ in range(m)]
    rhs = np.round(rng.normal(0.0, 2.0, m) * 4) / 4
    c = np.round(rng.normal(0.0, 1.0, n) * 4) / 4
    free = rng.random(n) < 0.25
    sense = "min" if rng.random() < 0.5 else "max"
    return LinearProgram(sense, c, A, senses, rhs, var_free=free, name=f"rand{seed}")


def scipy_reference(lp):
    """Solve a LinearProgram with HiGHS and map the result back to the
    LP's own sense.  Returns (status, value) with status one of
    'optimal', 'infeasible', 'unbounded'."""
    A = lp.dense_matrix()
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for i, s in enumerate(lp.row_senses):
        if s == "<=":
            A_ub.append(A[i])
            b_ub.append(lp.rhs[i])
        elif s == ">=":
            A_ub.append(-A[i])
            b_ub.append(-lp.rhs[i])
        else:
            A_eq.append(A[i])
            b_eq.append(lp.rhs[i])
    sign = 1.0 if lp.sense == "min" else -1.0
    bounds = [(None, None) if f else (0.0, None) for f in lp.var_free]
    res = linprog(
        sign * lp.c,
        A_ub=np.array(A_ub) if A_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(A_eq) if A_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=bounds,
        method="highs",
    )
    if res.status == 2:
        return "infeasible", None
    if res.status == 3:
        return "unbounded", None
    assert res.status == 0, res.message
    return "optimal", float(sign * res.fun)
