"""Finite dual of the worst-case risk bound over a sliced box partition.

The bounding dual has one constraint per support point: the weighted
test functions plus the normalization constant must dominate the risk
function everywhere.  On each partition cell the data are affine, so
the infinite constraint family collapses to finitely many linear rows.
Three reduction routes produce the rows:

* an explicit multiplier block per cell (valid on any nonempty cell),
* a support-function collapse for cells where every test function
  restricts to a constant, leaving a single row per cell,
* vertex enumeration for bounded cells.

All three describe the same feasible set on their common domain;
keeping the routes separate is what lets tests cross-check one against
another.  The collapsed form also transposes into a column-per-cell
master suitable for delayed column generation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, unique
from typing import Optional

import numpy as np

from .errors import (
    CapacityError,
    InputError,
    ModelInfeasibleOnCell,
    PartitionIncompatibleError,
)
from .geometry import Cell, Partition, SideOfTau, cell_vertices, maximize_linear_over_cell
from .lp_engine import DENSE_BUDGET, ColumnGenerator, LinearProgram
from .test_functions import (
    RiskFunctional,
    RiskKind,
    TestFunctionKind,
    normalized_records,
    restrict_to_cell,
)

# slab endpoints must sit on partition breakpoints within this
GRID_TOL = 1e-9
# partition tau and risk tau must agree within this
TAU_MATCH_TOL = 1e-9
# linear parts below this count as constant for the collapse test
CONST_TOL = 1e-12
# threshold at which the top corner of the box counts as reaching tau
CORNER_TOL = 1e-9
# generator precomputes a dense column matrix up to this many positions
EAGER_MATRIX_LIMIT = 8192


@unique
class ReductionMode(Enum):
    """How per-cell dual constraints are reduced to rows.

    LAMBDA_ELIMINATED collapses a cell to one row whenever every test
    function is constant on it and falls back to the explicit block
    otherwise, so it is always applicable.  EXPLICIT always emits the
    multiplier block.  VERTEX needs bounded cells.
    """

    EXPLICIT = "explicit"
    LAMBDA_ELIMINATED = "lambda_eliminated"
    VERTEX = "vertex"


@dataclass(eq=False)
class CellBlock:
    """Dual rows contributed by one cell.

    ``rows`` holds (coefficients, sense, rhs) triples keyed by dual
    variable: ('y', s) and ('z', t) index the inequality and equality
    records, 'z0' the normalization, ('lam', j) the cell-local
    multipliers.  For a collapsed block ``lam_star`` and
    ``support_value`` record the eliminated multipliers and their
    objective, and ``r_value`` the row's right-hand side, which equals
    the maximum of the restricted risk function over the cell.
    """

    cell_id: int
    mode: str
    rows: list
    lam_count: int = 0
    lam_star: Optional[np.ndarray] = None
    support_value: Optional[float] = None
    r_value: Optional[float] = None


def _signed_restrictions(records, cell):
    n = cell.dimension
    V = np.zeros((len(records), n))
    c = np.zeros(len(records))
    for r, (fn, sign, _rhs, _iseq) in enumerate(records):
        v, const = restrict_to_cell(fn, cell)
        V[r] = sign * v
        c[r] = sign * const
    return V, c


def _var_key(r, n_ineq):
    return ("y", r) if r < n_ineq else ("z", r - n_ineq)


def precompute_cell_lambda(cell, g):
    """Best multiplier vector for a collapsed cell row.

    Solves max lam @ ell subject to sum_j lam_j f_j = -g, lam >= 0
    over the cell's halfspaces (f_j, ell_j), reading the multipliers
    off the face active at the maximizer of <g, x>.  Returns (lam, C)
    with C the optimum.  Raises ModelInfeasibleOnCell when no feasible
    lam exists, which happens exactly when <g, x> is unbounded above
    on the cell.
    """
    g = np.asarray(g, dtype=float)
    val, _x, lam = maximize_linear_over_cell(cell, g)
    if not np.isfinite(val):
        raise ModelInfeasibleOnCell(
            f"cell {cell.id} is unbounded along the risk gradient",
            cell_id=cell.id,
        )
    return lam, -val


def _farkas_rows(cell, records, riskfn):
    V, cvec = _signed_restrictions(records, cell)
    g, e = restrict_to_cell(riskfn, cell)
    halfspaces = cell.halfspaces
    n_ineq = sum(1 for _, _, _, iseq in records if not iseq)
    rows = []
    for a in range(cell.dimension):
        coefs = {}
        for r in range(len(records)):
            if V[r, a] != 0.0:
                coefs[_var_key(r, n_ineq)] = V[r, a]
        for j, h in enumerate(halfspaces):
            if h.normal[a] != 0.0:
                coefs[("lam", j)] = -h.normal[a]
        rows.append((coefs, "=", float(g[a])))
    coefs = {}
    for r in range(len(records)):
        if cvec[r] != 0.0:
            coefs[_var_key(r, n_ineq)] = cvec[r]
    coefs["z0"] = 1.0
    for j, h in enumerate(halfspaces):
        if h.bound != 0.0:
            coefs[("lam", j)] = h.bound
    rows.append((coefs, ">=", float(e)))
    return rows


def farkas_constraints_linear(cell, testfns, riskfn):
    """Explicit multiplier block for one cell.

    Emits one equality row per coordinate tying the weighted linear
    parts to the cell's halfspace normals through nonnegative
    multipliers, plus the constant-part inequality.  Valid on any
    nonempty cell, bounded or not.
    """
    return _farkas_rows(cell, normalized_records(testfns), riskfn)


def _vertex_rows(cell, records, riskfn):
    V, cvec = _signed_restrictions(records, cell)
    g, e = restrict_to_cell(riskfn, cell)
    n_ineq = sum(1 for _, _, _, iseq in records if not iseq)
    rows = []
    for q in cell_vertices(cell):
        vals = V @ q + cvec
        coefs = {}
        for r in range(len(records)):
            if vals[r] != 0.0:
                coefs[_var_key(r, n_ineq)] = float(vals[r])
        coefs["z0"] = 1.0
        rows.append((coefs, ">=", float(g @ q + e)))
    return rows


def concave_vertex_constraints(cell, testfns, riskfn):
    """Vertex form of a cell's dual constraints: one row per vertex.

    Equivalent to the explicit block whenever the cell is bounded,
    since an affine function dominates another on a polytope exactly
    when it does so at every vertex.  Unbounded cells are rejected by
    the vertex enumeration.
    """
    return _vertex_rows(cell, normalized_records(testfns), riskfn)


def _collapsed_block(cell, records, riskfn, lam_cache):
    V, cvec = _signed_restrictions(records, cell)
    if np.max(np.abs(V), initial=0.0) > CONST_TOL:
        return None
    g, e = restrict_to_cell(riskfn, cell)
    cached = lam_cache.get(cell.id)
    if cached is None:
        cached = precompute_cell_lambda(cell, g)
        lam_cache[cell.id] = cached
    lam, support = cached
    n_ineq = sum(1 for _, _, _, iseq in records if not iseq)
    coefs = {}
    for r in range(len(records)):
        if cvec[r] != 0.0:
            coefs[_var_key(r, n_ineq)] = cvec[r]
    coefs["z0"] = 1.0
    r_value = float(e - support)
    return CellBlock(
        cell_id=cell.id,
        mode="lambda",
        rows=[(coefs, ">=", r_value)],
        lam_star=lam,
        support_value=support,
        r_value=r_value,
    )


class DualLP:
    """Assembled finite dual, ready to materialize or transpose.

    Rows of the master (the transposed form) are fixed as: one '<='
    row per inequality record, one '=' row per equality record, then
    the normalization row with right-hand side one.  Cells are scanned
    with the synthetic corner first (when present), then cells on the
    high side of tau, then the rest, each group in partition order.
    """

    def __init__(self, partition, testfns, riskfn, mode, records, corner_cell):
        self.partition = partition
        self.testfns = tuple(testfns)
        self.riskfn = riskfn
        self.mode = mode
        self.records = records
        self.corner_cell = corner_cell
        self.n_ineq = sum(1 for _, _, _, iseq in records if not iseq)
        self.n_eq = len(records) - self.n_ineq
        self._lam_cache = {}

        grid, flag, side, rmin, rmax = partition.ref_arrays()
        self._grid = grid
        self._side = side
        self._rmax = rmax
        above = np.nonzero(side > 0)[0]
        below = np.nonzero(side <= 0)[0]
        self.scan_order = np.concatenate([above, below])

        tau = riskfn.tau
        if riskfn.kind is RiskKind.VAR_INDICATOR:
            self._r_cells = (side > 0).astype(float)
        else:
            self._r_cells = np.where(side > 0, rmax - tau, 0.0)
        self.unbounded_above = bool(
            riskfn.kind is RiskKind.CVAR_HINGE
            and np.any((side > 0) & ~np.isfinite(rmax))
        )

        self._all_indicator = all(
            fn.kind is TestFunctionKind.SLAB_INDICATOR for fn, _, _, _ in records
        )
        self._tables = self._containment_tables()
        self._eliminable = self._eliminable_mask()

    # -- per-record slab containment, tabulated over slab indices --

    def _containment_tables(self):
        bp = self.partition.breakpoints
        tables = {}
        for row, (fn, sign, _rhs, _iseq) in enumerate(self.records):
            a = fn.axis
            b = bp[a]
            lo, hi = fn.slab
            contain = (lo <= b[:-1] + GRID_TOL) & (b[1:] <= hi + GRID_TOL)
            rows, mat = tables.setdefault(a, ([], []))
            rows.append(row)
            # table entries carry the record sign so lookups give the
            # signed restriction constant directly
            mat.append(sign * contain.astype(float))
        out = {}
        for a, (rows, mat) in tables.items():
            out[a] = (np.array(rows, dtype=int), np.column_stack(mat))
        return out

    def _eliminable_mask(self):
        k = self.partition.cell_count
        mask = np.ones(k, dtype=bool)
        for row, (fn, sign, _rhs, _iseq) in enumerate(self.records):
            if fn.kind is TestFunctionKind.SLAB_INDICATOR:
                continue
            if fn.v is not None and np.max(np.abs(fn.v)) <= CONST_TOL:
                continue
            rows_a, mat = self._tables[fn.axis]
            col = int(np.nonzero(rows_a == row)[0][0])
            inside = np.abs(mat[self._grid[:, fn.axis], col]) > 0.5
            mask &= ~inside
        return mask

    # -- cell enumeration --

    def iter_cells(self):
        """All cells in scan order: corner first, then high side, then
        the rest."""
        if self.corner_cell is not None:
            yield self.corner_cell
        for ridx in self.scan_order:
            yield self.partition.cell_at(int(ridx))

    def cell_block(self, cell) -> CellBlock:
        """Reduce one cell under this assembly's mode."""
        mode = self.mode
        if mode is ReductionMode.VERTEX:
            rows = _vertex_rows(cell, self.records, self.riskfn)
            return CellBlock(cell_id=cell.id, mode="vertex", rows=rows)
        if mode is ReductionMode.LAMBDA_ELIMINATED:
            block = _collapsed_block(cell, self.records, self.riskfn, self._lam_cache)
            if block is not None:
                return block
        rows = _farkas_rows(cell, self.records, self.riskfn)
        return CellBlock(
            cell_id=cell.id,
            mode="explicit",
            rows=rows,
            lam_count=len(cell.halfspaces),
        )

    # -- materialized dual (row form) --

    def materialize(self, budget: int = DENSE_BUDGET) -> LinearProgram:
        """Build the dual LP with every cell's rows, deduplicated.

        The returned LinearProgram carries ``var_keys`` naming its
        columns.  Raises CapacityError when the row or column count
        would exceed ``budget``.
        """
        n_cells = self.partition.cell_count + (1 if self.corner_cell is not None else 0)
        if n_cells > budget:
            raise CapacityError(
                f"{n_cells} cells exceed the materialization budget {budget}"
            )
        var_keys = [("y", s) for s in range(self.n_ineq)]
        var_keys += [("z", t) for t in range(self.n_eq)]
        var_keys.append("z0")
        var_index = {k: i for i, k in enumerate(var_keys)}

        rows = []
        seen = set()
        for cell in self.iter_cells():
            block = self.cell_block(cell)
            for coefs, sense, rhs in block.rows:
                named = {}
                for key, val in coefs.items():
                    if isinstance(key, tuple) and key[0] == "lam":
                        named[("lam", cell.id, key[1])] = val
                    else:
                        named[key] = val
                sig = (
                    sense,
                    round(rhs, 12),
                    tuple(sorted((repr(k), round(v, 12)) for k, v in named.items())),
                )
                if sig in seen:
                    continue
                seen.add(sig)
                for key in named:
                    if key not in var_index:
                        var_index[key] = len(var_keys)
                        var_keys.append(key)
                rows.append((named, sense, rhs))
                if len(rows) > budget:
                    raise CapacityError(
                        f"dual row count exceeds the budget {budget}"
                    )
        if len(var_keys) > budget:
            raise CapacityError(
                f"dual column count {len(var_keys)} exceeds the budget {budget}"
            )

        A = np.zeros((len(rows), len(var_keys)))
        senses = []
        rhs = np.zeros(len(rows))
        for i, (named, sense, r) in enumerate(rows):
            for key, val in named.items():
                A[i, var_index[key]] = val
            senses.append(sense)
            rhs[i] = r
        cost = np.zeros(len(var_keys))
        free = np.zeros(len(var_keys), dtype=bool)
        for i, key in enumerate(var_keys):
            if key == "z0":
                cost[i] = 1.0
                free[i] = True
            elif key[0] == "y":
                cost[i] = self.records[key[1]][2]
            elif key[0] == "z":
                cost[i] = self.records[self.n_ineq + key[1]][2]
                free[i] = True
        lp = LinearProgram("min", cost, A, senses, rhs, var_free=free, name="dual")
        lp.var_keys = tuple(var_keys)
        return lp

    # -- transposed master (column form) --

    def master_row_data(self):
        senses = ["<="] * self.n_ineq + ["="] * self.n_eq + ["="]
        rhs = np.array([rec[2] for rec in self.records] + [1.0])
        return senses, rhs

    def _point_column(self, cell, q):
        V, cvec = _signed_restrictions(self.records, cell)
        g, e = restrict_to_cell(self.riskfn, cell)
        vals = np.concatenate([V @ q + cvec, [1.0]])
        return vals, float(g @ q + e)

    def _cell_column(self, cell):
        V, cvec = _signed_restrictions(self.records, cell)
        g, e = restrict_to_cell(self.riskfn, cell)
        cached = self._lam_cache.get(cell.id)
        if cached is None:
            cached = precompute_cell_lambda(cell, g)
            self._lam_cache[cell.id] = cached
        _lam, support = cached
        vals = np.concatenate([cvec, [1.0]])
        return vals, float(e - support)

    def _generator_entries(self):
        entries = []
        if self.corner_cell is not None:
            entries.append(("corner", -1, -1))
        for ridx in self.scan_order:
            i = int(ridx)
            if self._eliminable[i]:
                entries.append(("cell", i, -1))
            else:
                cell = self.partition.cell_at(i)
                for k in range(len(cell_vertices(cell))):
                    entries.append(("vx", i, k))
        return entries

    def master_generator(self) -> ColumnGenerator:
        """Column producer over the cell scan order.

        Collapsible cells contribute one aggregated column; the rest
        contribute one column per vertex.  Pricing uses a vectorized
        scorer when every record is a slab indicator, falling back to
        an eagerly built column matrix on small instances.
        """
        n_rows = self.n_ineq + self.n_eq + 1
        all_rows = np.arange(n_rows)
        entries = self._generator_entries()
        indicator_only = self._all_indicator and all(e[0] != "vx" for e in entries)

        def generic_column_at(pos):
            kind, i, k = entries[pos]
            if kind == "corner":
                vals, obj = self._point_column(self.corner_cell, self.corner_cell.lows)
                return all_rows, vals, obj
            cell = self.partition.cell_at(i)
            if kind == "cell":
                vals, obj = self._cell_column(cell)
                return all_rows, vals, obj
            q = cell_vertices(cell)[k]
            vals, obj = self._point_column(cell, q)
            return all_rows, vals, obj

        if indicator_only:
            # tables give the signed restriction constants directly, so
            # a generated column never touches per-record restriction
            def column_at(pos):
                kind, i, _k = entries[pos]
                if kind == "corner":
                    vals, obj = self._point_column(self.corner_cell, self.corner_cell.lows)
                    return all_rows, vals, obj
                vals = np.zeros(n_rows)
                for a, (rows_a, mat) in self._tables.items():
                    vals[rows_a] = mat[self._grid[i, a], :]
                vals[-1] = 1.0
                return all_rows, vals, float(self._r_cells[i])
        else:
            column_at = generic_column_at

        reduced = None
        if indicator_only:
            reduced = self._fast_reduced_costs(entries, column_at)
        elif len(entries) <= EAGER_MATRIX_LIMIT:
            reduced = self._eager_reduced_costs(entries, column_at)

        return ColumnGenerator(
            len(entries),
            column_at,
            reduced_costs=reduced,
            label_at=lambda pos: entries[pos],
        )

    def _fast_reduced_costs(self, entries, column_at):
        grid = self._grid
        order = self.scan_order
        r_scan = self._r_cells[order]
        has_corner = self.corner_cell is not None
        corner = column_at(0) if has_corner else None

        def scorer(duals, use_objective):
            duals = np.asarray(duals, dtype=float)
            acc = np.full(grid.shape[0], duals[-1])
            for a, (rows_a, mat) in self._tables.items():
                acc += (mat @ duals[rows_a])[grid[:, a]]
            score = acc[order]
            rc = score - r_scan if use_objective else -score
            if has_corner:
                _rows, vals, obj = corner
                s = float(duals @ vals)
                rc0 = s - obj if use_objective else -s
                rc = np.concatenate([[rc0], rc])
            return rc

        return scorer

    def _eager_reduced_costs(self, entries, column_at):
        cache = {}

        def scorer(duals, use_objective):
            if "M" not in cache:
                cols = []
                objs = np.empty(len(entries))
                for pos in range(len(entries)):
                    _rows, vals, obj = column_at(pos)
                    cols.append(vals)
                    objs[pos] = obj
                cache["M"] = np.column_stack(cols)
                cache["r"] = objs
            duals = np.asarray(duals, dtype=float)
            score = duals @ cache["M"]
            return score - cache["r"] if use_objective else -score

        return scorer

    def master_lp(self, budget: int = DENSE_BUDGET) -> LinearProgram:
        """Fully materialized master with one column per scan entry.

        This is the single-shot route: every column is built up front
        and handed to the dense solver.  Raises CapacityError when the
        column count exceeds ``budget``.
        """
        entries = self._generator_entries()
        if len(entries) > budget:
            raise CapacityError(
                f"{len(entries)} master columns exceed the budget {budget}"
            )
        senses, rhs = self.master_row_data()
        n_rows = len(rhs)
        if self._all_indicator and all(e[0] != "vx" for e in entries):
            M, robj = self._indicator_master_matrix(entries)
        else:
            gen_cols = []
            robj = np.empty(len(entries))
            gen = self.master_generator()
            for pos in range(len(entries)):
                _rows, vals, obj = gen.column_at(pos)
                gen_cols.append(vals)
                robj[pos] = obj
            M = np.column_stack(gen_cols) if gen_cols else np.zeros((n_rows, 0))
        lp = LinearProgram("max", robj, M, senses, rhs, name="master")
        return lp

    def _indicator_master_matrix(self, entries):
        k = self.partition.cell_count
        n_rows = self.n_ineq + self.n_eq + 1
        M = np.zeros((n_rows, k))
        for a, (rows_a, mat) in self._tables.items():
            M[rows_a, :] = mat[self._grid[:, a], :].T
        M[-1, :] = 1.0
        M = M[:, self.scan_order]
        robj = self._r_cells[self.scan_order]
        if self.corner_cell is not None:
            gen = self.master_generator()
            _rows, vals, obj = gen.column_at(0)
            M = np.column_stack([vals, M])
            robj = np.concatenate([[obj], robj])
        return M, robj

    def master_seed(self, seed_size: int = 8):
        """Restricted master primed for column generation.

        Seeds the first scan positions plus, for every (axis, slab)
        pair, the first position whose cell lies in that slab, so each
        record row starts with coverage and phase one converges in few
        rounds.  Returns (LinearProgram, ColumnGenerator) with the
        seeded positions marked generated.
        """
        gen = self.master_generator()
        entries = self._generator_entries()
        picks = set(range(min(seed_size, gen.count)))
        cell_of_entry = np.array([e[1] for e in entries], dtype=int)
        real = cell_of_entry >= 0
        if np.any(real):
            entry_grid = self._grid[np.where(real, cell_of_entry, 0)]
            for a in range(self.partition.dimension):
                col = entry_grid[:, a]
                for g in range(self.partition.slab_counts[a]):
                    hit = np.nonzero(real & (col == g))[0]
                    if hit.size:
                        picks.add(int(hit[0]))
        senses, rhs = self.master_row_data()
        n_rows = len(rhs)
        cols = []
        objs = []
        for pos in sorted(picks):
            _rows, vals, obj = gen.column_at(pos)
            cols.append(vals)
            objs.append(obj)
            gen.generated.add(pos)
        M = np.column_stack(cols) if cols else np.zeros((n_rows, 0))
        lp = LinearProgram("max", np.array(objs), M, senses, rhs, name="master_seed")
        return lp, gen


def _make_corner_cell(partition, riskfn):
    if riskfn.kind is not RiskKind.VAR_INDICATOR:
        return None
    if partition.has_above_cells():
        return None
    top = partition.max_total_sum
    if not np.isfinite(top):
        return None
    if abs(top - riskfn.tau) > CORNER_TOL * max(1.0, abs(riskfn.tau)):
        return None
    corner = np.array([b[-1] for b in partition.breakpoints])
    return Cell(
        corner,
        corner.copy(),
        tau=partition.tau,
        side_of_tau=SideOfTau.ABOVE,
        cell_id=partition.cell_count,
        degenerate=True,
    )


def assemble_dual_lp(
    partition: Partition,
    testfns,
    riskfn: RiskFunctional,
    mode: ReductionMode = ReductionMode.LAMBDA_ELIMINATED,
) -> DualLP:
    """Check compatibility and assemble the finite dual.

    The partition must be sliced at the risk threshold and every test
    function slab must start and end on breakpoints of its axis.  When
    the threshold coincides with the largest reachable sum, the
    indicator risk still charges that single point; a degenerate
    corner cell is appended so the dual sees it.
    """
    if not isinstance(mode, ReductionMode):
        raise InputError(f"unknown reduction mode: {mode!r}")
    if not np.isfinite(riskfn.tau):
        raise InputError("risk threshold must be finite")
    if partition.tau is None:
        raise InputError("partition must be sliced at the risk threshold")
    if abs(partition.tau - riskfn.tau) > TAU_MATCH_TOL * max(1.0, abs(riskfn.tau)):
        raise InputError(
            f"partition is sliced at {partition.tau}, risk threshold is {riskfn.tau}"
        )
    records = normalized_records(testfns)
    bp = partition.breakpoints
    for fn, _sign, _rhs, _iseq in records:
        if fn.axis >= partition.dimension:
            raise InputError(
                f"test function {fn.id!r} axis {fn.axis} outside dimension "
                f"{partition.dimension}"
            )
        b = bp[fn.axis]
        for end in fn.slab:
            if np.isfinite(end):
                ok = np.min(np.abs(b - end)) <= GRID_TOL
            else:
                # an infinite endpoint must be the axis end itself
                ok = end == b[0] or end == b[-1]
            if not ok:
                raise PartitionIncompatibleError(
                    f"slab endpoint {end} of {fn.id!r} is not a breakpoint "
                    f"of axis {fn.axis}"
                )
    corner = _make_corner_cell(partition, riskfn)
    return DualLP(partition, testfns, riskfn, mode, records, corner)
