"""Sample ingestion and bootstrap construction of integral bounds.

Bounds come from percentile bootstrap intervals of empirical test
function means.  Replicates are indexed draws: replicate r uses the
generator seeded with (seed, r), so results are reproducible and
independent of thread count.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .test_functions import evaluate

MIN_REPLICATES = 100


@dataclass(frozen=True)
class SampleSet:
    """A matrix of observations, one row per joint sample."""

    data: np.ndarray
    columns: tuple

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise InputError("sample data must be two-dimensional")
        if data.shape[0] == 0:
            raise InputError("sample set is empty")
        if not np.all(np.isfinite(data)):
            raise InputError("sample data contains non-finite values")
        if len(self.columns) != data.shape[1]:
            raise InputError("header width does not match the sample rows")
        object.__setattr__(self, "data", data)

    @property
    def n_samples(self) -> int:
        return int(self.data.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.data.shape[1])


def load_samples_csv(path) -> SampleSet:
    """Read samples from a CSV file with one header row.

    Every later row must hold one float per header column; errors name
    the offending line.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: file is empty") from None
        columns = tuple(name.strip() for name in header)
        if not columns or any(not c for c in columns):
            raise InputError(f"{path}: header row has empty column names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise InputError(
                    f"{path}:{lineno}: expected {len(columns)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    return SampleSet(np.array(rows, dtype=float), columns)


@dataclass(frozen=True)
class IntegralBound:
    """Two-sided bound on a test function integral with its sampling
    provenance."""

    function_id: str
    lower: float
    upper: float
    level: float
    replicates: int


def bootstrap_integral_bounds(
    testfns,
    samples,
    *,
    level: float = 0.95,
    replicates: int = 1000,
    seed: int = 0,
    threads: int = 1,
):
    """Percentile bootstrap intervals for each test function mean.

    Each replicate resamples the rows with replacement using a
    generator seeded by (seed, replicate), evaluates every test
    function mean on the resample, and the interval takes the
    symmetric percentiles at the requested level.  Returns one
    IntegralBound per function, in input order.
    """
    if not 0.0 < level < 1.0:
        raise InputError("bootstrap level must be strictly between 0 and 1")
    if replicates < MIN_REPLICATES:
        raise InputError(f"bootstrap needs at least {MIN_REPLICATES} replicates")
    data = samples.data if hasattr(samples, "data") else np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise InputError("bootstrap needs a nonempty two-dimensional sample set")
    testfns = list(testfns)
    k = data.shape[0]
    # evaluate each function once; replicates only reindex the values
    values = np.column_stack([evaluate(fn, data) for fn in testfns])
    means = np.empty((replicates, len(testfns)))

    def run(r):
        rng = np.random.default_rng((seed, r))
        idx = rng.integers(0, k, size=k)
        means[r] = values[idx].mean(axis=0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(replicates)))
    else:
        for r in range(replicates):
            run(r)

    lo_q = 100.0 * (1.0 - level) / 2.0
    hi_q = 100.0 * (1.0 + level) / 2.0
    bounds = []
    for j, fn in enumerate(testfns):
        lo, hi = np.percentile(means[:, j], [lo_q, hi_q])
        bounds.append(
            IntegralBound(
                function_id=fn.id,
                lower=float(lo),
                upper=float(hi),
                level=level,
                replicates=replicates,
            )
        )
    return bounds
