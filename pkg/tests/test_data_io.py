"""Sample loading and bootstrap intervals."""

import numpy as np
import pytest

from riskdual import (
    InputError,
    SampleSet,
    Sense,
    TestFunction,
    TestFunctionKind,
    bootstrap_integral_bounds,
    empirical_integral,
    load_samples_csv,
)


def ind(slab, fn_id="f", axis=0):
    return TestFunction(
        fn_id, TestFunctionKind.SLAB_INDICATOR, axis, slab, Sense.UPPER, 1.0
    )


def test_csv_round_trip(tmp_path):
    path = tmp_path / "samples.csv"
    path.write_text("x,y\n0.1,0.2\n0.3,0.4\n\n0.5,0.6\n")
    ss = load_samples_csv(path)
    assert ss.columns == ("x", "y")
    assert ss.n_samples == 3  # the blank line is skipped
    assert ss.dimension == 2
    assert ss.data[1].tolist() == [0.3, 0.4]


def test_csv_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n0.1,0.2\n0.3\n")
    with pytest.raises(InputError, match="bad.csv:3"):
        load_samples_csv(path)
    path.write_text("x,y\n0.1,oops\n")
    with pytest.raises(InputError, match="bad.csv:2"):
        load_samples_csv(path)
    path.write_text("")
    with pytest.raises(InputError, match="empty"):
        load_samples_csv(path)
    path.write_text("x,y\n")
    with pytest.raises(InputError, match="no data rows"):
        load_samples_csv(path)
    path.write_text("x,\n0.1,0.2\n")
    with pytest.raises(InputError, match="header"):
        load_samples_csv(path)


def test_sample_set_validation():
    with pytest.raises(InputError):
        SampleSet(np.array([1.0, 2.0]), ("x",))
    with pytest.raises(InputError):
        SampleSet(np.zeros((0, 1)), ("x",))
    with pytest.raises(InputError):
        SampleSet(np.array([[np.inf]]), ("x",))
    with pytest.raises(InputError):
        SampleSet(np.ones((2, 2)), ("x",))


def test_bootstrap_is_deterministic_and_thread_invariant():
    rng = np.random.default_rng(0)
    data = rng.uniform(0.0, 1.0, (400, 1))
    fns = [ind((0.0, 0.5), "half"), ind((0.25, 0.75), "mid")]
    a = bootstrap_integral_bounds(fns, data, replicates=200, seed=7)
    b = bootstrap_integral_bounds(fns, data, replicates=200, seed=7, threads=4)
    for x, y in zip(a, b):
        assert x == y
    c = bootstrap_integral_bounds(fns, data, replicates=200, seed=8)
    assert any(x != y for x, y in zip(a, c))


def test_bootstrap_brackets_the_empirical_mean():
    rng = np.random.default_rng(1)
    data = rng.uniform(0.0, 1.0, (1000, 1))
    fn = ind((0.0, 0.5), "half")
    (bound,) = bootstrap_integral_bounds([fn], data, replicates=400, seed=0)
    emp = empirical_integral(fn, data)
    assert bound.lower <= emp <= bound.upper
    assert bound.function_id == "half"
    assert bound.level == 0.95
    assert bound.replicates == 400
    # interval width tracks the binomial standard error of the mean
    se = np.sqrt(emp * (1 - emp) / 1000)
    assert 2.0 * se <= bound.upper - bound.lower <= 6.0 * se


def test_bootstrap_interval_narrows_with_level():
    rng = np.random.default_rng(2)
    data = rng.uniform(0.0, 1.0, (500, 2))
    fn = ind((0.0, 0.7), "w", axis=1)
    (wide,) = bootstrap_integral_bounds([fn], data, level=0.99, replicates=300)
    (narrow,) = bootstrap_integral_bounds([fn], data, level=0.5, replicates=300)
    assert narrow.upper - narrow.lower < wide.upper - wide.lower


def test_bootstrap_validation():
    data = np.ones((10, 1)) * 0.5
    fn = ind((0.0, 1.0))
    with pytest.raises(InputError):
        bootstrap_integral_bounds([fn], data, replicates=10)
    with pytest.raises(InputError):
        bootstrap_integral_bounds([fn], data, level=1.0)
    with pytest.raises(InputError):
        bootstrap_integral_bounds([fn], np.zeros((0, 1)))


def test_bootstrap_accepts_sample_sets():
    ss = SampleSet(np.linspace(0.0, 1.0, 101).reshape(-1, 1), ("x",))
    (bound,) = bootstrap_integral_bounds([ind((0.0, 0.5))], ss, replicates=150)
    assert 0.3 <= bound.lower <= bound.upper <= 0.7
