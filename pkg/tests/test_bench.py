import csv
import math

import numpy as np
import pytest

from bottomup.bench import (
    BenchRow,
    cca_mac_count,
    fit_slope,
    quadratic_mac_count,
    run_scaling,
    write_csv,
)
from bottomup.kernels import reference


def test_cca_count_doubles_with_height():
    assert cca_mac_count(16, 96, 64) == 2 * cca_mac_count(8, 96, 64)


def test_quadratic_count_quadruples_with_height():
    assert quadratic_mac_count(16, 12, 8) == 4 * quadratic_mac_count(8, 12, 8)


def test_doubling_h_and_w_quadruples_cca_but_not_16x():
    base = cca_mac_count(8, 8, 4)
    assert cca_mac_count(16, 16, 4) == 4 * base
    assert quadratic_mac_count(16, 16, 4) == 16 * quadratic_mac_count(8, 8, 4)


def test_counts_match_instrumented_kernels():
    rng = np.random.default_rng(0)
    h, w, c = 4, 3, 2
    counter = reference.MacCounter()
    reference.counted_column_attention(
        rng.uniform(-1, 1, (1, h, w, c)), rng.uniform(-1, 1, (1, h, w, c)),
        rng.uniform(-1, 1, (w, c)), counter)
    assert counter.count == cca_mac_count(h, w, c)
    counter = reference.MacCounter()
    reference.counted_global_self_attention(rng.uniform(-1, 1, (h * w, c)),
                                            counter)
    assert counter.count == quadratic_mac_count(h, w, c)


def _rows(values):
    return [BenchRow(kernel="cca", backend="numpy", height=1, width=n,
                     channels=1, pixels=n, op_count=n, median_ns=t)
            for n, t in values]


def test_fit_slope_exact_linear():
    rows = _rows([(n, 3.5 * n) for n in (10, 100, 1000, 10000)])
    assert fit_slope(rows) == pytest.approx(1.0, abs=1e-9)


def test_fit_slope_exact_quadratic():
    rows = _rows([(n, 0.02 * n * n) for n in (10, 100, 1000)])
    assert fit_slope(rows) == pytest.approx(2.0, abs=1e-9)


def test_fit_slope_needs_three_points():
    with pytest.raises(ValueError):
        fit_slope(_rows([(10, 1.0), (100, 10.0)]))


def test_run_scaling_validates_arguments():
    with pytest.raises(ValueError):
        run_scaling([], reps=3)
    with pytest.raises(ValueError):
        run_scaling([(4, 4, 2)], reps=2)
    with pytest.raises(ValueError):
        run_scaling([(4, 4, 2)], kernel="cubic")


def test_run_scaling_rows_and_csv(tmp_path):
    sizes = [(4, 6, 4), (8, 6, 4), (16, 6, 4)]
    rows = run_scaling(sizes, reps=3, seed=1, kernel="cca")
    assert [r.op_count for r in rows] == [cca_mac_count(*s) for s in sizes]
    assert all(r.median_ns > 0 for r in rows)
    path = tmp_path / "bench.csv"
    write_csv(rows, path)
    with open(path) as fh:
        read = list(csv.DictReader(fh))
    assert len(read) == 3
    assert read[0]["op_count"] == str(rows[0].op_count)
    assert read[2]["pixels"] == "96"


def test_tiny_quadratic_run_scaling():
    rows = run_scaling([(2, 3, 2), (4, 3, 2), (8, 3, 2)], reps=3, seed=2,
                       kernel="quadratic")
    assert [r.op_count for r in rows] == [
        quadratic_mac_count(2, 3, 2),
        quadratic_mac_count(4, 3, 2),
        quadratic_mac_count(8, 3, 2),
    ]


def test_measured_slopes_separate_linear_from_quadratic():
    # sizes small enough for CI but big enough that compute dominates
    cca_rows = run_scaling([(32, 48, 32), (64, 48, 32), (128, 48, 32),
                            (256, 48, 32)], reps=3, seed=3, kernel="cca")
    quad_rows = run_scaling([(8, 24, 16), (16, 24, 16), (32, 24, 16),
                             (64, 24, 16)], reps=3, seed=3, kernel="quadratic")
    assert fit_slope(cca_rows) < 1.5
    assert fit_slope(quad_rows) > 1.5


def test_svg_emitter(tmp_path):
    from bottomup.svgplot import line_chart

    path = tmp_path / "plot.svg"
    line_chart({"a": [(1, 10), (10, 100)], "b": [(1, 20), (10, 2000)]},
               path, title="t", xlabel="x", ylabel="y", loglog=True)
    text = path.read_text()
    assert text.startswith("<svg") and "polyline" in text
    with pytest.raises(ValueError):
        line_chart({"a": [(0, 1)]}, tmp_path / "bad.svg", loglog=True)
