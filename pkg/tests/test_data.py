"""Data model, CSV ingestion, validation, and round-trip invariants."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterstable import (
    Cluster,
    ClusteredDataset,
    EmptyFile,
    MissingColumn,
    NonNumericCell,
    SingleCluster,
    load_csv,
    to_csv,
    validate,
)

BASIC_CSV = """cid,y,x1
a,1.0,0.5
a,2.0,-0.25
b,3.5,1.5
b,0.5,2.0
"""


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_basic(tmp_path):
    ds = load_csv(_write(tmp_path, BASIC_CSV), "cid", "y", ["x1"], add_intercept=True)
    assert ds.G == 2
    assert ds.N == 4
    assert ds.dim_theta == 2
    assert ds.cluster_ids == ("a", "b")
    np.testing.assert_array_equal(ds.clusters[0].X[:, 0], [1.0, 1.0])
    np.testing.assert_array_equal(ds.clusters[0].X[:, 1], [0.5, -0.25])
    np.testing.assert_array_equal(ds.clusters[1].Y, [3.5, 0.5])


def test_non_numeric_cell_names_row_and_column(tmp_path):
    text = "cid,y,x1\na,1.0,0.5\nb,oops,1.0\n"
    with pytest.raises(NonNumericCell) as err:
        load_csv(_write(tmp_path, text), "cid", "y", ["x1"])
    assert err.value.row == 3
    assert err.value.column == "y"
    assert "oops" in str(err.value)


def test_non_finite_cell_rejected(tmp_path):
    text = "cid,y,x1\na,1.0,0.5\nb,nan,1.0\n"
    with pytest.raises(NonNumericCell):
        load_csv(_write(tmp_path, text), "cid", "y", ["x1"])


def test_single_cluster(tmp_path):
    text = "cid,y,x1\na,1.0,0.5\na,2.0,1.0\n"
    with pytest.raises(SingleCluster):
        load_csv(_write(tmp_path, text), "cid", "y", ["x1"])


def test_empty_and_header_only_files(tmp_path):
    with pytest.raises(EmptyFile):
        load_csv(_write(tmp_path, ""), "cid", "y", ["x1"])
    with pytest.raises(EmptyFile):
        load_csv(_write(tmp_path, "cid,y,x1\n"), "cid", "y", ["x1"])


def test_missing_column(tmp_path):
    with pytest.raises(MissingColumn) as err:
        load_csv(_write(tmp_path, BASIC_CSV), "cid", "y", ["x9"])
    assert err.value.column == "x9"


def test_cluster_order_is_first_appearance(tmp_path):
    text = "cid,y,x1\nz,1,1\na,2,2\nz,3,3\nm,4,4\n"
    ds = load_csv(_write(tmp_path, text), "cid", "y", ["x1"])
    assert ds.cluster_ids == ("z", "a", "m")
    np.testing.assert_array_equal(ds.clusters[0].Y, [1.0, 3.0])


def test_validate_clean_dataset(small_ds):
    assert validate(small_ds) == []


def test_validate_flags_nan_and_shape_mismatch():
    good = Cluster(id="ok", X=np.ones((2, 1)), Y=np.array([1.0, 2.0]))
    with_nan = Cluster(id="bad", X=np.array([[np.nan], [1.0]]), Y=np.array([1.0, 2.0]))
    ds = ClusteredDataset(clusters=(good, with_nan), dim_theta=1)
    problems = validate(ds)
    assert len(problems) == 1
    assert "bad" in problems[0] and "non-finite" in problems[0]

    mismatched = Cluster(id="m", X=np.ones((3, 1)), Y=np.array([1.0, 2.0]))
    ds2 = ClusteredDataset(clusters=(good, mismatched), dim_theta=1)
    problems = validate(ds2)
    assert len(problems) == 1
    assert "m" in problems[0]


def test_validate_flags_single_cluster_and_duplicates():
    c = Cluster(id="a", X=np.ones((2, 1)), Y=np.array([1.0, 2.0]))
    assert any("at least 2" in v for v in validate(ClusteredDataset((c,), 1)))
    dup = ClusteredDataset((c, Cluster(id="a", X=np.ones((1, 1)), Y=np.array([3.0]))), 1)
    assert any("duplicated" in v for v in validate(dup))


def test_round_trip_exact(tmp_path, small_ds):
    path = tmp_path / "round.csv"
    to_csv(small_ds, path)
    back = load_csv(path, "cluster", "y", [f"x{j + 1}" for j in range(small_ds.dim_theta)])
    assert back.G == small_ds.G
    assert back.N == small_ds.N
    assert back.dim_theta == small_ds.dim_theta
    for original, reloaded in zip(small_ds.clusters, back.clusters):
        np.testing.assert_array_equal(original.X, reloaded.X)
        np.testing.assert_array_equal(original.Y, reloaded.Y)


@settings(max_examples=25, deadline=None)
@given(
    data=st.lists(
        st.tuples(
            st.sampled_from(["a", "b", "c", "d"]),
            st.floats(allow_nan=False, allow_infinity=False, width=64),
            st.floats(allow_nan=False, allow_infinity=False, width=64),
        ),
        min_size=2,
        max_size=30,
    )
)
def test_round_trip_bit_exact_property(tmp_path_factory, data):
    # force at least two clusters
    labels = {row[0] for row in data}
    if len(labels) < 2:
        data = data + [("zz", 0.125, -3.5)]
    path = tmp_path_factory.mktemp("rt") / "data.csv"
    lines = ["cid,y,x1"] + [f"{cid},{y!r},{x!r}" for cid, y, x in data]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    ds = load_csv(path, "cid", "y", ["x1"])
    out = path.parent / "again.csv"
    to_csv(ds, out, cluster_col="cid", y_col="y", x_cols=["x1"])
    again = load_csv(out, "cid", "y", ["x1"])
    assert again.cluster_ids == ds.cluster_ids
    for c1, c2 in zip(ds.clusters, again.clusters):
        np.testing.assert_array_equal(c1.X, c2.X)
        np.testing.assert_array_equal(c1.Y, c2.Y)


def test_grouping_permutation_stable(tmp_path, rng):
    rows = []
    for cid in ("a", "b", "c"):
        for _ in range(4):
            rows.append((cid, rng.normal(), rng.normal()))
    path = _write(tmp_path, "cid,y,x1\n" + "\n".join(f"{c},{y!r},{x!r}" for c, y, x in rows) + "\n")
    ds1 = load_csv(path, "cid", "y", ["x1"])
    perm = rng.permutation(len(rows))
    shuffled = [rows[i] for i in perm]
    path2 = _write(tmp_path, "cid,y,x1\n" + "\n".join(f"{c},{y!r},{x!r}" for c, y, x in shuffled) + "\n", name="shuf.csv")
    ds2 = load_csv(path2, "cid", "y", ["x1"])
    for cid in ("a", "b", "c"):
        block1 = next(c for c in ds1.clusters if c.id == cid)
        block2 = next(c for c in ds2.clusters if c.id == cid)
        rows1 = sorted(map(tuple, np.column_stack([block1.Y, block1.X])))
        rows2 = sorted(map(tuple, np.column_stack([block2.Y, block2.X])))
        assert rows1 == rows2


def test_dataset_arrays_immutable(small_ds):
    with pytest.raises(ValueError):
        small_ds.clusters[0].X[0, 0] = 99.0
    with pytest.raises(ValueError):
        small_ds.clusters[0].Y[0] = 99.0
