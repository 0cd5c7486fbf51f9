import io

import numpy as np
import pytest

from sdidlab.panel import (
    DesignError,
    Panel,
    PanelFormatError,
    block_treatment_matrix,
    load_panel,
    load_wide,
    validate_block,
)


def make_csv(rows, header="unit,time,outcome,treated"):
    return header + "\n" + "\n".join(rows) + "\n"


def small_panel_csv():
    rows = []
    for unit in ("a", "b", "c"):
        for t in (2000, 2001, 2002):
            treated = 1 if unit == "c" and t >= 2001 else 0
            rows.append(f"{unit},{t},{hash((unit, t)) % 97 / 7.0},{treated}")
    return make_csv(rows)


def test_load_panel_shapes_and_sorting():
    panel = load_panel(io.StringIO(small_panel_csv()))
    assert panel.n_units == 3 and panel.n_periods == 3
    assert panel.unit_labels == ("a", "b", "c")
    assert panel.time_labels == (2000, 2001, 2002)
    assert panel.treatment.sum() == 2


def test_load_panel_single_cell():
    panel = load_panel(io.StringIO(make_csv(["u1,1,3.25,0"])))
    assert panel.n_units == 1 and panel.n_periods == 1
    assert panel.outcomes[0, 0] == 3.25


def test_load_panel_duplicate_cell_errors_with_line():
    text = make_csv(["u1,1,1.0,0", "u1,2,2.0,0", "u1,1,3.0,0", "u2,1,1.0,0"])
    with pytest.raises(PanelFormatError, match="line 4.*duplicate"):
        load_panel(io.StringIO(text))


def test_load_panel_unbalanced_errors():
    text = make_csv(["u1,1,1.0,0", "u1,2,2.0,0", "u2,1,1.0,0"])
    with pytest.raises(PanelFormatError, match="missing cell"):
        load_panel(io.StringIO(text))


def test_load_panel_non_numeric_outcome():
    text = make_csv(["u1,1,abc,0"])
    with pytest.raises(PanelFormatError, match="line 2.*not numeric"):
        load_panel(io.StringIO(text))


def test_load_panel_bad_treated_value():
    text = make_csv(["u1,1,1.0,2"])
    with pytest.raises(PanelFormatError, match="outside"):
        load_panel(io.StringIO(text))


def test_load_panel_missing_header():
    with pytest.raises(PanelFormatError, match="header"):
        load_panel(io.StringIO("a,b,c\n1,2,3\n"))


def test_numeric_time_labels_sort_numerically():
    rows = [f"u,{t},{float(t)},0" for t in (10, 9, 2)]
    panel = load_panel(io.StringIO(make_csv(rows)))
    assert panel.time_labels == (2, 9, 10)


def test_round_trip_bit_exact(rng):
    y = rng.normal(size=(4, 3)) * np.pi
    w = block_treatment_matrix(4, 3, 2, 1)
    panel = Panel(y, w, ("a", "b", "c", "d"), (1, 2, 3))
    text = panel.to_long_csv()
    back = load_panel(io.StringIO(text))
    assert np.array_equal(back.outcomes, panel.outcomes)
    assert np.array_equal(back.treatment, panel.treatment)
    assert back.unit_labels == panel.unit_labels


def test_load_is_row_order_invariant(rng):
    lines = small_panel_csv().splitlines()
    header, rows = lines[0], lines[1:]
    shuffled = list(rows)
    rng.shuffle(shuffled)
    a = load_panel(io.StringIO("\n".join([header] + rows)))
    b = load_panel(io.StringIO("\n".join([header] + shuffled)))
    assert np.array_equal(a.outcomes, b.outcomes)
    da, db = validate_block(a), validate_block(b)
    assert da.unit_labels == db.unit_labels
    assert np.array_equal(da.y, db.y)


def test_validate_block_basic():
    panel = load_panel(io.StringIO(small_panel_csv()))
    design = validate_block(panel)
    assert (design.n_co, design.n_tr, design.t_pre, design.t_post) == (2, 1, 1, 2)
    assert design.treated_labels == ("c",)
    assert design.y_co_pre.shape == (2, 1)
    assert design.y_tr_post.shape == (1, 2)
    # views are tied to the permuted matrix
    i = panel.unit_labels.index("c")
    assert np.array_equal(design.y[-1], panel.outcomes[i])


def test_validate_block_rejects_all_zero():
    y = np.zeros((3, 3))
    panel = Panel(y, np.zeros((3, 3), dtype=int), ("a", "b", "c"), (1, 2, 3))
    with pytest.raises(DesignError, match="no treated unit"):
        validate_block(panel)


def test_validate_block_rejects_staggered():
    w = np.zeros((3, 6), dtype=int)
    w[1, 3:] = 1
    w[2, 5:] = 1
    panel = Panel(np.zeros((3, 6)), w, ("a", "b", "c"), tuple(range(6)))
    with pytest.raises(DesignError, match="staggered.*'c'"):
        validate_block(panel)


def test_validate_block_rejects_reversal():
    w = np.zeros((2, 4), dtype=int)
    w[1] = [0, 1, 0, 1]
    panel = Panel(np.zeros((2, 4)), w, ("a", "b"), tuple(range(4)))
    with pytest.raises(DesignError, match="reverses.*'b'"):
        validate_block(panel)


def test_validate_block_rejects_no_pre_period():
    w = np.zeros((2, 3), dtype=int)
    w[1] = 1
    panel = Panel(np.zeros((2, 3)), w, ("a", "b"), (1, 2, 3))
    with pytest.raises(DesignError, match="no pre-treatment"):
        validate_block(panel)


def test_validate_block_rejects_all_treated():
    w = np.ones((2, 3), dtype=int)
    w[:, 0] = 0
    panel = Panel(np.zeros((2, 3)), w, ("a", "b"), (1, 2, 3))
    with pytest.raises(DesignError, match="no control unit"):
        validate_block(panel)


def test_wide_loader_matches_long(rng):
    y = rng.normal(size=(3, 4))
    w = block_treatment_matrix(3, 4, 1, 2)
    panel = Panel(y, w, ("x", "y", "z"), (1, 2, 3, 4))
    wide_y = "unit,1,2,3,4\n" + "\n".join(
        ",".join([u] + [repr(float(v)) for v in y[i]])
        for i, u in enumerate(("x", "y", "z"))
    )
    wide_w = "unit,1,2,3,4\n" + "\n".join(
        ",".join([u] + [str(v) for v in w[i]]) for i, u in enumerate(("x", "y", "z"))
    )
    loaded = load_wide(io.StringIO(wide_y), io.StringIO(wide_w))
    assert np.array_equal(loaded.outcomes, panel.outcomes)
    assert np.array_equal(loaded.treatment, panel.treatment)


def test_wide_loader_label_mismatch(rng):
    wide_y = "unit,1,2\nx,1.0,2.0\n"
    wide_w = "unit,1,2\nz,0,1\n"
    with pytest.raises(PanelFormatError, match="mismatched labels"):
        load_wide(io.StringIO(wide_y), io.StringIO(wide_w))


def test_panel_arrays_are_immutable():
    panel = load_panel(io.StringIO(small_panel_csv()))
    with pytest.raises(ValueError):
        panel.outcomes[0, 0] = 1.0
    design = validate_block(panel)
    with pytest.raises(ValueError):
        design.y[0, 0] = 1.0
