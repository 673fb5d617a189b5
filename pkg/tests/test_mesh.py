import csv
import math

import numpy as np
import pytest

from idrig import exprlang
from idrig.mesh import (Grid, Scheme, Field, MeshError, partial, partial_stack,
                        sample, scalar_field, leaf_index, leaf_values, leaf_block,
                        integrate, integrate_leaf, l2_inner, l2_norm,
                        dump_field_csv, fit_order, DEFAULT_SCHEME)
from helpers import CORPUS, SCHEME, sample_expr, order_passes, measured_order, grid3


# --- grid construction and validation ------------------------------------------


def test_product_grid_layout():
    g = Grid.product(2.0, 17, (8, 12), (1.0, 3.0))
    assert g.names == ("s", "x1", "x2")
    assert g.periodic == (False, True, True)
    assert g.spacing == (2.0 / 16, 1.0 / 8, 3.0 / 12)
    assert g.ell == 2.0
    assert g.axis_coords(0)[0] == 0.0 and g.axis_coords(0)[-1] == pytest.approx(2.0)
    # torus coordinates exclude the wrap-around node
    assert g.axis_coords(1)[-1] == pytest.approx(1.0 - 1.0 / 8)
    leaf = g.leaf()
    assert leaf.names == ("x1", "x2") and all(leaf.periodic)


def test_grid_validation():
    with pytest.raises(MeshError):
        Grid.product(1.0, 7, (8,), (1.0,))          # too few s nodes
    with pytest.raises(MeshError):
        Grid.product(1.0, 9, (9,), (1.0,))          # odd periodic count
    with pytest.raises(MeshError):
        Grid.product(1.0, 9, (8, 8, 8, 8), (1.0,) * 4)   # dimension > 4
    with pytest.raises(MeshError):
        Grid.product(1.0, 9, (8, 6), (1.0, 1.0))    # mixed: 6 < 8 nodes
    with pytest.raises(MeshError):
        Grid.product(1.0, 9, (8, 8), (1.0,))        # counts/lengths mismatch
    with pytest.raises(MeshError):
        Grid.product(-1.0, 9, (8,), (1.0,))


def test_scheme_validation():
    with pytest.raises(MeshError):
        Scheme("fd3", "spectral")
    with pytest.raises(MeshError):
        Scheme("fd4", "chebyshev")
    assert Scheme("fd2", "fd4").for_axis(Grid.product(1.0, 9, (8,), (1.0,)), 1) == "fd4"


# --- derivative operators ---------------------------------------------------------


@pytest.mark.parametrize("scheme,want", [("fd2", 1.9), ("fd4", 3.8)])
def test_interval_derivative_orders(scheme, want):
    for src in CORPUS:
        ast = exprlang.parse(src)
        d = exprlang.diff(ast, "s")
        errs = []
        for n_s in (17, 33, 65):
            g = Grid.product(1.0, n_s, (16,), (1.0,))
            f = sample_expr(g, ast)
            got = partial(f, g, 0, Scheme(scheme, "spectral"))
            errs.append(float(np.max(np.abs(got - sample_expr(g, d)))))
        assert order_passes([1 / 16, 1 / 32, 1 / 64], errs, want), (src, errs)


def test_spectral_derivative_is_exact_on_band_limited():
    for src in CORPUS:
        ast = exprlang.parse(src)
        d = exprlang.diff(ast, "x1")
        g = Grid.product(1.0, 9, (32,), (1.0,))
        got = partial(sample_expr(g, ast), g, 1, SCHEME)
        assert np.max(np.abs(got - sample_expr(g, d))) < 1e-11, src


def test_periodic_fd_orders():
    ast = exprlang.parse("sin(2*pi*x1) + 0.3*cos(4*pi*x1)")
    d = exprlang.diff(ast, "x1")
    for scheme, want in (("fd2", 1.9), ("fd4", 3.8)):
        errs = []
        for n in (16, 32, 64):
            g = Grid.product(1.0, 9, (n,), (1.0,))
            got = partial(sample_expr(g, ast), g, 1, Scheme("fd4", scheme))
            errs.append(float(np.max(np.abs(got - sample_expr(g, d)))))
        assert order_passes([1 / 16, 1 / 32, 1 / 64], errs, want)


def test_nyquist_mode_derivative_is_zeroed():
    g = Grid.product(1.0, 9, (16,), (1.0,))
    x = g.axis_coords(1)
    nyquist = np.cos(2 * np.pi * 8 * x)     # alternating +-1 on 16 nodes
    f = np.broadcast_to(nyquist, g.shape).copy()
    got = partial(f, g, 1, SCHEME)
    assert np.max(np.abs(got)) == 0.0


def test_partial_stack_shape_and_content():
    g = grid3(9, 16)
    f = sample_expr(g, "s^2 + sin(2*pi*x1)*cos(2*pi*x2)")
    st = partial_stack(f, g, SCHEME)
    assert st.shape == (3,) + g.shape
    for ax in range(3):
        assert np.allclose(st[ax], partial(f, g, ax, SCHEME))


# --- fields --------------------------------------------------------------------


def test_field_validation():
    g = Grid.product(1.0, 9, (8,), (1.0,))
    with pytest.raises(MeshError):
        Field(g, "spinor", np.zeros(g.shape))
    with pytest.raises(MeshError):
        Field(g, "vector", np.zeros(g.shape))       # missing component axis
    bad = np.zeros((2, 2) + g.shape)
    bad[0, 1] = 1.0
    with pytest.raises(MeshError):
        Field(g, "sym2", bad)
    with pytest.raises(MeshError):
        Field(g, "form2", np.ones((2, 2) + g.shape))
    nan = np.zeros(g.shape)
    nan[0, 0] = np.nan
    with pytest.raises(MeshError):
        Field(g, "scalar", nan)


def test_field_arithmetic():
    g = Grid.product(1.0, 9, (8,), (1.0,))
    a = scalar_field(g, np.ones(g.shape))
    b = scalar_field(g, 2 * np.ones(g.shape))
    assert (a + b).max_norm() == 3.0
    assert (a - b).max_norm() == 1.0
    assert (-b).data.min() == -2.0
    assert a.scaled(5.0).max_norm() == 5.0


def test_sample_nested_tensor():
    g = grid3(9, 8)
    f = sample(g, [["s", "0", "0"], ["0", "1", "0"], ["0", "0", "x1*0+2"]], kind="sym2")
    assert f.kind == "sym2"
    assert np.allclose(f.data[0, 0], np.broadcast_to(g.coord_env()["s"], g.shape))
    assert np.all(f.data[2, 2] == 2.0)
    with pytest.raises(MeshError):
        sample(g, [["s"]], kind="sym2")


def test_leaf_slicing():
    g = grid3(9, 8)
    assert leaf_index(g, 0.0) == 0
    assert leaf_index(g, 1.0) == 8
    assert leaf_index(g, 0.5) == 4
    with pytest.raises(MeshError):
        leaf_index(g, 2.0)
    f = sample(g, "s + x1", kind="scalar")
    vals = leaf_values(f, 4)
    assert vals.shape == g.leaf().shape
    t = sample(g, [["1", "0", "0"], ["0", "2", "0"], ["0", "0", "3"]], kind="sym2")
    blk = leaf_block(t, 4)
    assert blk.grid.ndim == 2 and blk.data.shape == (2, 2, 8, 8)
    assert blk.data[0, 0].max() == 2.0 and blk.data[1, 1].max() == 3.0


# --- quadrature ------------------------------------------------------------------


def test_integrate_exact_on_trig_polynomials():
    leaf = grid3(9, 16).leaf()
    env = leaf.coord_env()
    vals = np.broadcast_to(1.0 + np.sin(2 * np.pi * env["x1"]) * np.cos(4 * np.pi * env["x2"]),
                           leaf.shape)
    assert integrate(vals, leaf) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(MeshError):
        integrate(np.ones(grid3(9, 8).shape), grid3(9, 8))


def test_l2_inner_fourier_orthogonality():
    leaf = grid3(9, 16).leaf()
    env = leaf.coord_env()
    ginv = np.broadcast_to(np.eye(2).reshape(2, 2, 1, 1), (2, 2) + leaf.shape)
    f1 = Field(leaf, "scalar", np.broadcast_to(np.sin(2 * np.pi * env["x1"]), leaf.shape).copy())
    f2 = Field(leaf, "scalar", np.broadcast_to(np.cos(2 * np.pi * env["x1"]), leaf.shape).copy())
    assert l2_inner(f1, f2, ginv) == pytest.approx(0.0, abs=1e-15)
    assert l2_inner(f1, f1, ginv) == pytest.approx(0.5, abs=1e-14)
    assert l2_norm(f1, ginv) == pytest.approx(math.sqrt(0.5), abs=1e-14)


def test_form2_inner_counts_each_plane_once():
    leaf = grid3(9, 8).leaf()
    ginv = np.broadcast_to(np.eye(2).reshape(2, 2, 1, 1), (2, 2) + leaf.shape)
    data = np.zeros((2, 2) + leaf.shape)
    data[0, 1] = 1.0
    data[1, 0] = -1.0
    w = Field(leaf, "form2", data)
    # |dx1 ^ dx2|^2 = 1, not 2
    assert l2_inner(w, w, ginv) == pytest.approx(1.0, abs=1e-14)


# --- csv and order fitting --------------------------------------------------------


def test_dump_field_csv_round_trip(tmp_path):
    g = Grid.product(1.0, 9, (8,), (1.0,))
    f = sample(g, ["s", "x1"], kind="covector")
    path = tmp_path / "field.csv"
    dump_field_csv(f, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["s", "x1", "comp", "value"]
    assert len(rows) == 1 + 9 * 8 * 2
    # components cycle fastest; values reproduce the field bit-exactly
    assert rows[1][2] == "comp_0" and rows[2][2] == "comp_1"
    got = np.array([float(r[3]) for r in rows[1:]]).reshape(9, 8, 2)
    assert np.array_equal(np.moveaxis(got, -1, 0), f.data)


def test_fit_order_recovers_slope():
    hs = [0.1, 0.05, 0.025]
    errs = [2.0 * h**3.7 for h in hs]
    assert fit_order(hs, errs) == pytest.approx(3.7, abs=1e-12)
    with pytest.raises(MeshError):
        fit_order(hs, [1.0, 0.0, 1.0])


def test_measured_order_floor():
    order, hit = measured_order([0.1, 0.05], [1e-15, 9e-14])
    assert hit and order is None
