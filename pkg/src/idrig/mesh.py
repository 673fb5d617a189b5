"""Uniform grids on [0, l] x T^(n-1), fields, derivatives, quadrature.

The s axis carries both interval endpoints (N_s nodes, spacing l/(N_s - 1));
leaf axes are periodic with the right endpoint identified (N_i nodes, spacing
L_i/N_i).  Field data is stored with component axes first and grid axes last,
so einsum contractions broadcast over the grid.

Derivative schemes: "fd2" and "fd4" work on every axis (one-sided stencils of
matching order at s = 0 and s = l), "spectral" works on periodic axes only.
The default pairing is fd4 along s and spectral along the leaves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import exprlang


class MeshError(ValueError):
    pass


# --- grids -------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform tensor-product grid; axis 0 may be the non-periodic s axis."""

    names: tuple
    counts: tuple
    lengths: tuple
    periodic: tuple

    def __post_init__(self):
        if not (1 <= self.ndim <= 4):
            raise MeshError(f"grid dimension {self.ndim} outside 1..4")
        for name, count, length, per in zip(self.names, self.counts, self.lengths,
                                            self.periodic):
            if count < 8:
                raise MeshError(f"axis {name} has {count} < 8 nodes")
            if per and count % 2 != 0:
                raise MeshError(f"periodic axis {name} needs an even node count")
            if not length > 0:
                raise MeshError(f"axis {name} has nonpositive length {length}")

    @staticmethod
    def product(ell, n_s, leaf_counts, leaf_lengths):
        """Grid for [0, ell] x T^(n-1) with torus circumferences leaf_lengths."""
        leaf_counts = tuple(int(c) for c in leaf_counts)
        leaf_lengths = tuple(float(length) for length in leaf_lengths)
        if len(leaf_counts) != len(leaf_lengths):
            raise MeshError("leaf counts and lengths differ in length")
        n = 1 + len(leaf_counts)
        if not (2 <= n <= 4):
            raise MeshError(f"total dimension {n} outside 2..4")
        names = ("s",) + tuple(f"x{i}" for i in range(1, n))
        return Grid(names, (int(n_s),) + leaf_counts, (float(ell),) + leaf_lengths,
                    (False,) + (True,) * (n - 1))

    @staticmethod
    def torus(counts, lengths, names=None):
        counts = tuple(int(c) for c in counts)
        lengths = tuple(float(length) for length in lengths)
        if names is None:
            names = tuple(f"x{i}" for i in range(1, len(counts) + 1))
        return Grid(tuple(names), counts, lengths, (True,) * len(counts))

    @property
    def ndim(self):
        return len(self.counts)

    @property
    def shape(self):
        return self.counts

    @property
    def spacing(self):
        return tuple(
            length / (count if per else count - 1)
            for length, count, per in zip(self.lengths, self.counts, self.periodic)
        )

    def axis_coords(self, i):
        h = self.spacing[i]
        return np.arange(self.counts[i]) * h

    def coord_env(self):
        """Sparse broadcastable coordinate arrays keyed by axis name."""
        axes = [self.axis_coords(i) for i in range(self.ndim)]
        mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
        return dict(zip(self.names, mesh))

    def leaf(self):
        """The leaf torus of a product grid."""
        if self.periodic[0]:
            raise MeshError("grid has no s axis")
        return Grid(self.names[1:], self.counts[1:], self.lengths[1:], self.periodic[1:])

    @property
    def ell(self):
        if self.periodic[0]:
            raise MeshError("grid has no s axis")
        return self.lengths[0]


# --- derivative schemes --------------------------------------------------------


@dataclass(frozen=True)
class Scheme:
    """Derivative scheme per axis class: s in {fd2, fd4}, leaf adds spectral."""

    s: str = "fd4"
    leaf: str = "spectral"

    def __post_init__(self):
        if self.s not in ("fd2", "fd4"):
            raise MeshError(f"s scheme {self.s!r} not in fd2, fd4")
        if self.leaf not in ("fd2", "fd4", "spectral"):
            raise MeshError(f"leaf scheme {self.leaf!r} not in fd2, fd4, spectral")

    def for_axis(self, grid, i):
        return self.leaf if grid.periodic[i] else self.s


DEFAULT_SCHEME = Scheme()


@lru_cache(maxsize=64)
def _wavenumbers(count, spacing):
    k = 2.0 * np.pi * np.fft.fftfreq(count, d=spacing)
    if count % 2 == 0:
        k[count // 2] = 0.0  # drop the unpaired Nyquist mode from first derivatives
    return k


def _spectral_axis(data, axis, count, spacing):
    k = _wavenumbers(count, spacing)
    shape = [1] * data.ndim
    shape[axis] = count
    fk = np.fft.fft(data, axis=axis)
    return np.real(np.fft.ifft(1j * k.reshape(shape) * fk, axis=axis))


def _fd4_periodic(data, axis, h):
    r = lambda k: np.roll(data, k, axis=axis)
    return (r(2) - 8.0 * r(1) + 8.0 * r(-1) - r(-2)) / (12.0 * h)


def _fd2_periodic(data, axis, h):
    return (np.roll(data, -1, axis=axis) - np.roll(data, 1, axis=axis)) / (2.0 * h)


def _fd4_interval(data, axis, h):
    d = np.moveaxis(data, axis, 0)
    out = np.empty_like(d)
    out[2:-2] = (d[:-4] - 8.0 * d[1:-3] + 8.0 * d[3:-1] - d[4:]) / (12.0 * h)
    out[0] = (-25.0 * d[0] + 48.0 * d[1] - 36.0 * d[2] + 16.0 * d[3] - 3.0 * d[4]) / (12.0 * h)
    out[1] = (-3.0 * d[0] - 10.0 * d[1] + 18.0 * d[2] - 6.0 * d[3] + d[4]) / (12.0 * h)
    out[-2] = (3.0 * d[-1] + 10.0 * d[-2] - 18.0 * d[-3] + 6.0 * d[-4] - d[-5]) / (12.0 * h)
    out[-1] = (25.0 * d[-1] - 48.0 * d[-2] + 36.0 * d[-3] - 16.0 * d[-4] + 3.0 * d[-5]) / (12.0 * h)
    return np.moveaxis(out, 0, axis)


def partial(data, grid, axis, scheme=DEFAULT_SCHEME):
    """d(data)/d(coordinate of grid axis `axis`), componentwise.

    `data` has the grid axes last; leading axes are tensor components.
    """
    data = np.asarray(data, dtype=float)
    arr_axis = data.ndim - grid.ndim + axis
    h = grid.spacing[axis]
    method = scheme.for_axis(grid, axis)
    if method == "spectral":
        if not grid.periodic[axis]:
            raise MeshError("spectral derivative requires a periodic axis")
        return _spectral_axis(data, arr_axis, grid.counts[axis], h)
    if grid.periodic[axis]:
        if method == "fd4":
            return _fd4_periodic(data, arr_axis, h)
        return _fd2_periodic(data, arr_axis, h)
    if method == "fd4":
        return _fd4_interval(data, arr_axis, h)
    return np.gradient(data, h, axis=arr_axis, edge_order=2)


def partial_stack(data, grid, scheme=DEFAULT_SCHEME):
    """All coordinate derivatives, stacked along a new leading axis."""
    return np.stack([partial(data, grid, i, scheme) for i in range(grid.ndim)])


# --- fields --------------------------------------------------------------------

# kind -> (component rank, symmetric, antisymmetric)
FIELD_KINDS = {
    "scalar": (0, False, False),
    "vector": (1, False, False),
    "covector": (1, False, False),
    "sym2": (2, True, False),
    "gen2": (2, False, False),
    "form2": (2, False, True),
    "cov3": (3, False, False),
}


def _ensure_finite(data, what):
    if not np.all(np.isfinite(data)):
        raise MeshError(f"{what} contains NaN or Inf")


@dataclass(frozen=True)
class Field:
    """Tensor component data over a grid; component axes first, grid axes last."""

    grid: Grid
    kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise MeshError(f"unknown field kind {self.kind!r}")
        rank, sym, asym = FIELD_KINDS[self.kind]
        n = self.grid.ndim
        want = (n,) * rank + self.grid.shape
        data = np.asarray(self.data, dtype=float)
        if data.shape != want:
            raise MeshError(f"{self.kind} field shape {data.shape}, expected {want}")
        _ensure_finite(data, f"{self.kind} field")
        if sym or asym:
            t = np.swapaxes(data, 0, 1)
            mirror = t if sym else -t
            scale = 1.0 + np.max(np.abs(data))
            if np.max(np.abs(data - mirror)) > 1e-12 * scale:
                word = "symmetric" if sym else "antisymmetric"
                raise MeshError(f"{self.kind} field is not {word}")
        object.__setattr__(self, "data", data)

    @property
    def rank(self):
        return FIELD_KINDS[self.kind][0]

    def partial(self, axis, scheme=DEFAULT_SCHEME):
        """Componentwise coordinate derivative (not covariant)."""
        return partial(self.data, self.grid, axis, scheme)

    def max_norm(self):
        return float(np.max(np.abs(self.data)))

    def __add__(self, other):
        self._check_compat(other)
        return Field(self.grid, self.kind, self.data + other.data)

    def __sub__(self, other):
        self._check_compat(other)
        return Field(self.grid, self.kind, self.data - other.data)

    def __neg__(self):
        return Field(self.grid, self.kind, -self.data)

    def scaled(self, factor):
        """Multiply by a constant or a scalar-field data array."""
        return Field(self.grid, self.kind, self.data * np.asarray(factor))

    def _check_compat(self, other):
        if self.grid != other.grid or self.kind != other.kind:
            raise MeshError("field mismatch in arithmetic")


def scalar_field(grid, data):
    return Field(grid, "scalar", np.broadcast_to(np.asarray(data, dtype=float), grid.shape).copy())


def sample(grid, source, kind="scalar"):
    """Sample an expression (string, AST, or nested sequence of them).

    For tensor kinds, `source` is a nested sequence matching the component
    shape, e.g. [["phi^2", "0"], ["0", "1"]] for a sym2 field on a 2d grid.
    """
    rank = FIELD_KINDS[kind][0]
    env = grid.coord_env()

    def one(expr_like):
        expr = exprlang.parse(expr_like) if isinstance(expr_like, str) else expr_like
        vals = exprlang.evaluate(expr, env)
        return np.broadcast_to(np.asarray(vals, dtype=float), grid.shape).copy()

    if rank == 0:
        return Field(grid, kind, one(source))
    n = grid.ndim
    comp = np.empty((n,) * rank + grid.shape)
    for idx in np.ndindex(*(n,) * rank):
        entry = source
        for i in idx:
            try:
                entry = entry[i]
            except (IndexError, KeyError, TypeError):
                raise MeshError(
                    f"{kind} source needs a full {'x'.join([str(n)] * rank)} nest")
        comp[idx] = one(entry)
    return Field(grid, kind, comp)


def leaf_index(grid, tau):
    """Nearest s-axis node index for leaf coordinate tau."""
    h = grid.spacing[0]
    idx = int(round(float(tau) / h))
    if not (0 <= idx < grid.counts[0]):
        raise MeshError(f"leaf coordinate {tau} outside [0, {grid.ell}]")
    return idx


def leaf_values(field, tau_idx):
    """Slice all components of a product-grid field at one s node."""
    rank = field.rank
    return field.data[(slice(None),) * rank + (tau_idx,)]


def leaf_block(field, tau_idx):
    """Leaf-tangential component block at one s node, as a leaf-grid field."""
    vals = leaf_values(field, tau_idx)
    rank = field.rank
    block = vals[(slice(1, None),) * rank]
    kind = field.kind
    return Field(field.grid.leaf(), kind, block)


# --- quadrature and inner products ----------------------------------------------


def integrate(values, grid):
    """Rectangle rule integral over a fully periodic grid (exact for trig polys)."""
    if not all(grid.periodic):
        raise MeshError("integrate expects a torus grid")
    cell = float(np.prod(grid.spacing))
    axes = tuple(range(-grid.ndim, 0))
    return np.sum(np.asarray(values, dtype=float), axis=axes) * cell


def integrate_leaf(values, leaf_grid, density=None):
    """Integral of scalar leaf values against an optional volume density."""
    vals = np.asarray(values, dtype=float)
    if density is not None:
        vals = vals * np.asarray(density, dtype=float)
    return float(integrate(vals, leaf_grid))


_FORM_WEIGHT = {"scalar": 1.0, "covector": 1.0, "form2": 0.5}


def pointwise_inner(a, b, ginv):
    """Pointwise metric inner product of two same-kind covariant fields.

    p-forms carry the 1/p! weight so that the codifferential is the exact
    L2 adjoint of the exterior derivative.
    """
    if a.kind != b.kind:
        raise MeshError("inner product needs matching kinds")
    rank = a.rank
    if rank == 0:
        return a.data * b.data
    ginv = np.asarray(ginv, dtype=float)
    if rank == 1:
        raised = np.einsum("ab...,b...->a...", ginv, b.data)
        out = np.einsum("a...,a...->...", a.data, raised)
    elif rank == 2:
        raised = np.einsum("ac...,bd...,cd...->ab...", ginv, ginv, b.data)
        out = np.einsum("ab...,ab...->...", a.data, raised)
    else:
        raise MeshError(f"no inner product for rank {rank}")
    return out * _FORM_WEIGHT.get(a.kind, 1.0)


def l2_inner(a, b, ginv, density=None):
    """L2 inner product of two leaf fields; ginv constant matrix or field data."""
    grid = a.grid
    vals = pointwise_inner(a, b, ginv)
    if density is None:
        return float(integrate(vals, grid))
    return integrate_leaf(vals, grid, density)


def l2_norm(a, ginv, density=None):
    return float(np.sqrt(max(l2_inner(a, a, ginv, density), 0.0)))


# --- CSV dump --------------------------------------------------------------------


def dump_field_csv(field, path):
    """Write a field as CSV: one row per node and component.

    Columns are the grid coordinates, a component label ("comp" for scalars,
    "comp_<i>_<j>" style for tensors), and the value with 17 significant
    digits.  Nodes run row-major; components cycle fastest.
    """
    grid = field.grid
    rank = field.rank
    n = grid.ndim
    axes = [grid.axis_coords(i) for i in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(grid.names) + ["comp", "value"])
        for node in np.ndindex(*grid.shape):
            coords = [format(axes[i][node[i]], ".17g") for i in range(n)]
            if rank == 0:
                writer.writerow(coords + ["comp", format(field.data[node], ".17g")])
                continue
            for cidx in np.ndindex(*(n,) * rank):
                label = "comp_" + "_".join(str(i) for i in cidx)
                writer.writerow(coords + [label, format(field.data[cidx + node], ".17g")])


# --- convergence helper -----------------------------------------------------------


def fit_order(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if np.any(errors <= 0.0):
        raise MeshError("fit_order needs positive errors")
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
