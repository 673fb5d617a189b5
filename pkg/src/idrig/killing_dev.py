"""Lorentzian development of initial data along a lightlike section.

Given data (g, k) carrying a transversal section V = u e0 + X of the
ambient bundle, the development is the stationary metric

    gbar = X^flat (x) dv + dv (x) X^flat + g

on R x M in coordinates (v, s, x^i), with dv the translation direction.
The metric is v-independent by construction, so every v-derivative is
identically zero and spacetime curvature is assembled on the M grid with
one extra analytic index (index 0 = v throughout this module).

The module also carries the closed-form plane-wave family

    gbar = -ds (x) dv - dv (x) ds + f ds^2 + delta_ij dx^i dx^j

whose Einstein tensor is (1/2)(Delta_leaf f) ds (x) ds, as an end-to-end
cross-check: data induced on a graph v = w(s) develops back into the wave
with profile f - 2 w'.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import exprlang, geometry
from .initial_data import (AmbientVector, InitialDataSet, ambient_residual_norm,
                           constraints)
from .mesh import DEFAULT_SCHEME, Field, Grid, MeshError, partial, partial_stack

# --- v-independent spacetime calculus -------------------------------------------


def dead_v_partials(data, grid, scheme=DEFAULT_SCHEME):
    """Spacetime coordinate derivatives: zero along v, grid partials on M."""
    parts = [np.zeros_like(data)]
    parts += [partial(data, grid, i, scheme) for i in range(grid.ndim)]
    return np.stack(parts)


def spacetime_inverse(gbar):
    arr = np.moveaxis(gbar, (0, 1), (-2, -1))
    det = np.linalg.det(arr)
    inv = np.linalg.inv(arr)
    return np.moveaxis(inv, (-2, -1), (0, 1)), det


def lorentz_signature_defect(gbar):
    """Number of nodes whose metric does not have exactly one negative eigenvalue."""
    arr = np.moveaxis(gbar, (0, 1), (-2, -1))
    eigs = np.linalg.eigvalsh(arr)
    negatives = np.sum(eigs < 0.0, axis=-1)
    return int(np.count_nonzero(negatives != 1))


@dataclass(frozen=True)
class SpacetimeCurvature:
    """Curvature of a v-independent Lorentzian metric over the M grid."""

    gamma: np.ndarray     # Gammabar^A_BC, index 0 = v
    ricci: np.ndarray
    scal: np.ndarray
    einstein: np.ndarray
    ginv: np.ndarray


def spacetime_curvature(gbar, grid, scheme=DEFAULT_SCHEME):
    ginv, _ = spacetime_inverse(gbar)
    dg = dead_v_partials(gbar, grid, scheme)
    gamma = geometry.christoffels_from(ginv, dg)
    dgamma = dead_v_partials(gamma, grid, scheme)
    riem_up = geometry.riemann_from(gamma, dgamma)
    ricci = geometry.ricci_from(riem_up)
    scal = np.einsum("bd...,bd...->...", ginv, ricci)
    einstein = ricci - 0.5 * scal * gbar
    return SpacetimeCurvature(gamma, ricci, scal, einstein, ginv)


# --- the development --------------------------------------------------------------


class KillingDevelopment:
    """Development metric of a data set along a transversal null section."""

    def __init__(self, ids, section, gbar, scheme=DEFAULT_SCHEME):
        self.ids = ids
        self.grid = ids.grid
        self.section = section
        self.u_flat = Field(ids.grid, "covector", -ids.metric.flat(section.x))
        self.gbar = gbar
        self.scheme = scheme
        self._curv = None

    def curvature(self):
        if self._curv is None:
            self._curv = spacetime_curvature(self.gbar, self.grid, self.scheme)
        return self._curv


def build_kd(ids, section=None, tol=1e-8):
    """Assemble the development of `ids` along `section` (default: phi^{-1}(e0+nu)).

    The section must be transversal (positive e0 coefficient) or the
    build fails; near-lightlike and near-parallel are checked against
    `tol` and only warned about, since finite differences leave residue
    even on exact data.  The assembled coordinate metric must have
    Lorentzian signature at every node.
    """
    if section is None:
        inv_phi = 1.0 / ids.phi.data
        x = np.zeros((ids.grid.ndim,) + ids.grid.shape)
        x[0] = inv_phi**2
        section = AmbientVector(ids.grid, inv_phi, x)
    if np.min(section.a) <= 0.0:
        raise MeshError("section is not transversal: e0 coefficient <= 0 at a node")
    g = ids.metric
    norm2 = -section.a**2 + g.norm2_vector(section.x)
    scale = 1.0 + float(np.max(section.a**2 + g.norm2_vector(section.x)))
    if float(np.max(np.abs(norm2))) > tol * scale:
        warnings.warn("development section is not lightlike; "
                      f"max |gbar(V,V)| = {float(np.max(np.abs(norm2))):.3e}")
    par = float(np.max(ambient_residual_norm(ids, section)))
    if par > tol:
        warnings.warn(f"development section is not parallel; max residual {par:.3e}")

    n = ids.grid.ndim
    x_flat = g.flat(section.x)
    gbar = np.zeros((n + 1, n + 1) + ids.grid.shape)
    gbar[0, 1:] = x_flat
    gbar[1:, 0] = x_flat
    gbar[1:, 1:] = g.data
    bad = lorentz_signature_defect(gbar)
    if bad:
        raise MeshError(f"development metric is not Lorentzian at {bad} nodes")
    return KillingDevelopment(ids, section, gbar, ids.scheme)


# --- orthonormal frame and the Einstein table --------------------------------------


@dataclass(frozen=True)
class FrameEinstein:
    """Einstein and Ricci components in an orthonormal frame (e0, e1.., nu)."""

    grid: Grid
    labels: tuple
    frame: np.ndarray     # frame[A] = spacetime components of frame vector A
    ein: np.ndarray       # Ein(E_A, E_B)
    ric: np.ndarray
    scal: np.ndarray
    orthonormality_defect: float

    def component(self, a, b):
        return self.ein[self.labels.index(a), self.labels.index(b)]


def _gram_schmidt_spatial(g):
    """Orthonormalize the M coordinate vectors under g, s direction first."""
    n = g.grid.ndim
    frame = np.zeros((n, n) + g.grid.shape)
    for a in range(n):
        y = np.zeros((n,) + g.grid.shape)
        y[a] = 1.0
        for b in range(a):
            proj = np.einsum("cd...,c...,d...->...", g.data, frame[b], y)
            y -= proj * frame[b]
        nrm2 = g.norm2_vector(y)
        if float(np.min(nrm2)) <= 0.0:
            raise MeshError("degenerate metric in frame construction")
        frame[a] = y / np.sqrt(nrm2)
    return frame


def kd_einstein(kd):
    """Frame components of Einstein/Ricci in (e0, e1..e_{n-1}, nu).

    e0 is the future unit normal of the v = const slices, the spatial
    frame comes from Gram-Schmidt over the coordinate vectors with the
    s direction last (so the final spatial leg is the leaf normal nu).
    """
    ids = kd.ids
    n = ids.grid.ndim
    g = ids.metric
    u_vec = -kd.section.x                      # U = -X, tangential part
    u_norm2 = g.norm2_vector(u_vec)
    if float(np.min(u_norm2)) <= 0.0:
        raise MeshError("section has vanishing tangential part; no slice normal")
    u_norm = np.sqrt(u_norm2)

    spatial = _gram_schmidt_spatial(g)          # rows: nu-hat, leaf legs
    frame = np.zeros((n + 1, n + 1) + ids.grid.shape)
    frame[0, 0] = 1.0 / u_norm                  # e0 = (d_v + U)/|U|
    frame[0, 1:] = u_vec / u_norm
    for i in range(1, n):                       # leaf legs e1..e_{n-1}
        frame[i, 1:] = spatial[i]
    frame[n, 1:] = spatial[0]                   # nu last

    gram = np.einsum("Ai...,ij...,Bj...->AB...", frame, kd.gbar, frame)
    eta = np.diag([-1.0] + [1.0] * n).reshape((n + 1, n + 1) + (1,) * ids.grid.ndim)
    defect = float(np.max(np.abs(gram - eta)))

    curv = kd.curvature()
    ein = np.einsum("Ai...,ij...,Bj...->AB...", frame, curv.einstein, frame)
    ric = np.einsum("Ai...,ij...,Bj...->AB...", frame, curv.ricci, frame)
    labels = ("e0",) + tuple(f"e{i}" for i in range(1, n)) + ("nu",)
    return FrameEinstein(ids.grid, labels, frame, ein, ric, curv.scal, defect)


def kd_pattern_residuals(kd, table=None, rho=None):
    """Deviation of the frame Einstein table from the rho-rank-one pattern.

    On data whose section is parallel the only nonzero entries are
    Ein(e0,e0) = Ein(nu,nu) = rho and Ein(e0,nu) = -sigma rho, where
    sigma is the s orientation of the section's tangential direction.
    Reports the off-pattern maximum, the leaf-leaf block maximum, the
    scalar curvature maximum and the marginal chain Ein(e0, e0 + sigma nu).
    """
    if table is None:
        table = kd_einstein(kd)
    if rho is None:
        rho = constraints(kd.ids)[0]
    n = kd.grid.ndim
    sigma = -1.0 if float(np.mean(-kd.section.x[0])) > 0.0 else 1.0
    pattern = np.zeros((n + 1, n + 1))
    pattern[0, 0] = 1.0
    pattern[n, n] = 1.0
    pattern[0, n] = pattern[n, 0] = -sigma
    expected = pattern.reshape((n + 1, n + 1) + (1,) * n) * rho.data
    off = table.ein - expected
    chain = table.ein[0, 0] + sigma * table.ein[0, n]
    return {
        "off_pattern_max": float(np.max(np.abs(off))),
        "leaf_block_max": float(np.max(np.abs(table.ein[1:n, 1:n]))),
        "marginal_chain_max": float(np.max(np.abs(chain))),
        "scal_max": float(np.max(np.abs(table.scal))),
        "orthonormality_defect": table.orthonormality_defect,
        "sigma": sigma,
    }


# --- energy condition sampling ------------------------------------------------------


def causal_direction_set(m, count=64):
    """Deterministic quasi-uniform unit vectors in R^m.

    m = 1 gives both signs, m = 2 equally spaced angles, m = 3 the
    golden-angle spiral on the sphere; higher m maps a Kronecker lattice
    through the normal quantile and normalizes.
    """
    if m < 1:
        raise MeshError("direction set needs at least one spatial dimension")
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        ang = 2.0 * math.pi * np.arange(count) / count
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if m == 3:
        idx = np.arange(count) + 0.5
        z = 1.0 - 2.0 * idx / count
        r = np.sqrt(np.maximum(1.0 - z**2, 0.0))
        ang = math.pi * (1.0 + math.sqrt(5.0)) * idx
        return np.stack([r * np.cos(ang), r * np.sin(ang), z], axis=1)
    from scipy.special import ndtri
    root = 2.0
    for _ in range(64):
        root = (1.0 + root) ** (1.0 / (m + 1))
    alphas = root ** -np.arange(1, m + 1)
    # start at i = 1: the origin of the lattice maps to the zero vector
    lattice = (0.5 + np.outer(np.arange(1, count + 1), alphas)) % 1.0
    pts = ndtri(lattice)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


@dataclass(frozen=True)
class DecReport:
    """Minimum of Ein over sampled pairs of future-causal frame vectors."""

    minimum: float
    node: tuple
    pair: tuple
    coords: tuple
    direction_count: int
    scale: float

    def holds(self, tol=1e-8):
        return self.minimum >= -tol * (1.0 + self.scale)


def frame_dec_minimum(ein_frame, grid, count=64):
    """Scan Ein(e0+d, e0+d') over null directions d from the sampled set."""
    n = ein_frame.shape[0] - 1
    dirs = causal_direction_set(n, count)
    rays = np.concatenate([np.ones((dirs.shape[0], 1)), dirs], axis=1)
    best = math.inf
    best_node = None
    best_pair = None
    for p, ray in enumerate(rays):
        contracted = np.einsum("A,AB...->B...", ray, ein_frame)
        vals = np.einsum("qA,A...->q...", rays, contracted)
        q_flat = int(np.argmin(vals))
        if vals.flat[q_flat] < best:
            best = float(vals.flat[q_flat])
            unravel = np.unravel_index(q_flat, vals.shape)
            best_pair = (p, int(unravel[0]))
            best_node = tuple(int(i) for i in unravel[1:])
    coords = tuple(float(grid.axis_coords(i)[best_node[i]]) for i in range(grid.ndim))
    scale = float(np.max(np.abs(ein_frame)))
    return DecReport(best, best_node, best_pair, coords, rays.shape[0], scale)


def kd_dec_check(kd, count=64, table=None):
    """Dominant-energy scan of the development's Einstein tensor.

    Ein is bilinear, and every future-causal vector is a nonnegative
    combination of the sampled null rays up to sampling density, so the
    minimum over ray pairs certifies (or localizes a violation of) the
    condition Ein(X, Y) >= 0 on the causal cone.
    """
    if table is None:
        table = kd_einstein(kd)
    return frame_dec_minimum(table.ein, kd.grid, count)


# --- plane-wave family --------------------------------------------------------------


@dataclass(frozen=True)
class PpWaveSpec:
    """Wave profile f(s, x) on a product grid; leaves carry the identity metric."""

    grid: Grid
    f: object
    scheme: object = DEFAULT_SCHEME


def ppwave(grid, f, scheme=DEFAULT_SCHEME):
    """Validate a profile expression and wrap it as a wave family member."""
    if grid.periodic[0]:
        raise MeshError("wave profile needs a product grid with an s axis")
    ast = exprlang.parse(f) if isinstance(f, str) else f
    lengths = dict(zip(grid.names[1:], grid.lengths[1:]))
    report = exprlang.lint_periodicity(ast, lengths)
    if report:
        raise MeshError(f"wave profile is not periodic on the leaves: {report}")
    return PpWaveSpec(grid, ast, scheme)


def ppwave_metric(spec):
    """Coordinate components of -ds dv - dv ds + f ds^2 + delta."""
    grid = spec.grid
    n = grid.ndim
    f_vals = exprlang.evaluate(spec.f, grid.coord_env())
    gbar = np.zeros((n + 1, n + 1) + grid.shape)
    gbar[0, 1] = gbar[1, 0] = -1.0
    gbar[1, 1] = np.broadcast_to(f_vals, grid.shape)
    for i in range(2, n + 1):
        gbar[i, i] = 1.0
    return gbar


def leaf_laplacian_exact(spec):
    """Geometric leaf Laplacian -sum_i d^2 f / dx_i^2 from symbolic derivatives."""
    grid = spec.grid
    env = grid.coord_env()
    total = np.zeros(grid.shape)
    for i in range(1, grid.ndim):
        second = exprlang.diff(exprlang.diff(spec.f, f"x{i}"), f"x{i}")
        total -= np.broadcast_to(exprlang.evaluate(second, env), grid.shape)
    return total


@dataclass(frozen=True)
class PpWaveReport:
    """Residuals of the wave metric against its closed-form curvature."""

    formula_residual_max: float
    off_component_max: float
    scal_max: float
    parallel_kv_max: float
    dec_margin_min: float
    einstein: np.ndarray
    expected_ss: np.ndarray

    def dec_holds(self, tol=1e-8):
        scale = 1.0 + float(np.max(np.abs(self.expected_ss)))
        return self.dec_margin_min >= -tol * scale


def ppwave_einstein_check(spec):
    """Einstein tensor of the wave versus (1/2)(Delta_leaf f) ds (x) ds.

    Also checks that the translation direction d_v is parallel (all
    Gammabar^A_{Bv} vanish) and that scalar curvature is zero.  The
    energy condition margin is the minimum of the ss component: the
    Einstein tensor is a multiple of ds (x) ds, so the condition holds
    exactly when that coefficient is nonnegative, i.e. when the profile's
    geometric leaf Laplacian is nonnegative.
    """
    grid = spec.grid
    gbar = ppwave_metric(spec)
    curv = spacetime_curvature(gbar, grid, spec.scheme)
    expected_ss = 0.5 * leaf_laplacian_exact(spec)
    ein = curv.einstein
    off = ein.copy()
    off[1, 1] = 0.0
    return PpWaveReport(
        formula_residual_max=float(np.max(np.abs(ein[1, 1] - expected_ss))),
        off_component_max=float(np.max(np.abs(off))),
        scal_max=float(np.max(np.abs(curv.scal))),
        parallel_kv_max=float(np.max(np.abs(curv.gamma[:, :, 0]))),
        dec_margin_min=float(np.min(ein[1, 1])),
        einstein=ein,
        expected_ss=expected_ss,
    )


# --- hypersurface data induction ----------------------------------------------------


def induce_from_ppwave(spec, w="0"):
    """Initial data induced on the graph v = w(s) inside the wave.

    The graph must be independent of the leaf coordinates so the induced
    metric keeps product form; it is spacelike iff f - 2 w' > 0, and then
    the induced lapse is phi = sqrt(f - 2 w') with identity leaf metric.
    The second fundamental form is computed numerically from the wave
    connection and the future unit normal of the graph.
    """
    grid = spec.grid
    n = grid.ndim
    w_ast = exprlang.parse(w) if isinstance(w, str) else w
    extra = exprlang.variables_of(w_ast) - {"s"}
    if extra:
        raise MeshError("graph must depend on s only to induce product data "
                        f"(found {sorted(extra)})")
    env = grid.coord_env()
    dw = exprlang.diff(w_ast, "s")
    phi2 = np.broadcast_to(
        exprlang.evaluate(exprlang.parse(
            f"({exprlang.unparse(spec.f)}) - 2*({exprlang.unparse(dw)})"), env),
        grid.shape).copy()
    if float(np.min(phi2)) <= 0.0:
        raise MeshError("graph is not spacelike: f - 2 dw/ds <= 0 at a node")
    phi = Field(grid, "scalar", np.sqrt(phi2))

    gbar = ppwave_metric(spec)
    curv = spacetime_curvature(gbar, grid, spec.scheme)
    dw_vals = np.broadcast_to(exprlang.evaluate(dw, env), grid.shape)

    # future unit normal from the conormal dv - w' ds
    conormal = np.zeros((n + 1,) + grid.shape)
    conormal[0] = 1.0
    conormal[1] = -dw_vals
    normal = np.einsum("AB...,B...->A...", curv.ginv, conormal)
    e0 = -normal / phi.data
    e0_v = np.einsum("A...,A...->...", gbar[0], e0)
    if float(np.max(e0_v)) >= 0.0:
        raise MeshError("graph normal is not future directed")

    tangents = np.zeros((n, n + 1) + grid.shape)
    tangents[0, 0] = dw_vals
    tangents[0, 1] = 1.0
    for i in range(1, n):
        tangents[i, i + 1] = 1.0

    de0 = dead_v_partials(e0, grid, spec.scheme)[1:]
    cov = de0 + np.einsum("BCD...,aC...,D...->aB...", curv.gamma, tangents, e0)
    k = np.einsum("BD...,bD...,aB...->ab...", gbar, tangents, cov)
    asym = float(np.max(np.abs(k - np.einsum("ab...->ba...", k))))
    if asym > 1e-6 * (1.0 + float(np.max(np.abs(k)))):
        warnings.warn(f"induced second fundamental form asymmetry {asym:.3e}")
    k = 0.5 * (k + np.einsum("ab...->ba...", k))
    return InitialDataSet.product(grid, phi, np.eye(n - 1),
                                  Field(grid, "sym2", k), spec.scheme)


def restricted_killing_section(ids):
    """Restriction of the wave's translation direction to induced data.

    Decomposing d_v along the graph gives u = 1/phi and tangential part
    -phi^{-2} d_s regardless of the graph function, so this is the
    parallel section the induced data develops along.
    """
    inv_phi = 1.0 / ids.phi.data
    x = np.zeros((ids.grid.ndim,) + ids.grid.shape)
    x[0] = -(inv_phi**2)
    return AmbientVector(ids.grid, inv_phi, x)


def kd_roundtrip(spec, w="0", tol=1e-8):
    """Induce data on a graph, develop it, compare against the shifted wave.

    The development of the induced data equals the wave with profile
    f - 2 w' in translated coordinates, so the metric and Einstein
    tensors must match componentwise.
    """
    ids = induce_from_ppwave(spec, w)
    section = restricted_killing_section(ids)
    kd = build_kd(ids, section, tol=tol)

    w_ast = exprlang.parse(w) if isinstance(w, str) else w
    dw = exprlang.diff(w_ast, "s")
    shifted = ppwave(spec.grid,
                     f"({exprlang.unparse(spec.f)}) - 2*({exprlang.unparse(dw)})",
                     spec.scheme)
    expected = ppwave_metric(shifted)
    wave_report = ppwave_einstein_check(shifted)
    kd_ein = kd.curvature().einstein
    table = kd_einstein(kd)
    wave_frame = np.einsum("Ai...,ij...,Bj...->AB...", table.frame,
                           wave_report.einstein, table.frame)
    return {
        "metric_gap_max": float(np.max(np.abs(kd.gbar - expected))),
        "einstein_gap_max": float(np.max(np.abs(kd_ein - wave_report.einstein))),
        "frame_table_gap_max": float(np.max(np.abs(table.ein - wave_frame))),
        "kd_formula_residual_max": float(np.max(np.abs(
            kd_ein[1, 1] - wave_report.expected_ss))),
        "kd_off_component_max": float(np.max(np.abs(
            kd_ein - kd_ein[1, 1] * _ss_basis(kd.grid.ndim, kd.grid.shape)))),
        "scal_max": float(np.max(np.abs(kd.curvature().scal))),
    }


def _ss_basis(n, shape):
    basis = np.zeros((n + 1, n + 1) + shape)
    basis[1, 1] = 1.0
    return basis


# --- report emission ----------------------------------------------------------------


def dump_frame_table_csv(table, path):
    """Write the frame Einstein table as CSV, one row per node and entry."""
    grid = table.grid
    n = grid.ndim
    axes = [grid.axis_coords(i) for i in range(n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(grid.names) + ["comp", "value"])
        for node in np.ndindex(*grid.shape):
            coords = [format(axes[i][node[i]], ".17g") for i in range(n)]
            for a, la in enumerate(table.labels):
                for b, lb in enumerate(table.labels):
                    writer.writerow(coords + [f"ein_{la}_{lb}",
                                              format(table.ein[(a, b) + node], ".17g")])
