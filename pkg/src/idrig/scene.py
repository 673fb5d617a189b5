"""Scene files: INI-style description of one grid plus one data source.

A scene selects everything a batch run needs::

    [grid]
    ell = 1.0
    n_s = 21
    leaf_counts = 24, 24
    leaf_lengths = 1.0, 1.0

    [data]
    phi = 1 + 0.1*sin(2*pi*x1)
    # leaf_metric = 1, 0; 0, 1        (optional; rows split on ';')
    # k = recipe | explicit           (explicit reads k_0_0, k_0_1, ...)

    [tolerances]
    default = 1e-8
    # any residual key may be overridden by name

    [scheme]
    s = fd4
    leaf = spectral

The alternative data source is a wave profile::

    [data]
    ppwave_f = 1 + 0.2*sin(2*pi*x1)
    hypersurface = 0                  # graph v = w(s); enables induction

Exactly one of `phi` and `ppwave_f` must be present.  Every expression is
parsed at load time so malformed scenes fail before any computation.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, replace

from . import exprlang
from .mesh import Grid, MeshError, Scheme


class SceneError(Exception):
    """Scene file missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class Scene:
    path: str
    digest: str
    ell: float
    n_s: int
    leaf_counts: tuple
    leaf_lengths: tuple
    scheme: Scheme
    source: str                 # "recipe" | "explicit" | "ppwave"
    phi: str = None
    leaf_metric: tuple = None   # rows of entry strings, or None for identity
    k_entries: tuple = None     # n x n strings when source == "explicit"
    f: str = None
    hypersurface: str = None    # graph expression, or None when absent
    tolerances: tuple = ()      # sorted (key, value) pairs

    @property
    def n(self):
        return 1 + len(self.leaf_counts)

    def grid(self, n_s=None):
        return Grid.product(self.ell, self.n_s if n_s is None else n_s,
                            self.leaf_counts, self.leaf_lengths)

    def tolerance(self, key, fallback=1e-8):
        tols = dict(self.tolerances)
        return float(tols.get(key, tols.get("default", fallback)))

    def override_tolerance(self, value):
        tols = dict(self.tolerances)
        tols["default"] = float(value)
        return replace(self, tolerances=tuple(sorted(tols.items())))

    def override_scheme(self, s=None, leaf=None):
        return replace(self, scheme=Scheme(s or self.scheme.s,
                                           leaf or self.scheme.leaf))


def _parse_expr(text, where):
    try:
        exprlang.parse(text)
    except exprlang.ExprError as exc:
        raise SceneError(f"{where}: {exc}") from exc
    return text.strip()


def _split_list(text):
    return [part.strip() for part in text.split(",") if part.strip()]


def parse_scene(path):
    """Read and validate a scene file; raises SceneError on any defect."""
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#",))
    try:
        with open(path, "r") as fh:
            raw = fh.read()
    except OSError as exc:
        raise SceneError(f"cannot read scene {path}: {exc}") from exc
    try:
        parser.read_string(raw, source=path)
    except configparser.Error as exc:
        raise SceneError(f"scene syntax: {exc}") from exc
    digest = hashlib.sha256(raw.encode()).hexdigest()

    if not parser.has_section("grid"):
        raise SceneError("scene needs a [grid] section")
    grid_sec = parser["grid"]
    try:
        ell = float(grid_sec.get("ell", "1.0"))
        n_s = int(grid_sec.get("n_s"))
        leaf_counts = tuple(int(v) for v in _split_list(grid_sec.get("leaf_counts", "")))
        leaf_lengths = tuple(float(v) for v in _split_list(grid_sec.get("leaf_lengths", "")))
    except (TypeError, ValueError) as exc:
        raise SceneError(f"[grid] values: {exc}") from exc
    if len(leaf_counts) != len(leaf_lengths):
        raise SceneError("[grid] leaf_counts and leaf_lengths differ in length")
    n = 1 + len(leaf_counts)
    if grid_sec.get("n") is not None and int(grid_sec["n"]) != n:
        raise SceneError(f"[grid] declares n = {grid_sec['n']} but leaves imply {n}")

    scheme_sec = parser["scheme"] if parser.has_section("scheme") else {}
    try:
        scheme = Scheme(scheme_sec.get("s", "fd4"), scheme_sec.get("leaf", "spectral"))
    except MeshError as exc:
        raise SceneError(f"[scheme]: {exc}") from exc

    tols = {}
    if parser.has_section("tolerances"):
        for key, value in parser["tolerances"].items():
            try:
                tols[key] = float(value)
            except ValueError as exc:
                raise SceneError(f"[tolerances] {key}: {exc}") from exc

    if not parser.has_section("data"):
        raise SceneError("scene needs a [data] section")
    data = parser["data"]
    has_phi = data.get("phi") is not None
    has_wave = data.get("ppwave_f") is not None
    if has_phi == has_wave:
        raise SceneError("[data] must define exactly one of phi and ppwave_f")

    common = dict(path=str(path), digest=digest, ell=ell, n_s=n_s,
                  leaf_counts=leaf_counts, leaf_lengths=leaf_lengths,
                  scheme=scheme, tolerances=tuple(sorted(tols.items())))

    if has_wave:
        f = _parse_expr(data["ppwave_f"], "[data] ppwave_f")
        hyper = data.get("hypersurface")
        if hyper is not None:
            hyper = _parse_expr(hyper, "[data] hypersurface")
        return Scene(source="ppwave", f=f, hypersurface=hyper, **common)

    phi = _parse_expr(data["phi"], "[data] phi")
    leaf_metric = None
    if data.get("leaf_metric") is not None:
        rows = [r for r in data["leaf_metric"].split(";") if r.strip()]
        leaf_metric = tuple(
            tuple(_parse_expr(e, "[data] leaf_metric") for e in _split_list(row))
            for row in rows)
        if len(leaf_metric) != n - 1 or any(len(r) != n - 1 for r in leaf_metric):
            raise SceneError(f"[data] leaf_metric must be {n-1} x {n-1}")
    kind = data.get("k", "recipe").strip()
    if kind == "recipe":
        return Scene(source="recipe", phi=phi, leaf_metric=leaf_metric, **common)
    if kind != "explicit":
        raise SceneError(f"[data] k must be 'recipe' or 'explicit', got {kind!r}")
    entries = [["0"] * n for _ in range(n)]
    seen = set()
    for key in data:
        if not key.startswith("k_") or key == "k":
            continue
        parts = key.split("_")
        try:
            a, b = int(parts[1]), int(parts[2])
        except (IndexError, ValueError) as exc:
            raise SceneError(f"[data] bad k entry key {key!r}") from exc
        if not (0 <= a < n and 0 <= b < n):
            raise SceneError(f"[data] k entry {key} outside 0..{n-1}")
        entries[a][b] = _parse_expr(data[key], f"[data] {key}")
        seen.add((a, b))
    for a in range(n):
        for b in range(n):
            if (a, b) not in seen and (b, a) in seen:
                entries[a][b] = entries[b][a]
    return Scene(source="explicit", phi=phi, leaf_metric=leaf_metric,
                 k_entries=tuple(tuple(r) for r in entries), **common)


def scene_initial_data(scene, n_s=None):
    """Build the scene's data set, optionally on a refined s axis."""
    import numpy as np

    from . import killing_dev
    from .initial_data import InitialDataSet
    from .rigidity import rigid_recipe

    grid = scene.grid(n_s)
    lm = scene.leaf_metric if scene.leaf_metric is not None else np.eye(scene.n - 1)
    if scene.source == "recipe":
        return rigid_recipe(grid, scene.phi, lm, scene.scheme)
    if scene.source == "explicit":
        return InitialDataSet.product(grid, scene.phi, lm,
                                      _sample_k(grid, scene.k_entries), scene.scheme)
    spec = killing_dev.ppwave(grid, scene.f, scene.scheme)
    return killing_dev.induce_from_ppwave(spec, scene.hypersurface or "0")


def _sample_k(grid, entries):
    from .mesh import sample
    return sample(grid, [list(row) for row in entries], kind="sym2")


def scene_ppwave(scene, n_s=None):
    from . import killing_dev
    if scene.source != "ppwave":
        raise SceneError("scene has no wave profile")
    return killing_dev.ppwave(scene.grid(n_s), scene.f, scene.scheme)
