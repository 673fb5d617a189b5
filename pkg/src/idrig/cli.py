"""Batch command line: evaluate a scene file, emit a JSON report, exit by verdict.

Commands
    constraints   energy/momentum densities and the energy-condition margin
    rigidity      full residual report for the parallel-section identities
    killing-dev   development Einstein frame table, pattern and energy scan
    ppwave        closed-form wave checks, plus induction round trip if the
                  scene names a hypersurface
    convergence   re-run one named residual at {N, 2N, 4N} s-resolutions and
                  fit the observed order against actual spacings

Exit codes: 0 all verdicts pass, 1 a verdict fails, 2 scene parse/validation
error, 3 numerical failure (non-finite values, solver breakdown).  Reports are
deterministic for fixed scene and flags except the single `volatile` field.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from datetime import datetime, timezone

import numpy as np

from . import killing_dev as kdm
from . import rigidity
from .exprlang import ExprError
from .initial_data import ambient_residual_norm, constraints, dec_margin
from .mesh import Field, MeshError, dump_field_csv, fit_order
from .scene import Scene, SceneError, parse_scene, scene_initial_data, scene_ppwave

# residual keys that are reported but never judged against a tolerance
INFORMATIONAL = {"rho_max", "dec_margin_min", "sigma", "order"}

# built-in tolerance defaults for keys with a stricter contract than 1e-8
STRICT_DEFAULTS = {"parallel_kv_max": 1e-11}


def _tol(scene, key):
    return scene.tolerance(key, STRICT_DEFAULTS.get(key, 1e-8))


def _judge(scene, residuals, lower_bounded=("dec_margin_min",)):
    """Verdict per residual: |value| <= tol, or value >= -tol for margins."""
    verdicts = {}
    tols = {}
    for key, value in residuals.items():
        if key in INFORMATIONAL and key not in lower_bounded:
            continue
        tol = _tol(scene, key)
        tols[key] = tol
        if key in lower_bounded:
            verdicts[key] = bool(value >= -tol)
        else:
            verdicts[key] = bool(abs(value) <= tol)
    return verdicts, tols


def cmd_constraints(scene, args):
    ids = scene_initial_data(scene)
    rho, j = constraints(ids)
    margin = dec_margin(ids, rho, j)
    jnorm = np.sqrt(np.maximum(ids.metric.norm2_covector(j.data), 0.0))
    residuals = {
        "rho_max": float(np.max(np.abs(rho.data))),
        "j_norm_max": float(np.max(jnorm)),
        "dec_margin_min": float(np.min(margin.data)),
    }
    verdicts = {"dec_margin_min": bool(
        residuals["dec_margin_min"] >= -_tol(scene, "dec"))}
    tols = {"dec_margin_min": _tol(scene, "dec")}
    fields = {"rho": rho, "dec_margin": margin, "j": j}
    return residuals, verdicts, tols, fields


def cmd_rigidity(scene, args):
    ids = scene_initial_data(scene)
    residuals = rigidity.rigid_report(ids)
    verdicts, tols = _judge(scene, residuals, lower_bounded=())
    fields = {"lambda": rigidity.lambda_form(ids),
              "theta_plus": rigidity.theta_plus_field(ids)}
    return residuals, verdicts, tols, fields


def cmd_killing_dev(scene, args):
    ids = scene_initial_data(scene)
    if scene.source == "ppwave":
        section = kdm.restricted_killing_section(ids)
    else:
        section = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        kd = kdm.build_kd(ids, section)
    table = kdm.kd_einstein(kd)
    residuals = dict(kdm.kd_pattern_residuals(kd, table))
    sigma = residuals.pop("sigma")
    g = ids.metric
    residuals["section_lightlike_max"] = float(np.max(np.abs(
        -kd.section.a**2 + g.norm2_vector(kd.section.x))))
    residuals["section_parallel_max"] = float(np.max(
        ambient_residual_norm(ids, kd.section)))
    dec = kdm.kd_dec_check(kd, count=args.directions, table=table)
    residuals["dec_margin_min"] = dec.minimum
    verdicts, tols = _judge(scene, residuals)
    report_extra = {"sigma": sigma,
                    "dec_argmin_coords": list(dec.coords),
                    "dec_direction_count": dec.direction_count}
    fields = {"frame_table": table}
    return residuals, verdicts, tols, fields, report_extra


def cmd_ppwave(scene, args):
    spec = scene_ppwave(scene)
    rep = kdm.ppwave_einstein_check(spec)
    residuals = {
        "formula_residual_max": rep.formula_residual_max,
        "off_component_max": rep.off_component_max,
        "scal_max": rep.scal_max,
        "parallel_kv_max": rep.parallel_kv_max,
        "dec_margin_min": rep.dec_margin_min,
    }
    fields = {"ein_ss": Field(spec.grid, "scalar", rep.einstein[1, 1])}
    if scene.hypersurface is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rt = kdm.kd_roundtrip(spec, scene.hypersurface)
            ids = kdm.induce_from_ppwave(spec, scene.hypersurface)
        rho, j = constraints(ids)
        jnorm = np.sqrt(np.maximum(ids.metric.norm2_covector(j.data), 0.0))
        residuals.update({f"roundtrip_{k}": v for k, v in rt.items()})
        residuals["marginal_modulus_max"] = float(np.max(np.abs(
            jnorm - np.abs(rho.data))))
    verdicts, tols = _judge(scene, residuals, lower_bounded=())
    return residuals, verdicts, tols, fields


CONVERGENCE_CHECKS = {
    "parallel_s": lambda scene, n_s: rigidity.parallel_residuals(
        scene_initial_data(scene, n_s))["s"],
    "lambda": lambda scene, n_s: rigidity.lambda_form(
        scene_initial_data(scene, n_s)).max_norm(),
    "d_phi_lambda": lambda scene, n_s: _mid_leaf(
        scene, n_s, lambda ids, tau: rigidity.closedness_residual(
            ids, tau)[0].max_norm()),
    "two_for_three": lambda scene, n_s: _mid_leaf(
        scene, n_s, lambda ids, tau: rigidity.two_for_three_residual(
            ids, tau).residual.max_norm()),
    "variation": lambda scene, n_s: _mid_leaf(
        scene, n_s, lambda ids, tau: rigidity.variation_residual(
            ids, tau).residual.max_norm()),
    "ppwave_formula": lambda scene, n_s: kdm.ppwave_einstein_check(
        scene_ppwave(scene, n_s)).formula_residual_max,
}

CONVERGENCE_FLOOR = 1e-13


def _mid_leaf(scene, n_s, fn):
    ids = scene_initial_data(scene, n_s)
    tau = 0.5 * scene.ell
    return fn(ids, tau)


def cmd_convergence(scene, args):
    fn = CONVERGENCE_CHECKS[args.check]
    levels = [scene.n_s, 2 * scene.n_s, 4 * scene.n_s]
    errors = []
    hs = []
    residuals = {}
    for n_s in levels:
        err = float(fn(scene, n_s))
        errors.append(err)
        hs.append(scene.ell / (n_s - 1))
        residuals[f"err_n{n_s}"] = err
    floor_hit = max(errors) < CONVERGENCE_FLOOR
    if floor_hit:
        order = None
    else:
        order = fit_order(hs, [max(e, 1e-300) for e in errors])
        residuals["order"] = order
    threshold = scene.tolerance("order", 3.5)
    verdicts = {"order": bool(floor_hit or order >= threshold)}
    tols = {"order": threshold}
    extra = {"check": args.check, "levels": levels, "floor_hit": floor_hit}
    return residuals, verdicts, tols, {}, extra


COMMANDS = {
    "constraints": cmd_constraints,
    "rigidity": cmd_rigidity,
    "killing-dev": cmd_killing_dev,
    "ppwave": cmd_ppwave,
    "convergence": cmd_convergence,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="idrig",
        description="residual checks for product initial data and their developments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("scene", help="scene file path")
    parser.add_argument("--out", help="write the JSON report here instead of stdout")
    parser.add_argument("--dump-fields", metavar="DIR",
                        help="write field CSVs into this directory")
    parser.add_argument("--tol", type=float,
                        help="override the scene's default tolerance")
    parser.add_argument("--scheme-s", choices=["fd2", "fd4"],
                        help="override the s-axis derivative scheme")
    parser.add_argument("--scheme-leaf", choices=["fd2", "fd4", "spectral"],
                        help="override the leaf derivative scheme")
    parser.add_argument("--check", help="convergence: which residual to refine")
    parser.add_argument("--directions", type=int, default=64,
                        help="direction count for the energy-condition scan")
    return parser


def _dump_fields(fields, directory):
    os.makedirs(directory, exist_ok=True)
    for name, obj in fields.items():
        path = os.path.join(directory, f"{name}.csv")
        if isinstance(obj, kdm.FrameEinstein):
            kdm.dump_frame_table_csv(obj, path)
        else:
            dump_field_csv(obj, path)


def main(argv=None):
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        scene = parse_scene(args.scene)
        if args.tol is not None:
            scene = scene.override_tolerance(args.tol)
        if args.scheme_s or args.scheme_leaf:
            scene = scene.override_scheme(args.scheme_s, args.scheme_leaf)
        if args.command == "convergence":
            if not args.check:
                raise SceneError("convergence needs --check")
            if args.check not in CONVERGENCE_CHECKS:
                raise SceneError(f"unknown convergence check {args.check!r}; "
                                 f"choose from {sorted(CONVERGENCE_CHECKS)}")
        scene.grid()  # validate counts/lengths before heavy work
    except (SceneError, ExprError, MeshError) as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return 2

    try:
        outcome = COMMANDS[args.command](scene, args)
        residuals, verdicts, tols, fields = outcome[:4]
        extra = outcome[4] if len(outcome) > 4 else {}
        bad = [k for k, v in residuals.items()
               if v is not None and not np.isfinite(v)]
        if bad:
            raise MeshError(f"non-finite residuals: {bad}")
    except (MeshError, ExprError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3

    elapsed = time.perf_counter() - started
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    report = {
        "command": args.command,
        "scene": os.path.basename(args.scene),
        "digest": scene.digest,
        "grid": {"ell": scene.ell, "n_s": scene.n_s,
                 "leaf_counts": list(scene.leaf_counts),
                 "leaf_lengths": list(scene.leaf_lengths)},
        "scheme": {"s": scene.scheme.s, "leaf": scene.scheme.leaf},
        "residuals": residuals,
        "tolerances": tols,
        "verdicts": verdicts,
        "pass": all(verdicts.values()),
        "volatile": f"{stamp} runtime={elapsed:.3f}s",
    }
    report.update(extra)
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.dump_fields:
        _dump_fields(fields, args.dump_fields)
    return 0 if report["pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
