"""Command line: exit codes, report shape, flags, and the shipped scenes."""

import contextlib
import hashlib
import io
import json
import math
import os
import re
from pathlib import Path

import pytest

from idrig.cli import main

SCENES = Path(__file__).resolve().parents[1] / "scenes"


def run(argv):
    """Invoke the CLI in process; returns (exit code, report dict or None, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    text = out.getvalue()
    report = json.loads(text) if text.strip().startswith("{") else None
    return code, report, err.getvalue()


def test_constraints_flat_report_shape():
    code, rep, err = run(["constraints", SCENES / "flat.scene"])
    assert code == 0 and err == ""
    assert sorted(rep) == ["command", "digest", "grid", "pass", "residuals",
                           "scene", "scheme", "tolerances", "verdicts", "volatile"]
    assert rep["command"] == "constraints"
    assert rep["scene"] == "flat.scene"
    assert rep["pass"] is True
    assert rep["grid"] == {"ell": 1.0, "n_s": 16, "leaf_counts": [16, 16],
                           "leaf_lengths": [1.0, 1.0]}
    assert rep["scheme"] == {"s": "fd4", "leaf": "spectral"}
    # flat vacuum: every density is exactly zero
    assert rep["residuals"] == {"rho_max": 0.0, "j_norm_max": 0.0,
                                "dec_margin_min": 0.0}
    assert rep["verdicts"] == {"dec_margin_min": True}
    raw = (SCENES / "flat.scene").read_bytes()
    assert rep["digest"] == hashlib.sha256(raw).hexdigest()


def test_constraints_constant_trace_density():
    code, rep, _ = run(["constraints", SCENES / "constant_k.scene"])
    assert code == 0
    assert rep["residuals"]["rho_max"] == 3.0
    assert rep["residuals"]["j_norm_max"] == 0.0
    assert rep["residuals"]["dec_margin_min"] == 3.0


def test_constraints_energy_condition_failure_exits_one():
    code, rep, _ = run(["constraints", SCENES / "recipe.scene"])
    assert code == 1
    assert rep["pass"] is False
    assert rep["verdicts"] == {"dec_margin_min": False}
    # marginal data: the worst margin is -2 rho at the most negative node
    res = rep["residuals"]
    assert abs(res["dec_margin_min"] + 2 * res["rho_max"]) < 1e-10
    assert abs(res["j_norm_max"] - res["rho_max"]) < 1e-10
    assert res["rho_max"] > 4


def test_tolerance_override_flips_verdict():
    code, rep, _ = run(["constraints", SCENES / "recipe.scene", "--tol", "100"])
    assert code == 0
    assert rep["tolerances"] == {"dec_margin_min": 100.0}
    assert rep["verdicts"] == {"dec_margin_min": True}


def test_scheme_override_is_reflected():
    code, rep, _ = run(["constraints", SCENES / "flat.scene",
                        "--scheme-s", "fd2", "--scheme-leaf", "fd2"])
    assert code == 0
    assert rep["scheme"] == {"s": "fd2", "leaf": "fd2"}
    assert rep["residuals"]["rho_max"] == 0.0


def test_rigidity_recipe_passes():
    code, rep, _ = run(["rigidity", SCENES / "recipe.scene"])
    assert code == 0 and rep["pass"] is True
    res = rep["residuals"]
    # informational densities are reported but never judged
    assert res["rho_max"] > 4 and res["dec_margin_min"] < -4
    assert "rho_max" not in rep["verdicts"]
    assert "dec_margin_min" not in rep["verdicts"]
    assert sorted(rep["verdicts"]) == sorted(rep["tolerances"])
    judged = {k: res[k] for k in rep["verdicts"]}
    assert max(abs(v) for v in judged.values()) < 1e-8
    # per-leaf families at the first, middle and last s nodes (n_s = 21)
    for tag in ("leaf_000", "leaf_010", "leaf_020"):
        assert f"{tag}_two_for_three_max" in res
        assert f"{tag}_variation_cross_check_max" in res
    assert os.path.basename(rep["scene"]) == "recipe.scene"


def test_killing_dev_vacuum_scene():
    code, rep, _ = run(["killing-dev", SCENES / "vacuum_kd.scene"])
    assert code == 0 and rep["pass"] is True
    res = rep["residuals"]
    # s-only lapse: the development is exactly Ricci flat
    assert res["scal_max"] == 0.0
    assert res["leaf_block_max"] == 0.0
    assert res["dec_margin_min"] == 0.0
    assert res["off_pattern_max"] < 1e-15
    assert res["section_lightlike_max"] < 1e-14
    assert res["section_parallel_max"] < 1e-8
    assert rep["sigma"] == 1.0
    assert rep["dec_direction_count"] == 64
    assert rep["dec_argmin_coords"] == [0.0, 0.0, 0.0]


def test_killing_dev_energy_scan_flags_recipe():
    code, rep, _ = run(["killing-dev", SCENES / "recipe.scene"])
    assert code == 1
    bad = [k for k, v in rep["verdicts"].items() if not v]
    assert bad == ["dec_margin_min"]
    assert rep["residuals"]["dec_margin_min"] < -1


def test_killing_dev_direction_count_flag():
    code, rep, _ = run(["killing-dev", SCENES / "vacuum_kd.scene",
                        "--directions", "8"])
    assert code == 0
    assert rep["dec_direction_count"] == 8


def test_ppwave_wave_scene():
    code, rep, _ = run(["ppwave", SCENES / "wave.scene"])
    assert code == 0 and rep["pass"] is True
    res = rep["residuals"]
    assert res["off_component_max"] == 0.0
    assert res["scal_max"] == 0.0
    assert res["parallel_kv_max"] == 0.0
    assert res["formula_residual_max"] < 1e-10
    # sine profile: the energy scan bottoms out at -2 pi^2, reported only
    assert abs(res["dec_margin_min"] + 2 * math.pi**2) < 1e-10
    assert "dec_margin_min" not in rep["verdicts"]


def test_ppwave_roundtrip_scene():
    code, rep, _ = run(["ppwave", SCENES / "roundtrip.scene"])
    assert code == 0 and rep["pass"] is True
    res = rep["residuals"]
    for key in ("roundtrip_metric_gap_max", "roundtrip_einstein_gap_max",
                "roundtrip_frame_table_gap_max", "roundtrip_scal_max",
                "roundtrip_kd_formula_residual_max", "marginal_modulus_max"):
        assert abs(res[key]) < 1e-8, key


def test_killing_dev_on_induced_wave_data():
    code, rep, _ = run(["killing-dev", SCENES / "roundtrip.scene"])
    # identities hold, but the wave violates the energy condition
    assert code == 1
    bad = [k for k, v in rep["verdicts"].items() if not v]
    assert bad == ["dec_margin_min"]
    assert rep["sigma"] == -1.0


def test_wave_scene_without_positive_profile_fails_numerically():
    for command in ("constraints", "killing-dev"):
        code, rep, err = run([command, SCENES / "wave.scene"])
        assert code == 3
        assert rep is None
        assert err.startswith("numerical failure:")
        assert "spacelike" in err


def test_convergence_order_fit():
    code, rep, _ = run(["convergence", SCENES / "convergence.scene",
                        "--check", "parallel_s"])
    assert code == 0 and rep["pass"] is True
    assert rep["check"] == "parallel_s"
    assert rep["levels"] == [11, 22, 44]
    assert rep["floor_hit"] is False
    errs = [rep["residuals"][f"err_n{n}"] for n in (11, 22, 44)]
    assert errs[0] > errs[1] > errs[2] > 0
    assert 3.9 < rep["residuals"]["order"] < 4.3
    assert rep["tolerances"] == {"order": 3.5}
    assert rep["verdicts"] == {"order": True}


def test_convergence_floor_on_flat_data():
    code, rep, _ = run(["convergence", SCENES / "flat.scene",
                        "--check", "parallel_s"])
    assert code == 0
    assert rep["floor_hit"] is True
    assert "order" not in rep["residuals"]
    assert rep["verdicts"] == {"order": True}
    for n in (16, 32, 64):
        assert rep["residuals"][f"err_n{n}"] == 0.0


def test_convergence_check_flag_validation():
    code, _, err = run(["convergence", SCENES / "convergence.scene"])
    assert code == 2 and "needs --check" in err
    code, _, err = run(["convergence", SCENES / "convergence.scene",
                        "--check", "bogus"])
    assert code == 2 and "unknown convergence check" in err
    assert "parallel_s" in err  # the message lists the choices


BROKEN_SCENES = {
    "both_sources": ("[data]\nphi = 1\nppwave_f = 1\n",
                     "exactly one of phi and ppwave_f"),
    "bad_expression": ("[data]\nphi = 1 + sin(\n", "[data] phi"),
    "bad_k_kind": ("[data]\nphi = 1\nk = magic\n", "'recipe' or 'explicit'"),
    "k_entry_out_of_range": ("[data]\nphi = 1\nk = explicit\nk_0_7 = 1\n",
                             "outside 0..2"),
    "leaf_metric_shape": ("[data]\nphi = 1\nleaf_metric = 1, 0\n",
                          "must be 2 x 2"),
    "no_data_section": ("", "needs a [data] section"),
}


@pytest.mark.parametrize("name", sorted(BROKEN_SCENES))
def test_scene_validation_errors(tmp_path, name):
    body, needle = BROKEN_SCENES[name]
    path = tmp_path / f"{name}.scene"
    path.write_text("[grid]\nn_s = 8\nleaf_counts = 8, 8\n"
                    "leaf_lengths = 1, 1\n" + body)
    code, rep, err = run(["constraints", path])
    assert code == 2
    assert rep is None
    assert err.startswith("scene error:")
    assert needle in err


def test_scene_grid_errors(tmp_path):
    code, _, err = run(["constraints", tmp_path / "missing.scene"])
    assert code == 2 and "cannot read scene" in err
    path = tmp_path / "bad.scene"
    path.write_text("[grid]\nell = -2.0\nn_s = 8\nleaf_counts = 8, 8\n"
                    "leaf_lengths = 1, 1\n[data]\nphi = 1\n")
    code, _, err = run(["constraints", path])
    assert code == 2 and "nonpositive length" in err
    path.write_text("[grid]\nn = 4\nn_s = 8\nleaf_counts = 8, 8\n"
                    "leaf_lengths = 1, 1\n[data]\nphi = 1\n")
    code, _, err = run(["constraints", path])
    assert code == 2 and "leaves imply 3" in err


def test_argparse_rejects_bad_invocations():
    with pytest.raises(SystemExit) as exc:
        run(["bogus", SCENES / "flat.scene"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run(["constraints", SCENES / "flat.scene", "--scheme-s", "spectral"])
    assert exc.value.code == 2


def test_out_flag_and_determinism(tmp_path):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    for path in (first, second):
        code, rep, _ = run(["constraints", SCENES / "flat.scene", "--out", path])
        assert code == 0
        assert rep is None  # report went to the file, not stdout
    blank = lambda text: re.sub(r'"volatile": "[^"]*"', '"volatile": ""', text)
    assert blank(first.read_text()) == blank(second.read_text())
    rep = json.loads(first.read_text())
    assert re.fullmatch(r"[0-9T:+\-]+ runtime=\d+\.\d{3}s", rep["volatile"])


def test_dump_fields_constraints(tmp_path):
    out = tmp_path / "fields"
    code, _, _ = run(["constraints", SCENES / "flat.scene",
                      "--dump-fields", out])
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "dec_margin.csv", "j.csv", "rho.csv"]
    lines = (out / "rho.csv").read_text().splitlines()
    assert lines[0] == "s,x1,x2,comp,value"
    assert len(lines) - 1 == 16 * 16 * 16
    assert lines[1] == "0,0,0,comp,0"
    lines = (out / "j.csv").read_text().splitlines()
    assert len(lines) - 1 == 3 * 16 * 16 * 16
    assert lines[1].endswith("comp_0,0")


def test_dump_fields_frame_table(tmp_path):
    out = tmp_path / "table"
    code, _, _ = run(["killing-dev", SCENES / "vacuum_kd.scene",
                      "--dump-fields", out])
    assert code == 0
    lines = (out / "frame_table.csv").read_text().splitlines()
    assert lines[0] == "s,x1,x2,comp,value"
    assert len(lines) - 1 == 21 * 16 * 16 * 16
    assert lines[1] == "0,0,0,ein_e0_e0,0"
