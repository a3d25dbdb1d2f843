import csv
import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from ldp_lab.checks import check_allen_cahn_noise
from ldp_lab.cli import main
from ldp_lab.errors import DomainError, ManifestError, ValidationError
from ldp_lab.manifest import load_manifest, parse_manifest, run
from ldp_lab.presets import ORACLE_ONLY, PRESETS, make_preset, verify_preset_fidelity
from ldp_lab.spectral import read_trajectory

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


@pytest.fixture(scope="module")
def ou_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("ou")
    m = load_manifest(CONFIGS / "ou_ldp.yaml")
    first = run(m, base / "a")
    run(load_manifest(CONFIGS / "ou_ldp.yaml"), base / "b")
    return base, first


class TestPresets:
    def test_fidelity(self):
        assert verify_preset_fidelity()
        p = make_preset("brusselator", modes_per_dim=8).params
        assert p.G[0] == (1, Fraction(3, 4))
        assert p.F[1] == (2, Fraction(5, 6), Fraction(1, 2))

    def test_allen_cahn_noise(self):
        c = make_preset("allen_cahn", modes_per_dim=8)
        assert check_allen_cahn_noise(c.b, c.C0, c.C1).passed

    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_builds(self, name):
        c = make_preset(name, modes_per_dim=8)
        assert c.grid.modes_per_dim == 8

    def test_oracle_only_labels(self):
        assert ORACLE_ONLY == {"ou_scalar", "heat_linear"}

    def test_unknown(self):
        with pytest.raises(DomainError):
            make_preset("gray_scott")
        with pytest.raises(DomainError):
            make_preset("brusselator", viscosity=1.0)


class TestManifest:
    def test_brusselator_default_loads(self):
        m = load_manifest(CONFIGS / "brusselator_default.yaml")
        assert m.reports and all(r.passed for r in m.reports)

    def test_bad_g_rejected(self):
        with pytest.raises(ValidationError) as info:
            load_manifest(CONFIGS / "brusselator_bad_g.yaml")
        rep = info.value.reports[0]
        assert rep.name == "subcriticality" and not rep.passed
        assert rep.margin == Fraction(-3, 5)

    def test_empty(self, tmp_path):
        with pytest.raises(ManifestError):
            load_manifest(write(tmp_path, "empty.yaml", ""))

    def test_parse_errors(self, tmp_path):
        with pytest.raises(ManifestError):
            parse_manifest("system: [unclosed")
        with pytest.raises(ValidationError):
            parse_manifest("system: ou_scalar\nbogus: 1\n")
        with pytest.raises(ValidationError):
            parse_manifest("system: nope\n")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "missing.yaml")

    def test_task_validation(self, tmp_path):
        bad_op = write(tmp_path, "op.yaml", "system: ou_scalar\ntasks: [{op: dance}]\n")
        with pytest.raises(ValidationError):
            load_manifest(bad_op)
        bad_event = write(tmp_path, "ev.yaml", "system: ou_scalar\ntasks: [{op: mc, event: nowhere}]\n")
        with pytest.raises(ValidationError):
            load_manifest(bad_event)

    def test_checks_only_directory(self, tmp_path):
        out = tmp_path / "checks"
        summary = run(load_manifest(CONFIGS / "checks_only.yaml"), out)
        assert summary["passed"]
        names = set(tree(out))
        assert {"manifest.yaml", "summary.json"} <= names
        rest = names - {"manifest.yaml", "summary.json"}
        assert rest and all(n.endswith(".json") and ("eager_" in n or n.startswith("checks_")) for n in rest)
        assert (tmp_path / "checks.log").exists()

    def test_ou_pipeline(self, ou_runs):
        base, summary = ou_runs
        a = base / "a"
        assert summary["passed"] and summary["oracle_only"]
        for name in ("rate.json", "rate_control.json", "curve.csv", "converge.csv", "summary.json"):
            assert (a / name).exists()
        rate = json.loads((a / "rate.json").read_text())
        assert rate["converged"] and rate["control_file"] == "rate_control.json"
        tasks = {t["id"]: t for t in summary["tasks"]}
        assert tasks["curve"]["rate_task"] == "rate" and tasks["converge"]["control_task"] == "rate"
        assert tasks["curve"]["relative_error"] < 0.15
        with open(a / "converge.csv") as f:
            rows = list(csv.DictReader(f))
        assert float(rows[0]["eps"]) == 0.0 and float(rows[0]["estimate"]) == 0.0
        meds = [float(r["estimate"]) for r in rows[1:]]
        assert all(y < x for x, y in zip(meds, meds[1:]))

    def test_replay_byte_identical(self, ou_runs):
        base, _ = ou_runs
        assert tree(base / "a") == tree(base / "b")

    def test_validation_precedes_compute(self, tmp_path):
        out = tmp_path / "bad"
        assert main(["run", "--config", str(CONFIGS / "brusselator_bad_g.yaml"), "--out", str(out)]) == 2
        assert not out.exists()


class TestCli:
    def test_check(self, tmp_path, capsys):
        report = tmp_path / "r.json"
        code = main(["check", "--config", str(CONFIGS / "checks_only.yaml"), "--samples", "200",
                     "--report", str(report)])
        assert code == 0
        assert all(r["verdict"] == "pass" for r in json.loads(report.read_text()))

    def test_check_failing_coercivity(self, tmp_path):
        code = main(["check", "--config", str(CONFIGS / "checks_only.yaml"), "--samples", "500",
                     "--full-coercivity"])
        assert code == 1

    def test_bad_manifest_exit(self, capsys):
        assert main(["check", "--config", "/nonexistent/x.yaml"]) == 2

    def test_simulate_and_skeleton(self, tmp_path):
        cfg = str(CONFIGS / "checks_only.yaml")
        for verb in (["simulate", "--eps", "0.1", "--seed", "3"], ["skeleton"]):
            out = tmp_path / f"{verb[0]}.bin"
            assert main(verb + ["--config", cfg, "--out", str(out), "--T", "0.01"]) == 0
            with open(out, "rb") as f:
                traj = read_trajectory(f)
            side = json.loads(Path(str(out) + ".json").read_text())
            assert len(traj) == side["steps"] + 1 == 21
            assert side["mode"] == ("ito" if verb[0] == "simulate" else "skeleton")

    def test_rate_mc_curve_converge(self, tmp_path):
        cfg = str(CONFIGS / "ou_ldp.yaml")
        assert main(["rate", "--config", cfg, "--target", "exceed", "--out", str(tmp_path / "rate.json"),
                     "--control-dt", "0.025", "--grad-mode", "adjoint_linear", "--tol", "1e-4"]) == 0
        rate = json.loads((tmp_path / "rate.json").read_text())
        assert rate["converged"] and (tmp_path / rate["control_file"]).exists()
        assert main(["mc", "--config", cfg, "--event", "exceed", "--eps", "0.2", "--n", "500",
                     "--importance", str(tmp_path / "rate_control.json"), "--out", str(tmp_path / "mc.csv")]) == 0
        with open(tmp_path / "mc.csv") as f:
            row = next(csv.DictReader(f))
        assert row["flags"] == "importance" and 0 < float(row["estimate"]) < 1
        assert main(["curve", "--config", cfg, "--event", "exceed", "--rate", str(tmp_path / "rate.json"),
                     "--n", "500", "--importance", "--out", str(tmp_path / "curve.csv")]) == 0
        assert main(["converge", "--config", cfg, "--control", str(tmp_path / "rate_control.json"),
                     "--n", "20", "--out", str(tmp_path / "conv.csv")]) == 0
        with open(tmp_path / "conv.csv") as f:
            assert float(next(csv.DictReader(f))["estimate"]) == 0.0

    def test_rate_field_target(self, tmp_path):
        from ldp_lab.spectral import SpectralField, write_field

        m = load_manifest(CONFIGS / "ou_ldp.yaml", validate=False)
        z = np.zeros(m.coeffs.grid.shape, complex)
        z[0, 0, 0] = 1.0
        with open(tmp_path / "target.bin", "wb") as f:
            write_field(f, SpectralField(m.coeffs.grid, z))
        assert main(["rate", "--config", str(CONFIGS / "ou_ldp.yaml"), "--target", str(tmp_path / "target.bin"),
                     "--grad-mode", "adjoint_linear", "--control-dt", "0.025",
                     "--out", str(tmp_path / "r.json")]) == 0
        body = json.loads((tmp_path / "r.json").read_text())
        assert body["converged"] and abs(body["value"] / 1.1565176 - 1) < 0.02

    def test_run_verb(self, tmp_path):
        out = tmp_path / "run"
        assert main(["run", "--config", str(CONFIGS / "checks_only.yaml"), "--out", str(out)]) == 0
        assert (out / "summary.json").exists()
