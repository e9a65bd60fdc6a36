import csv
import json
import math

import pytest

from conebif import cli
from conebif.cylinder import StepPolicy


def write(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def cap_file(tmp_path, t, **extra):
    return write(tmp_path / "cap.json", {"N": 3, "kind": "cap", "parameters": {"t": t, **extra}, "target_h": 0.05})


def test_unknown_config_field_exits_2(tmp_path, capsys):
    cfg = write(tmp_path / "cfg.json", {"mesh_hh": 0.1})
    out = tmp_path / "out"
    code = cli.main(["mesh", "--config", cfg, "--out", str(out)])
    assert code == 2
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "validation-error"
    assert "mesh_hh" in json.dumps(err)
    assert "validation-error" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    cfg = write(tmp_path / "cfg.json", {"mesh_h": 0.1, "seed": 7, "step_policy": {"ds_max": 0.05}})
    args = cli.build_parser().parse_args(["mesh", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "o")])
    env = {"CONEBIF_MESH_H": "0.2", "CONEBIF_STEP_POLICY__MAX_POINTS": "5", "HOME": "/x"}
    c = cli.build_config(args, env)
    assert c["mesh_h"] == 0.2
    assert c["seed"] == 9
    assert c["step_policy"]["ds_max"] == 0.05
    assert c["step_policy"]["max_points"] == 5
    assert c["step_policy"]["grow"] == StepPolicy().grow


def test_unknown_env_field_rejected(tmp_path):
    args = cli.build_parser().parse_args(["mesh", "--out", str(tmp_path / "o")])
    with pytest.raises(cli.ValidationError):
        cli.build_config(args, {"CONEBIF_NOT_A_FIELD": "1"})


def test_invalid_value_rejected(tmp_path):
    out = tmp_path / "out"
    cfg = write(tmp_path / "cfg.json", {"dt": -1})
    assert cli.main(["bubble-spec", "--config", cfg, "--out", str(out)]) == 2


def test_missing_input(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["eig", "--out", str(out)]) == 2
    assert (out / "error.json").exists()


def test_bubble_spec(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["bubble-spec", "--out", str(out)]) == 0
    data = json.loads((out / "bubble_spectrum.json").read_text())
    mus = [m["mu"] for m in data["modes"]]
    assert mus[:2] == pytest.approx([1.0, 5.0], rel=1e-12)
    assert data["angular_shooting"] == pytest.approx(5.0, rel=1e-6)
    rows = list(csv.reader(open(out / "bubble_spectrum.csv")))
    assert rows[0][:2] == ["index", "mu"]


def test_mesh_and_eig_on_cap(tmp_path):
    inp = cap_file(tmp_path, 0.9)
    out = tmp_path / "out"
    assert cli.main(["mesh", "--input", inp, "--out", str(out)]) == 0
    summary = json.loads((out / "mesh_summary.json").read_text())
    assert summary["area"] == pytest.approx(2 * math.pi * (1 - math.cos(0.9)), rel=1e-2)
    assert cli.main(["eig", "--input", inp, "--out", str(out)]) == 0
    spec = json.loads((out / "spectrum.json").read_text())
    lam = spec["eigenvalues"]
    assert lam[0] == pytest.approx(0.0, abs=1e-8)
    for a, b in zip(lam[1:4], spec["oracle"][1:4]):
        assert a == pytest.approx(b, rel=5e-3)


def test_eig_on_hemisphere(tmp_path):
    inp = cap_file(tmp_path, math.pi / 2, allow_hemisphere=True)
    out = tmp_path / "out"
    assert cli.main(["eig", "--input", inp, "--out", str(out)]) == 0
    lam = json.loads((out / "spectrum.json").read_text())["eigenvalues"]
    assert lam[1] == pytest.approx(2.0, rel=5e-3)


def test_dlambda_refuses_caps(tmp_path):
    # lambda_1 of a cap is not simple, so the derivative is not defined
    inp = cap_file(tmp_path, 0.9)
    out = tmp_path / "out"
    assert cli.main(["dlambda", "--input", inp, "--out", str(out)]) == 3
    assert json.loads((out / "error.json").read_text())["error"] == "non-simple-eigenvalue"


def test_dlambda_on_dumbbell(tmp_path, tuned_base):
    dom = tuned_base.to_dict()
    dom.pop("symmetries", None)
    dom["target_h"] = 0.05
    out = tmp_path / "out"
    assert cli.main(["dlambda", "--input", write(tmp_path / "d.json", dom), "--out", str(out)]) == 0
    data = json.loads((out / "dlambda.json").read_text())
    assert data["h"] == 0.05


def test_invalid_cap_radius(tmp_path):
    inp = cap_file(tmp_path, 2.0)
    assert cli.main(["mesh", "--input", inp, "--out", str(tmp_path / "out")]) == 2


@pytest.mark.slow
def test_tune_and_continue(tmp_path, tuned_base):
    dom = tuned_base.to_dict()
    dom.pop("symmetries", None)
    dom["target_h"] = 0.04
    inp = write(tmp_path / "dumbbell.json", dom)
    out = tmp_path / "out"
    assert cli.main(["tune-alpha", "--input", inp, "--out", str(out)]) == 0
    fam = json.loads((out / "family.json").read_text())
    assert 0.6 < fam["alpha_hat"] < 0.8
    cfg = write(tmp_path / "cfg.json", {"continuation_h": 0.12, "T": 6.0, "bifurcation_window": [0.9, 1.1],
                                        "step_policy": {"max_points": 3, "ds_max": 0.02}})
    out2 = tmp_path / "cont"
    code = cli.main(["continue", "--input", str(out / "family.json"), "--config", cfg, "--out", str(out2)])
    assert code == 0
    data = json.loads((out2 / "continuation.json").read_text())
    assert [b["points"] for b in data["branches"]] == [3, 3]
    rows = list(csv.DictReader(open(out2 / "branch.csv")))
    assert len(rows) == 7
    assert float(rows[3]["s"]) == 0.0
    svg = (out2 / "branch.svg").read_text()
    assert svg.startswith("<?xml")
    # the SVG is byte-identical across runs
    out3 = tmp_path / "cont2"
    cli.main(["continue", "--input", str(out / "family.json"), "--config", cfg, "--out", str(out3)])
    assert (out3 / "branch.svg").read_text() == svg
