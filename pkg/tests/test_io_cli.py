import json

import numpy as np
import pytest

from qfacts.cli import main, parse_sweep, UsageError
from qfacts.inference import error_probability
from qfacts.channels import nd_dynamics
from qfacts.io import (
    ModelDocument,
    decode_matrix,
    encode_matrix,
    load_model,
    model_from_dict,
    model_to_dict,
    save_model,
    sha256_file,
)
from qfacts.models import SIGMA_X, SIGMA_Y, qd2_model, qd2_psi


def write_qd2(path, cycle=True, pert=None):
    c = {"lambda1": 0.001, "lambda2": 1.0, "M": 50, "H_P": np.zeros((2, 2))} if cycle else None
    md = ModelDocument(qd2_model(), pert, c, {"rho0": encode_matrix(qd2_psi().matrix)})
    save_model(path, md)
    return path


def test_matrix_encoding_round_trip():
    a = np.array([[1 + 2j, 0.5], [-1j, 3]])
    np.testing.assert_array_equal(decode_matrix(encode_matrix(a)), a)
    with pytest.raises(ValueError):
        decode_matrix([[1, 2], [3, 4]])


def test_model_round_trip_digest(tmp_path):
    pert = {"type": "hamiltonian", "H": [0.01 * SIGMA_X, 0.01 * SIGMA_Y]}
    p1 = write_qd2(tmp_path / "a.json", cycle=False, pert=pert)
    md = load_model(p1)
    save_model(tmp_path / "b.json", md)
    assert sha256_file(p1) == sha256_file(tmp_path / "b.json")
    np.testing.assert_allclose(md.model.cond_probs, qd2_model().cond_probs, atol=1e-15)
    assert md.dynamics().period == 2


def test_model_document_dynamics_precedence(tmp_path):
    md = load_model(write_qd2(tmp_path / "a.json"))
    assert md.cycle_config().M == 50
    assert md.cycle_config(M=7).M == 7
    plain = model_from_dict({k: v for k, v in model_to_dict(md).items() if k != "cycle"})
    with pytest.raises(ValueError):
        plain.cycle_config()
    with pytest.raises(ValueError):
        plain.mixture()


def test_mixture_section(tmp_path):
    dev = 0.05 * (np.kron(np.diag([1, -1]), np.diag([1, -1])) - np.eye(4))
    doc = model_to_dict(load_model(write_qd2(tmp_path / "a.json", cycle=False)))
    doc["perturbation"] = {"type": "mixture", "upsilon": [0.5, 0.5],
                           "deviations": [encode_matrix(dev), encode_matrix(-dev)],
                           "norms": [0.1, 0.1]}
    md = model_from_dict(doc)
    assert md.mixture().d2 == pytest.approx(2 / 3)
    assert model_to_dict(md)["perturbation"]["norms"] == [0.1, 0.1]


def run(argv):
    return main([str(a) for a in argv])


def test_validate_pass_and_fail(tmp_path, capsys):
    model = write_qd2(tmp_path / "m.json")
    assert run(["validate", "--model", model, "--out", tmp_path / "v"]) == 0
    report = json.loads((tmp_path / "v" / "validation.json").read_text())
    assert report["passed"] and report["joint_spectral_recovered"]
    doc = json.loads(model.read_text())
    doc["amplitudes"][0][1] = [0.9, 0.0]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run(["validate", "--model", bad, "--out", tmp_path / "v2"]) == 1
    assert "p(.|1)" in capsys.readouterr().err


def test_validate_flags_broken_perturbation(tmp_path):
    model = write_qd2(tmp_path / "m.json", cycle=False,
                      pert={"type": "hamiltonian", "H": 0.4 * SIGMA_X})
    assert run(["validate", "--model", model, "--out", tmp_path / "v"]) == 1
    report = json.loads((tmp_path / "v" / "validation.json").read_text())
    assert "AssumptionViolated" in report["problems"][0]


def test_usage_and_io_exit_codes(tmp_path):
    model = write_qd2(tmp_path / "m.json")
    assert run(["estimate", "--model", model, "--out", tmp_path / "o"]) == 2
    assert run(["estimate", "--model", tmp_path / "missing.json", "--seed", 1]) == 3
    assert run(["bogus"]) == 2
    assert run(["estimate", "--model", model, "--seed", -1]) == 2
    (tmp_path / "junk.json").write_text("{not json")
    assert run(["validate", "--model", tmp_path / "junk.json"]) == 3
    assert run(["sweep", "--model", model, "--seed", 1, "--sweep", "nope:1,2"]) == 2


def test_estimate_matches_exact(tmp_path):
    model = write_qd2(tmp_path / "m.json", cycle=False)
    out = tmp_path / "o"
    assert run(["estimate", "--model", model, "--seed", 0, "--r", 12, "--out", out]) == 0
    body = json.loads((out / "estimate.json").read_text())
    m = qd2_model()
    rep = error_probability(nd_dynamics(m), qd2_psi(), 0, 12)
    assert body["eps"]["0"] == pytest.approx(rep.eps[0], abs=1e-15)
    assert body["eps"]["1"] == pytest.approx(rep.eps[1], abs=1e-15)


def test_manifest_and_determinism(tmp_path):
    model = write_qd2(tmp_path / "m.json")
    digests = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["simulate", "--model", model, "--seed", 5, "--k", 40, "--n-traj", 20,
                    "--stride", 10, "--out", out]) == 0
        man = json.loads((out / "manifest.json").read_text())
        files = {p.name for p in out.iterdir()} - {"manifest.json"}
        assert set(man["outputs"]) == files
        for f, h in man["outputs"].items():
            assert sha256_file(out / f) == h
        assert man["config"]["seed"] == 5
        digests.append(man["outputs"])
    assert digests[0] == digests[1]


def test_config_overrides_flags(tmp_path):
    model = write_qd2(tmp_path / "m.json", cycle=False)
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"r": 4, "seed": 2}))
    out = tmp_path / "o"
    assert run(["estimate", "--model", model, "--r", 9, "--config", conf, "--out", out]) == 0
    assert json.loads((out / "estimate.json").read_text())["r"] == 4
    conf.write_text(json.dumps({"colour": 1}))
    assert run(["estimate", "--model", model, "--seed", 1, "--config", conf]) == 2


def test_other_commands(tmp_path):
    model = write_qd2(tmp_path / "m.json")
    base = ["--model", model, "--seed", 3, "--n-traj", 200]
    assert run(["purify", *base, "--k", 60, "--out", tmp_path / "p"]) == 0
    assert run(["jumps", "--model", model, "--seed", 3, "--n-cycles", 120, "--n-traj", 2,
                "--out", tmp_path / "j"]) == 0
    tsv = (tmp_path / "j" / "jumps.tsv").read_text().splitlines()
    assert len(tsv) == 121
    assert run(["histories", *base, "--r", 4, "--p", 2, "--epsilon", 0.3,
                "--out", tmp_path / "h"]) == 0
    assert json.loads((tmp_path / "h" / "histories.json").read_text())["method"] == "exact"
    assert run(["bounds", *base, "--r", 6, "--out", tmp_path / "b"]) == 0


def test_sweep(tmp_path):
    model = write_qd2(tmp_path / "m.json", cycle=False)
    out = tmp_path / "s"
    assert run(["sweep", "--model", model, "--seed", 1, "--sweep", "r:4,8",
                "--out", out]) == 0
    body = json.loads((out / "sweep.json").read_text())
    assert [p["value"] for p in body["points"]] == [4, 8]
    assert body["points"][1]["outputs"]["estimate.json"]["r"] == 8


def test_parse_sweep():
    assert parse_sweep("r:4,8,12") == ("r", [4, 8, 12])
    assert parse_sweep("epsilon:0.1") == ("epsilon", [0.1])
    with pytest.raises(UsageError):
        parse_sweep("r")
