import csv
import io
import json
import subprocess
import sys

import pytest

from affine_walk import __version__, model
from affine_walk.cli import int_list, main, sci_int


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def csv_body(text):
    return list(csv.reader(io.StringIO("".join(l + "\n" for l in text.splitlines() if not l.startswith("#")))))


def test_sci_notation():
    assert sci_int("1e6") == 10**6 and sci_int("250") == 250
    assert int_list("10,1e2, 1000") == [10, 100, 1000]
    with pytest.raises(Exception):
        sci_int("1.5")


def test_check_ssrw(capsys):
    code, out, _ = run(capsys, "check", "--model", "ssrw")
    doc = json.loads(out)
    assert code == 0
    assert doc["summary"]["conditions"]["C2'"]["witness"] == {"a": 0.0, "b": 1.0}
    assert doc["meta"]["model_sha256"] == model.ssrw().digest() and doc["meta"]["version"] == __version__


def test_check_symmetric_uses_cs2(capsys):
    code, out, _ = run(capsys, "check", "--model", "symmetric-half")
    doc = json.loads(out)
    assert code == 0 and doc["summary"]["conditions"]["C3'"]["witness"]["C"] == 1.0
    assert doc["summary"]["conditions"]["C3"]["status"] == "satisfied"


def test_check_unit_a_fails(capsys, tmp_path):
    p = tmp_path / "a1.json"
    p.write_text(json.dumps({"kind": "independent", "a": {"discrete": [[1, 1]]},
                             "b": {"discrete": [[-1, 0.5], [1, 0.5]]}}))
    code, out, _ = run(capsys, "check", "--model", str(p))
    assert code == 1 and json.loads(out)["summary"]["conditions"]["C1"]["status"] == "not-satisfied"


@pytest.mark.parametrize("content", ["{not json", json.dumps({"kind": "independent"}),
                                     json.dumps({"kind": "joint_discrete", "atoms": [[[0, 1], 1]]})])
def test_bad_model_exit_2(capsys, tmp_path, content):
    p = tmp_path / "bad.json"
    p.write_text(content)
    code, _, err = run(capsys, "check", "--model", str(p))
    assert code == 2 and "model" in err


def test_missing_model_exit_2(capsys):
    assert run(capsys, "check", "--model", "/nonexistent/m.json")[0] == 2
    assert run(capsys, "constants")[0] == 2


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["tail", "--model", "ssrw", "--y", "1", "--n-grid", "10,x"])
    assert exc.value.code == 2


def test_domain_error_exit_2(capsys):
    assert run(capsys, "estimate-v", "--model", "ssrw", "--y", "-1", "--replicas", "10")[0] == 2


def test_gate_blocks_and_force_watermarks(capsys):
    code, out, err = run(capsys, "tail", "--model", "drifting-half", "--y", "1", "--n-grid", "10,20,40",
                         "--replicas", "1000", "--v-replicas", "1000")
    assert code == 1 and out == "" and "--force" in err
    code, out, err = run(capsys, "tail", "--model", "drifting-half", "--y", "1", "--n-grid", "10,20,40",
                         "--replicas", "1000", "--v-replicas", "1000", "--force")
    assert code == 0 and "# hypotheses: hypotheses-unverified" in out


def test_tail_csv_columns_and_determinism(capsys):
    argv = ["tail", "--model", "ssrw", "--y", "1", "--n-grid", "10,100,1000", "--replicas", "1e5",
            "--v-replicas", "1e4", "--seed", "7"]
    code1, out1, _ = run(capsys, *argv)
    code8, out8, _ = run(capsys, *argv, "--threads", "8")
    assert code1 == code8 == 0 and out1 == out8
    rows = csv_body(out1)
    assert rows[0] == ["n", "p_hat", "stderr", "ratio", "ratio_stderr"] and len(rows) == 4
    assert "# seed: 7" in out1 and "# replicas: 100000" in out1


def test_out_file(capsys, tmp_path):
    p = tmp_path / "v.json"
    code, out, _ = run(capsys, "estimate-v", "--model", "ssrw", "--y", "3", "--replicas", "1000", "--out", str(p))
    doc = json.loads(p.read_text())
    assert code == 0 and out == ""
    assert doc["summary"]["v"] == 3.0 and set(doc["summary"]) >= {"x", "y", "v", "ci", "censor_rate", "replicas", "seed"}


def test_sweep_rows(capsys):
    code, out, _ = run(capsys, "sweep", "--model", "ssrw", "--y-grid", "1,2,3,4,5,6,7,8", "--n", "100",
                       "--replicas", "1e4", "--v-replicas", "1e3")
    rows = csv_body(out)
    assert code == 0 and len(rows) == 9 and "v" in rows[0] and "ratio" in rows[0]
    assert [float(r[1]) for r in rows[1:]] == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]


def test_v_scan(capsys):
    code, out, _ = run(capsys, "v-scan", "--model", "ssrw", "--y-grid", "1,2,3", "--replicas", "1000")
    rows = csv_body(out)
    assert code == 0 and rows[0][:4] == ["x", "y", "v", "stderr"] and [r[2] for r in rows[1:]] == ["1.0", "2.0", "3.0"]


def test_untrusted_estimate_nonzero_exit_keeps_output(capsys):
    code, out, _ = run(capsys, "estimate-v", "--model", "ssrw", "--y", "1", "--cap", "5", "--replicas", "1000")
    assert code == 1 and json.loads(out)["summary"]["trusted"] is False


def test_cond_law_outputs(capsys):
    code, out, _ = run(capsys, "cond-law", "--model", "ssrw", "--n", "100", "--replicas", "2e5",
                       "--t-grid", "0.5,1,2", "--format", "csv")
    rows = csv_body(out)
    assert code == 0 and rows[0] == ["t", "empirical", "rayleigh"] and len(rows) == 4
    assert "# summary.ks_stat:" in out


def test_cond_law_no_survivors(capsys):
    code, out, _ = run(capsys, "cond-law", "--model", "ssrw", "--n", "10000", "--replicas", "1", "--seed", "1")
    assert code == 1 and json.loads(out)["summary"]["survivors"] == 0


def test_moments_and_clt(capsys):
    code, out, _ = run(capsys, "moments", "--model", "ssrw", "--gamma", "0.25", "--caps", "100,1000",
                       "--replicas", "1000")
    assert code == 0 and len(csv_body(out)) == 3
    code, out, _ = run(capsys, "clt", "--model", "ssrw", "--n-grid", "1,10", "--replicas", "1000")
    assert code == 0 and csv_body(out)[0] == ["n", "distance"]


def test_brownian(capsys):
    code, out, _ = run(capsys, "brownian", "--y", "1", "--n", "1", "--window", "0", "1")
    doc = json.loads(out)["summary"]
    assert code == 0 and abs(doc["tail"] - 0.6826894921370859) < 1e-15 and "tail_with_position" in doc


def test_constants_and_simulate(capsys):
    code, out, _ = run(capsys, "constants", "--model", "drifting-half")
    assert code == 0 and json.loads(out)["summary"]["sigma2"] == 4.0
    code, out, _ = run(capsys, "simulate", "--model", "symmetric-half", "--n", "5", "--replicas", "3",
                       "--decompose")
    rows = csv_body(out)
    assert code == 0 and rows[0] == ["replica", "k", "a", "b", "X", "S", "M", "M0", "Delta"] and len(rows) == 16


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "affine_walk", "brownian", "--y", "1", "--n", "4"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and json.loads(r.stdout)["summary"]["theta"] == 0.5
