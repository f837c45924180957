import csv
import subprocess
import sys

import pytest

from voltaic.cli import main

DIVIDER = "NODES 3\nGROUND 0\nVS 1 0 1.0\nR 1 2 1.0\nR 2 0 1.0\n"
# node 2 must sit at or above node 1 (1 V) and at or below ground
INFEASIBLE = "NODES 3\nGROUND 0\nVS 1 0 1.0\nR 0 2 1.0\nD 1 2\nD 2 0\n"


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def netlist(tmp_path):
    def make(text, name="c.net"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return make


# -- solve -----------------------------------------------------------------------

def test_solve_divider(netlist, capsys):
    code, out, _ = run(["solve", "--netlist", netlist(DIVIDER)], capsys)
    assert code == 0
    assert "v[2] = 0.5\n" in out
    assert "v[1] = 1 pinned" in out


def test_solve_infeasible_exit_code(netlist, capsys):
    code, _, err = run(["solve", "--netlist", netlist(INFEASIBLE)], capsys)
    assert code == 2
    assert "(1, 2)" in err and "(2, 0)" in err


def test_solve_trace_rows(netlist, capsys, tmp_path):
    trace = tmp_path / "trace.csv"
    text = "NODES 5\nGROUND 0\nVS 1 0 1.0\nR 1 2 1\nR 2 3 1\nR 3 4 1\nR 4 0 1\nD 0 3\n"
    code, out, _ = run(["solve", "--netlist", netlist(text), "--trace", str(trace), "--tol", "1e-12"], capsys)
    assert code == 0
    sweeps = int(out.split("sweeps=")[1].split()[0])
    with open(trace) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) - 1 == sweeps


def test_solve_bad_netlist(netlist, capsys):
    code, _, err = run(["solve", "--netlist", netlist("NODES 2\nGROUND 0\nR 0 5 1\n")], capsys)
    assert code == 1 and "line 3" in err


def test_solve_random_order(netlist, capsys):
    code, out, _ = run(["solve", "--netlist", netlist(DIVIDER), "--order", "rand", "--seed", "3"], capsys)
    assert code == 0 and "v[2] = 0.5" in out


def test_usage_error_exit_code(capsys):
    code, _, _ = run(["solve"], capsys)
    assert code == 1


# -- verify -----------------------------------------------------------------------

def test_verify_passes_and_repeats(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code, _, err = run(["verify", "--random", "25", "--seed", "5", "--out", str(a)], capsys)
    assert code == 0, err
    assert "25/25" in err
    run(["verify", "--random", "25", "--seed", "5", "--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header == "seed,n_nodes,n_diodes,max_abs_diff,kkt_residual"


def test_verify_linear_only(capsys):
    code, out, err = run(["verify", "--random", "30", "--max-diodes", "0", "--tol", "1e-9"], capsys)
    assert code == 0, err
    rows = list(csv.DictReader(out.splitlines()))
    assert all(int(r["n_diodes"]) == 0 for r in rows)


def test_verify_tolerance_failure(capsys):
    # roundoff differences are never exactly zero, so a zero tolerance must fail
    code, _, err = run(["verify", "--random", "5", "--tol", "0"], capsys)
    assert code == 3 and "mismatch" in err


# -- train / eval ------------------------------------------------------------------

TRAIN_ARGS = ["train", "--config", "drn-xs", "--synthetic", "120", "--no-wallclock",
              "--set", "sizes=40,12,3", "--set", "A=4", "--set", "beta=0.2", "--set", "lr=0.02,0.02"]


def test_train_resume_and_eval(tmp_path, capsys):
    out_dir = tmp_path / "run"
    code, _, err = run(TRAIN_ARGS + ["--out-dir", str(out_dir), "--set", "epochs=1"], capsys)
    assert code == 0, err
    code, _, err = run(TRAIN_ARGS + ["--out-dir", str(out_dir), "--set", "epochs=3"], capsys)
    assert code == 0, err
    rows = list(csv.DictReader(open(out_dir / "metrics.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert all(r["seconds"] == "0.000" for r in rows)
    echo = (out_dir / "config.cfg").read_text()
    assert "A = 4.0" in echo and "decay = 0.99" in echo

    code, out, _ = run(["eval", "--model", str(out_dir / "checkpoint.bin"), "--synthetic", "120"], capsys)
    assert code == 0
    err_pct = float(out.split("error=")[1].rstrip("%\n"))
    assert abs(err_pct - float(rows[-1]["test_err"])) <= 1e-12
    _, out2, _ = run(["eval", "--model", str(out_dir / "checkpoint.bin"), "--synthetic", "120"], capsys)
    assert out == out2


def test_resumed_run_matches_straight_run(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    run(TRAIN_ARGS + ["--out-dir", str(a), "--set", "epochs=2"], capsys)
    run(TRAIN_ARGS + ["--out-dir", str(b), "--set", "epochs=1"], capsys)
    run(TRAIN_ARGS + ["--out-dir", str(b), "--set", "epochs=2"], capsys)
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()


def test_train_dhn(tmp_path, capsys):
    code, _, err = run(["train", "--config", "dhn-1h", "--model", "dhn", "--synthetic", "60", "--no-wallclock",
                        "--set", "sizes=10,8,3", "--set", "epochs=1", "--set", "T=5", "--set", "K=5",
                        "--out-dir", str(tmp_path)], capsys)
    assert code == 0, err
    assert (tmp_path / "checkpoint.bin").read_bytes()[:4] == b"DHN1"


def test_train_missing_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model = drn\nsizes = 4,2\nbeta = 1\nT = 1\nK = 1\nlr = 0.1\ndecay = 1\nbatch_size = 1\n")
    code, _, err = run(["train", "--config", str(cfg), "--synthetic", "10", "--out-dir", str(tmp_path)], capsys)
    assert code == 1 and "'epochs'" in err


def test_train_without_data(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("VOLTAIC_DATA_DIR", raising=False)
    code, _, err = run(["train", "--config", "drn-xs", "--out-dir", str(tmp_path)], capsys)
    assert code == 1 and "MNIST" in err


def test_eval_corrupted_magic(tmp_path, capsys):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX" + bytes(40))
    code, _, err = run(["eval", "--model", str(p), "--synthetic", "10"], capsys)
    assert code == 1 and "magic" in err


# -- gradcheck ---------------------------------------------------------------------

def test_gradcheck_default_passes(capsys):
    code, out, _ = run(["gradcheck"], capsys)
    assert code == 0
    assert "L_beta" in out and "identity ok; ratios ok; bounds ok" in out


@pytest.mark.parametrize("betas", ["0.1,0", "-0.1", "abc"])
def test_gradcheck_bad_betas(betas, capsys):
    code, _, err = run(["gradcheck", "--betas", betas], capsys)
    assert code == 1


def test_console_script_version():
    res = subprocess.run([sys.executable, "-m", "voltaic.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("voltaic ")
