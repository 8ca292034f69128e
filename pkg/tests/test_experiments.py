import csv
import math

import numpy as np
import pytest

from mfequil import cli
from mfequil.experiments import (
    CCP_HEADER,
    EQUIL_HEADER,
    LSQR_HEADER,
    ExperimentConfig,
    fit_loglog_slope,
    gen_matrix,
    load_config_file,
    run_ccp_experiment,
    run_equilibration_experiment,
    run_lsqr_experiment,
)
from mfequil.linops import ExplicitMatrix
from mfequil.mmio import read_matrix_market, write_matrix_market
from mfequil.solvers import lsqr


def _read(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.reader(lines))


@pytest.mark.parametrize("m, n, density", [(10, 7, 0.3), (50, 40, 0.01), (3, 3, 0.5)])
def test_gen_nnz_exact(m, n, density):
    with _nowarn():
        A = gen_matrix(m, n, density, 1)
    assert A.nnz == math.floor(density * m * n * (1 + 1e-12))


class _nowarn:
    def __enter__(self):
        import warnings

        self._c = warnings.catch_warnings()
        self._c.__enter__()
        warnings.simplefilter("ignore")

    def __exit__(self, *exc):
        return self._c.__exit__(*exc)


def test_gen_dense_and_deterministic():
    A = gen_matrix(6, 4, 1.0, 0)
    assert A.nnz == 24 and A.shape == (6, 4)
    np.testing.assert_array_equal(A.toarray(), gen_matrix(6, 4, 1.0, 0).toarray())
    with _nowarn():
        a, b = gen_matrix(30, 30, 0.1, 0), gen_matrix(30, 30, 0.1, 1)
    assert not np.array_equal(a.toarray() != 0, b.toarray() != 0)


def test_gen_warns_on_empty_rows():
    with pytest.warns(UserWarning):
        gen_matrix(20, 20, 0.01, 0)


@pytest.mark.parametrize("density", [0.0, 1.5, -0.1])
def test_bad_density(density):
    with pytest.raises(ValueError):
        gen_matrix(3, 3, density, 0)
    with pytest.raises(ValueError):
        ExperimentConfig(density=density)


def test_fit_slope_exact_power_law():
    t = np.arange(1, 2001)
    assert fit_loglog_slope(t, 3.0 * t**-2.0) == pytest.approx(-2.0, abs=1e-12)


def test_equilibration_csv_contract(tmp_path):
    cfg = ExperimentConfig(rows=12, cols=12, density=1.0, iters=40, stride=4,
                           out=str(tmp_path / "e.csv"))
    rep = run_equilibration_experiment(cfg)
    rows = _read(tmp_path / "e.csv")
    assert tuple(rows[0]) == EQUIL_HEADER
    assert len(rows) - 1 == 40 // 4 + 1
    assert [int(r[0]) for r in rows[1:]] == list(range(0, 41, 4))
    assert all(r[3] != "" for r in rows[1::5])
    text = (tmp_path / "e.csv").read_text()
    assert "# seed = 0" in text and "# iters = 40" in text
    assert float(rows[-1][1]) < float(rows[1][1])
    assert rep.p_star is not None


def test_missing_diagnostics_are_empty(tmp_path):
    cfg = ExperimentConfig(rows=8, cols=5, density=1.0, iters=5, out=str(tmp_path / "e.csv"))
    run_equilibration_experiment(cfg)
    rows = _read(tmp_path / "e.csv")
    assert all(r[3] == "" for r in rows[1:])


def test_identity_gap_is_zero(tmp_path):
    p = tmp_path / "eye.mtx"
    write_matrix_market(ExplicitMatrix(np.eye(9)), p)
    rep = run_equilibration_experiment(ExperimentConfig(matrix=str(p), iters=30))
    assert all(r[1] == 0.0 for r in rep.rows)


def test_lsqr_bench_contract(tmp_path):
    cfg = ExperimentConfig(rows=40, cols=40, density=0.3, iters=30, equil_budgets=(0, 10),
                           out=str(tmp_path / "l.csv"))
    with _nowarn():
        rep = run_lsqr_experiment(cfg)
    rows = _read(tmp_path / "l.csv")
    assert tuple(rows[0]) == LSQR_HEADER
    plain = [r for r in rows[1:] if r[0] == "plain"]
    pre = [r for r in rows[1:] if r[0] == "equil_10"]
    assert len(plain) == 31 and len(pre) == 41
    assert len({r[2] for r in pre[:11]}) == 1
    # budget 0 is exactly the plain solver
    from mfequil.experiments import lsqr_instance

    with _nowarn():
        A, b = lsqr_instance(cfg)
    assert [float(r[2]) for r in plain] == lsqr(A, b, max_iters=30).residual_history
    assert rep.runs[10].equil_iterations == 10


def test_ccp_bench_contract(tmp_path):
    cfg = ExperimentConfig(rows=20, cols=40, density=0.5, iters=25, equil_budgets=(0, 5),
                           out=str(tmp_path / "c.csv"), plot=str(tmp_path / "c.svg"))
    rep = run_ccp_experiment(cfg)
    rows = _read(tmp_path / "c.csv")
    assert tuple(rows[0]) == CCP_HEADER
    assert len([r for r in rows if r[0] == "equil_5"]) == 5 + 26
    assert (tmp_path / "c.svg").read_text().lstrip().startswith("<?xml")
    assert rep.extras["lam"] > 0


def test_config_file_parsing(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("# demo\nrows = 5\nalpha = auto\nequil-budgets = 0, 3\ngamma = 0.5  # reg\n")
    assert load_config_file(p) == {"rows": 5, "alpha": None, "equil_budgets": (0, 3), "gamma": 0.5}
    p.write_text("bogus = 1\n")
    with pytest.raises(ValueError):
        load_config_file(p)


def test_cli_byte_identical_and_precedence(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "cfg.txt").write_text("rows = 10\ncols = 8\ndensity = 1.0\niters = 50\nseed = 4\n")
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        monkeypatch.chdir(d)
        rc = cli.main(["equilibrate", "--config", "../cfg.txt", "--iters", "20",
                       "--out", "out.csv", "--plot", "out.svg"])
        assert rc == 0
        outs.append(((d / "out.csv").read_bytes(), (d / "out.svg").read_bytes()))
    assert outs[0] == outs[1]
    rows = [ln for ln in outs[0][0].decode().splitlines() if not ln.startswith("#")]
    assert len(rows) == 1 + 21
    assert b"# rows = 10" in outs[0][0]


def test_cli_gen_and_metrics(tmp_path, capsys):
    p = tmp_path / "g.mtx"
    assert cli.main(["gen", "--rows", "6", "--cols", "6", "--density", "1", "--out", str(p)]) == 0
    assert read_matrix_market(p).shape == (6, 6)
    assert cli.main(["metrics", "--matrix", str(p)]) == 0
    out = capsys.readouterr().out
    assert "cond_number" in out and "p_star" in out


def test_cli_reports_errors(tmp_path, capsys):
    assert cli.main(["equilibrate", "--density", "2"]) == 2
    assert cli.main(["metrics", "--matrix", str(tmp_path / "missing.mtx")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["bench-lsqr", "--equil-budgets", "1,-2"])


def test_desk_ccp_median_to_tight_gap():
    plain, pre = [], []
    for seed in range(3):
        cfg = ExperimentConfig(rows=500, cols=1000, density=0.01, seed=seed, iters=20000,
                               equil_budgets=(0, 100), target=1e-6)
        with _nowarn():
            hit = run_ccp_experiment(cfg).iterations_to(1e-6)
        plain.append(math.inf if hit[0] is None else hit[0])
        pre.append(math.inf if hit[100] is None else hit[100])
    assert np.median(pre) < np.median(plain)
