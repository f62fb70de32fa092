import re

import pytest

from emdini.cli import main
from emdini.experiment import ErrorRow, ErrorTable


def _cfg(tmp_path, body, name="c.cfg"):
    f = tmp_path / name
    f.write_text(body)
    return f


SMALL_GBM = """
experiment = rates
model.name = gbm
x0 = 0.5
delta_list = 2^-3, 2^-4, 2^-5, 2^-6
ref_factor = 8
p_list = 1
replicas = 400
seed = 11
"""


def test_models_listing(capsys):
    assert main(["models"]) == 0
    out = capsys.readouterr().out
    names = re.findall(r"^(\w+)\s+\[", out, flags=re.M)
    assert len(names) >= 5
    assert re.search(r"^dini_drift\s+\[Assumption 2.1 / Theorem 2.2\]", out, flags=re.M)
    assert re.search(r"^gbm\s+\[linear growth / Theorem 2.3\]", out, flags=re.M)


def test_run_pass_writes_outputs(tmp_path, capsys):
    out = tmp_path / "res"
    cfg = _cfg(tmp_path, SMALL_GBM + "bands.slope = 1:0.3:0.7\nbands.r2_min = 0.9\n")
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["errors.csv", "errors.svg", "fits.txt", "run.manifest"]
    rows = ErrorTable.from_csv((out / "errors.csv").read_text()).for_p(1.0)
    errs = [r.mean_error for r in sorted(rows, key=lambda r: -r.delta)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert "PASS slope p=1" in capsys.readouterr().out


def test_impossible_band_exits_one(tmp_path):
    cfg = _cfg(tmp_path, SMALL_GBM + "bands.slope = 1:0.9:1.0\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "run.status = 1" in (tmp_path / "o" / "run.manifest").read_text()


def test_unknown_model_exits_two(tmp_path, capsys):
    cfg = _cfg(tmp_path, SMALL_GBM.replace("gbm", "heston"))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "registry" in err and "bounded_nondeg" in err


def test_execution_error_leaves_only_partials(tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, "experiment = truncation\nmodel.name = pure_bm\nk_list = 2\nreplicas = 4\n")
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert not (out / "run.manifest").exists() and not (out / ".lock").exists()


def test_failed_rerun_keeps_completed_outputs(tmp_path):
    out = tmp_path / "o"
    good = _cfg(tmp_path, SMALL_GBM, "good.cfg")
    assert main(["run", "--config", str(good), "--out", str(out)]) in (0, 1)
    before = (out / "errors.csv").read_bytes()
    bad = _cfg(tmp_path, SMALL_GBM.replace("ref_factor = 8", "ref_factor = 8\nmonitor = fine")
               .replace("gbm", "pure_bm").replace("x0 = 0.5", "x0 = 0.5, 1"), "bad.cfg")
    assert main(["run", "--config", str(bad), "--out", str(out)]) == 2
    assert (out / "errors.csv").read_bytes() == before


def test_lock_blocks_concurrent_run(tmp_path, capsys):
    out = tmp_path / "o"
    out.mkdir()
    (out / ".lock").write_text("123")
    cfg = _cfg(tmp_path, SMALL_GBM)
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert "another run" in capsys.readouterr().err


def test_seed_override_and_rerun_identical(tmp_path):
    cfg = _cfg(tmp_path, SMALL_GBM)
    for d in ("a", "b"):
        main(["run", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "99"])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "100"])
    a, b, c = ((tmp_path / d / "errors.csv").read_bytes() for d in "abc")
    assert a == b != c
    assert "seed = 99" in (tmp_path / "a" / "run.manifest").read_text()


def test_manifest_reruns_to_same_csv(tmp_path):
    cfg = _cfg(tmp_path, SMALL_GBM)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(tmp_path / "a" / "run.manifest"), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "errors.csv").read_bytes() == (tmp_path / "b" / "errors.csv").read_bytes()


def test_dump_paths(tmp_path):
    cfg = _cfg(tmp_path, SMALL_GBM.replace("replicas = 400", "replicas = 3"))
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--dump-paths"])
    assert len(list((tmp_path / "o" / "paths").iterdir())) == 3


def _table(deltas, slope):
    return ErrorTable([ErrorRow(d, 1.0, 10, 0, 0.3 * d ** slope, 0.0) for d in deltas])


def test_plot_two_rows_has_no_fit(tmp_path, capsys):
    f = tmp_path / "two.csv"
    f.write_text(_table([0.5, 0.25], 0.5).to_csv())
    svg = tmp_path / "two.svg"
    assert main(["plot", "--in", str(f), "--out", str(svg)]) == 0
    text = svg.read_text()
    assert "no fit" in text and "fit slope" not in text
    assert "no fit" in capsys.readouterr().out


def test_plot_noiseless_half_slope(tmp_path, capsys):
    f = tmp_path / "half.csv"
    f.write_text(_table([2.0 ** -k for k in range(2, 8)], 0.5).to_csv())
    svg = tmp_path / "half.svg"
    assert main(["plot", "--in", str(f), "--out", str(svg)]) == 0
    text = svg.read_text()
    assert text.lstrip().startswith("<?xml") and "<svg" in text
    assert "fit slope 0.50" in text and "reference slope 0.50" in text
    assert "slope 0.50" in capsys.readouterr().out


def test_plot_malformed_csv(tmp_path, capsys):
    f = tmp_path / "bad.csv"
    f.write_text("delta,p,n_effective,excluded,mean_error,std_error\n0.5,1,10,0,0.1,0\n0.25,1,ten,0,0.1,0\n")
    assert main(["plot", "--in", str(f), "--out", str(tmp_path / "x.svg")]) == 2
    assert "row 3" in capsys.readouterr().err


def test_check_modulus(capsys):
    assert main(["check-modulus", "--kind", "power", "--params", "alpha=0.5"]) == 0
    out = capsys.readouterr().out
    assert "status: convergent" in out
    assert main(["check-modulus", "--kind", "product", "--params", "beta=0.5", "--inner", "logpower",
                 "--inner-params", "gamma=2"]) == 0
    assert "convergent" in capsys.readouterr().out
    assert main(["check-modulus", "--kind", "logpower", "--params", "gamma=1"]) == 0
    assert "divergent" in capsys.readouterr().out


def test_check_modulus_bad_kind(capsys):
    assert main(["check-modulus", "--kind", "wavy"]) == 2


def test_kolmogorov_command(capsys):
    code = main(["kolmogorov", "--source", "holder", "--source-params", "alpha=0.1", "--n-x", "2001", "--L", "12"])
    out = capsys.readouterr().out
    assert out.startswith("length,sup_grad,ratio")
    assert code == 0


@pytest.mark.parametrize("experiment", ["one_step", "truncation", "kolmogorov", "check_modulus"])
def test_other_experiments_run(tmp_path, experiment):
    bodies = {
        "one_step": "model.name = pure_bm\ndelta_list = 2^-3, 2^-4, 2^-5\np_list = 2\nreplicas = 200\n"
                    "bands.slope = 2:0.7:1.3\nbands.r2_min = 0.5\n",
        "truncation": "model.name = gbm\nk_list = 1, 2, 1000\nreplicas = 50\ndelta = 2^-4\n",
        "kolmogorov": "kolmogorov.source = holder\nkolmogorov.source_params.alpha = 0.1\n"
                      "kolmogorov.n_x = 2001\nkolmogorov.L = 12\n",
        "check_modulus": "modulus.kind = power\nmodulus.params.alpha = 0.5\nmodulus.expect = convergent\n",
    }
    cfg = _cfg(tmp_path, f"experiment = {experiment}\n" + bodies[experiment])
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "run.manifest").exists()
    assert not list((tmp_path / "o").glob("*.partial"))
