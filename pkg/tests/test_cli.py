import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from cqiv import cli
from cqiv.sim import McDesign, generate_design

DATA_FLAGS = ["--y", "y", "--d", "d", "--w", "w", "--z", "z", "--c", "c"]


@pytest.fixture(scope="module")
def csv_path(tmp_path_factory):
    data, _ = generate_design(McDesign(n=300), 21)
    path = tmp_path_factory.mktemp("data") / "sample.csv"
    cli.write_dataset_csv(path, data)
    return str(path), data


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_dataset_csv_round_trip(csv_path):
    path, data = csv_path
    cfg = cli.RunConfig(data=path, w=["w"], z=["z"], c="c")
    back = cli.read_csv_data(path, cfg)
    for attr in ("y", "d", "w", "z", "c"):
        assert np.array_equal(getattr(back, attr), getattr(data, attr))


def test_table_round_trip(tmp_path):
    rows = [{"quantile": 0.1, "item": "d", "estimate": 1 / 3, "ci_lower": math.nan,
             "selected_step": 3, "powell_later": "0.5;0.25"},
            {"quantile": 0.9, "item": "v", "estimate": -2.0 ** -40, "ci_upper": 1e300}]
    p = tmp_path / "t.csv"
    cli.write_table(p, cli.RESULT_COLUMNS, rows, "result-table", 17)
    meta, back = cli.read_table(p)
    assert meta == {"schema_version": "1", "seed": "17"}
    assert back[0]["estimate"] == 1 / 3 and back[1]["estimate"] == -2.0 ** -40
    assert back[1]["ci_upper"] == 1e300
    assert math.isnan(back[0]["ci_lower"]) and back[0]["selected_step"] == 3
    assert back[0]["powell_later"] == "0.5;0.25"


def test_fit_outputs_round_trip(csv_path, tmp_path):
    path, _ = csv_path
    out = tmp_path / "fit"
    assert run("fit", "--data", path, *DATA_FLAGS, "--control", "ols",
               "--quantiles", "0.3,0.6", "--out", out) == 0
    _, rows = cli.read_table(out / "results.csv")
    art = json.loads((out / "fit.json").read_text())
    for entry in art["fits"]:
        got = [r["estimate"] for r in rows if r["quantile"] == entry["quantile"]]
        assert got == entry["beta"]
    run_meta = json.loads((out / "run.json").read_text())
    assert run_meta["schema_version"] == 1 and run_meta["versions"]["cqiv"]


def test_bootstrap_deterministic(csv_path, tmp_path):
    path, _ = csv_path
    outs = []
    for k in range(2):
        out = tmp_path / f"b{k}"
        assert run("bootstrap", "--data", path, *DATA_FLAGS, "--control", "ols", "--B", 25,
                   "--seed", 5, "--quantiles", "0.5", "--dump-draws", "--out", out) == 0
        outs.append(out)
    for name in ("results.csv", "draws_u0.5.csv", "fit.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    _, draws = cli.read_table(outs[0] / "draws_u0.5.csv")
    assert len(draws) == 25


def test_bootstrap_b_zero_leaves_ci_empty(csv_path, tmp_path):
    path, _ = csv_path
    assert run("bootstrap", "--data", path, *DATA_FLAGS, "--B", 0, "--quantiles", "0.5",
               "--control", "ols", "--out", tmp_path) == 0
    _, rows = cli.read_table(tmp_path / "results.csv")
    assert rows and all(math.isnan(r["ci_lower"]) and math.isnan(r["ci_upper"]) for r in rows)


def test_engel_config_three_blocks(tmp_path):
    conf = {"design": "homoskedastic", "n": 300, "seed": 3, "d_powers": [1, 2],
            "control": "ols", "quantiles": [0.25, 0.5, 0.75], "bootstrap": {"B": 20}}
    (tmp_path / "engel.json").write_text(json.dumps(conf))
    assert run("bootstrap", "--config", tmp_path / "engel.json", "--out", tmp_path) == 0
    _, rows = cli.read_table(tmp_path / "results.csv")
    assert sorted({r["quantile"] for r in rows}) == [0.25, 0.5, 0.75]
    for u in (0.25, 0.5, 0.75):
        items = [r["item"] for r in rows if r["quantile"] == u]
        assert items == ["const", "d", "d2", "w:w", "v", "elasticity"]
        assert all(r["ci_lower"] <= r["ci_upper"] for r in rows if r["quantile"] == u)


def test_flags_override_config(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"design": "homoskedastic", "n": 200,
                                                 "quantiles": "0.2,0.4", "control": "qr"}))
    args = cli.build_parser().parse_args(["fit", "--config", str(tmp_path / "c.json"),
                                          "--control", "ols", "--quantiles", "0.5"])
    cfg = cli.load_config(args)
    assert cfg.control == "ols" and cfg.quantiles == [0.5] and cfg.n == 200


@pytest.mark.parametrize("extra", [
    ["--y", "d"],                       # one column in two roles
    ["--quantiles", "0.5,1.5"],
    ["--quantiles", "0"],
    ["--c-value", "1.0"],               # both a censoring column and a constant
    ["--design", "homoskedastic"],      # both data and a design
    ["--q0", "50", "--q1", "60"],
])
def test_config_errors_exit_2(csv_path, tmp_path, extra, capsys):
    path, _ = csv_path
    assert run("fit", "--data", path, *DATA_FLAGS, *extra, "--out", tmp_path) == 2
    assert "configuration error" in capsys.readouterr().err


def test_unknown_config_key_exit_2(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"design": "homoskedastic", "quantile": 0.5}))
    assert run("fit", "--config", tmp_path / "bad.json", "--out", tmp_path) == 2
    assert "quantile" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{not json")
    assert run("fit", "--config", tmp_path / "broken.json") == 2


@pytest.mark.parametrize("body,needle", [
    ("y,d,w,z,c\n1,2,3,4,0\n1,2,3\n", "row 3"),
    ("y,d,w,z,c\n1,2,3,4,0\n1,abc,3,4,0\n", "row 3, column 'd'"),
    ("y,d,w,z,c\n1,2,3,nan,0\n", "non-finite"),
    ("y,d,w,c\n1,2,3,0\n", "missing columns z"),
])
def test_malformed_csv_exit_3(tmp_path, body, needle, capsys):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    assert run("fit", "--data", p, *DATA_FLAGS, "--out", tmp_path) == 3
    assert needle in capsys.readouterr().err


def test_empty_selection_exit_4(tmp_path, capsys):
    rng = np.random.default_rng(2)
    n = 400
    z = rng.normal(size=n)
    ystar = rng.normal(size=n)
    c = float(np.quantile(ystar, 0.4))
    p = tmp_path / "flat.csv"
    with open(p, "w") as fh:
        fh.write("y,d,z\n")
        for a, b, e in zip(np.maximum(ystar, c), z + rng.normal(size=n), z):
            fh.write(f"{float(a)!r},{float(b)!r},{float(e)!r}\n")
    code = run("fit", "--data", p, "--y", "y", "--d", "d", "--z", "z", f"--c-value={c!r}",
               "--control", "ols", "--quantiles", "0.05", "--out", tmp_path)
    assert code == 4
    assert "censoring rate" in capsys.readouterr().err


def test_predict_hand_check(tmp_path):
    art = {"schema_version": 1, "seed": 0, "control_method": "ols",
           "second_stage": {"d_powers": [1, 2], "include_w": True,
                            "control_transform": "normal_quantile", "intercept": True},
           "w_names": ["w"], "censoring_point": 0.0,
           "fits": [{"quantile": 0.5, "names": ["const", "d", "d2", "w:w", "v"],
                     "beta": [1.0, 2.0, -0.5, 0.25, 3.0]}]}
    (tmp_path / "fit.json").write_text(json.dumps(art))
    assert run("predict", "--fit", tmp_path / "fit.json", "--d-grid=-2,0,1",
               "--w-values", "2", "--v-values", "0.5", "--out", tmp_path) == 0
    _, rows = cli.read_table(tmp_path / "curves.csv")
    # v = 0.5 maps to a zero control term; 1 + 2d - d^2/2 + 0.5, floored at 0
    assert [r["prediction"] for r in rows] == [0.0, 1.5, 3.0]
    assert run("predict", "--fit", tmp_path / "fit.json", "--d-grid", "0",
               "--w-values", "1,2", "--out", tmp_path) == 2


def test_end_to_end_console_script(tmp_path):
    base = [sys.executable, "-m", "cqiv.cli"]
    gen = ["--design", "homoskedastic", "--n", "300", "--seed", "4", "--quantiles", "0.5"]
    steps = [
        ["fit", *gen, "--out", tmp_path / "f"],
        ["bootstrap", *gen, "--B", "20", "--out", tmp_path / "b"],
        ["diagnose", *gen, "--out", tmp_path / "d"],
        ["predict", "--fit", tmp_path / "f" / "fit.json", "--d-grid", "0:4:5",
         "--w-values", "1", "--out", tmp_path / "p"],
        ["simulate", "--n", "200", "--replications", "2", "--estimators", "cqiv-ols,tobit-cmle",
         "--quantiles", "0.5", "--out", tmp_path / "s"],
    ]
    for argv in steps:
        proc = subprocess.run(base + [str(a) for a in argv], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    assert os.path.exists(tmp_path / "d" / "diagnostics.csv")
    _, mc = cli.read_table(tmp_path / "s" / "mc_summary.csv")
    assert {r["estimator"] for r in mc} == {"cqiv-ols", "tobit-cmle"}
