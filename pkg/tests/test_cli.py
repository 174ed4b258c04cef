import numpy as np
import pandas
import pytest
import yaml

import debiasing
from debiasing import cli

from . import init

SMALL = """\
model:
  n: 30
  p: 12
  beta:
    kind: sparse
    s: 2
penalties:
  - kind: lasso
    lambdas: [0.1]
directions:
  - kind: canonical
    index: 1
mc:
  reps: 3
  seed: 5
"""


def write_instance(directory, n=init.N, p=init.P):
    instance = init.init_instance(n, p)
    x_path, y_path = directory / "X.csv", directory / "y.csv"
    pandas.DataFrame(instance.X, columns=["x{}".format(j + 1) for j in range(p)]).to_csv(x_path, index=False)
    pandas.DataFrame({"y": instance.y}).to_csv(y_path, index=False)
    return instance, ["--x", str(x_path), "--y", str(y_path)]


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().out


def test_fit(tmp_path, capsys):
    init.log("cli ~ Testing fit")
    instance, data = write_instance(tmp_path)
    out = tmp_path / "beta.csv"
    code, stdout = run(capsys, "fit", *data, "--penalty", "lasso", "--lambda", str(init.LAMBDA), "--out", str(out))
    assert code == 0
    report = yaml.safe_load(stdout)
    fitted = debiasing.fit(instance, debiasing.Lasso(init.LAMBDA))
    assert report["active_size"] == fitted.active_size
    assert report["objective"] == pytest.approx(fitted.objective)
    assert np.allclose(pandas.read_csv(out)["beta"].to_numpy(), fitted.beta_hat)


def test_debias(tmp_path, capsys):
    init.log("cli ~ Testing debias")
    instance, data = write_instance(tmp_path)
    code, stdout = run(capsys, "debias", *data, "--lambda", str(init.LAMBDA), "--direction", "1")
    assert code == 0
    report = yaml.safe_load(stdout)
    fitted = debiasing.fit(instance, debiasing.Lasso(init.LAMBDA))
    assert report["fit"]["active_size"] == fitted.active_size
    assert "debias" in report


def test_ci(tmp_path, capsys):
    init.log("cli ~ Testing ci")
    instance, data = write_instance(tmp_path)
    cov_path = tmp_path / "cov.csv"
    pandas.DataFrame(np.eye(instance.p)).to_csv(cov_path, index=False)
    code, stdout = run(capsys, "ci", *data, "--lambda", str(init.LAMBDA), "--cov", str(cov_path), "--alpha", "0.1")
    assert code == 0
    report = yaml.safe_load(stdout)
    assert set(report["intervals"]) == {"narrow", "spike", "quadratic", "default"}
    narrow = report["intervals"]["narrow"]
    assert narrow["lo"] <= narrow["hi"]

    pen = debiasing.Lasso(init.LAMBDA)
    fitted = debiasing.fit(instance, pen)
    direction = debiasing.normalize_direction(np.eye(instance.p)[0], debiasing.CovarianceSpec.identity(instance.p), instance.X)
    expected = debiasing.ci_narrow(fitted, direction, pen, alpha=0.1)
    assert narrow["lo"] == pytest.approx(expected.lo)
    assert narrow["hi"] == pytest.approx(expected.hi)


def test_simulate(tmp_path, capsys):
    init.log("cli ~ Testing simulate")
    path = tmp_path / "small.yaml"
    path.write_text(SMALL)
    prefix = str(tmp_path / "run")
    code, stdout = run(capsys, "simulate", "--config", str(path), "--out", prefix, "--reps", "2")
    assert code == 0
    report = yaml.safe_load(stdout)
    assert report["reps"] == 2
    for suffix in (".reps.csv", ".aggregate.csv", ".qq.csv"):
        assert (tmp_path / ("run" + suffix)).is_file()
    assert pandas.read_csv(prefix + ".reps.csv").shape[0] == 2
    assert report["v0"] == "vhat" and report["sparsity_rate"] == 1.0
    assert [row["penalty_id"] for row in report["pivots"]] == [0]

    code, stdout = run(capsys, "simulate", "--config", str(path), "--out", prefix, "--reps", "2", "--v0", "resid")
    assert code == 0
    assert yaml.safe_load(stdout)["v0"] == "resid"
    assert (pandas.read_csv(prefix + ".aggregate.csv")["v0"] == "resid").all()
    assert cli.main(["simulate", "--config", str(path), "--v0", "oracle"]) == 1


def test_stein_check(capsys):
    init.log("cli ~ Testing stein-check")
    code, stdout = run(capsys, "stein-check", "--fn", "linear-identity", "--n", "5", "--reps", "2000", "--seed", "3")
    assert code == 0
    report = yaml.safe_load(stdout)
    assert report["function"] == "linear-identity"
    assert report["second_order"]["reps"] == 2000
    assert "approximation" in report

    code, stdout = run(capsys, "stein-check", "--fn", "linear-identity", "--n", "5", "--reps", "200")
    assert code == 0
    assert "approximation" not in yaml.safe_load(stdout)


def test_exit_codes(tmp_path, capsys):
    init.log("cli ~ Testing the exit codes")
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["fit", "--bogus"]) == 1
    assert cli.main(["fit", "--lambda", "-1"]) == 1
    assert cli.main(["fit", "--lambda", "0.1"]) == 1
    assert cli.main(["stein-check"]) == 1
    assert cli.main(["stein-check", "--fn", "quartic"]) == 1
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert cli.main(["--version"]) == 0
    assert debiasing.__version__ in capsys.readouterr().out

    instance, data = write_instance(tmp_path, n=20, p=3)
    cov_path = tmp_path / "cov.csv"
    pandas.DataFrame([[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).to_csv(cov_path, index=False)
    assert cli.main(["ci", *data, "--lambda", "0.1", "--cov", str(cov_path)]) == 2
    assert cli.main(["ci", *data, "--lambda", "0.1", "--direction", "4"]) == 1
    assert cli.main(["fit", *data, "--penalty", "group_lasso", "--lambda", "0.1"]) == 1

    design = pandas.read_csv(tmp_path / "X.csv").astype(object)
    design.iloc[1, 0] = "foo"
    design.to_csv(tmp_path / "X.csv", index=False)
    assert cli.main(["fit", *data, "--lambda", "0.1"]) == 1


def test_parse_groups():
    init.log("cli ~ Testing parse_groups")
    assert cli.parse_groups("2", 6) == [[0, 1], [2, 3], [4, 5]]
    assert cli.parse_groups("1-3;4,5,6", 6) == [[0, 1, 2], [3, 4, 5]]
    with pytest.raises(debiasing.errors.InputError):
        cli.parse_groups("4", 6)
    with pytest.raises(debiasing.errors.InputError):
        cli.parse_groups("1-x", 6)


def test_parse_direction():
    init.log("cli ~ Testing parse_direction")
    assert np.array_equal(cli.parse_direction("2", 3), [0.0, 1.0, 0.0])
    assert np.array_equal(cli.parse_direction("1, -1, 0.5", 3), [1.0, -1.0, 0.5])
    for value in ("0", "4", "1,2", "a,b,c"):
        with pytest.raises(debiasing.errors.InputError):
            cli.parse_direction(value, 3)
