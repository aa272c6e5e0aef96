import csv
import dataclasses
import json

import numpy as np
import pytest

from ncolab import cli, harness
from ncolab import xlearner as xl
from ncolab.errors import ConfigError
from ncolab.harness import ModelSettings, OracleSpec, RunPlan
from ncolab.metrics import Estimator, Regime
from ncolab.scenarios import dumps_spec, fixture_names, builtin_spec
from ncolab.seeding import derive_stream

from .conftest import make_dataset

TINY = ModelSettings(cf_trees=20, tuning_draws=2, pilot_trees=10, lasso_folds=3)
FILES = ("replications.csv", "summary.csv", "nco_plot.csv", "manifest.json")


def _tiny_spec(scenario="hte", setting="primary", n=1600):
    return dataclasses.replace(builtin_spec(scenario, setting), n=n)


def _plan(out, **kw):
    base = dict(specs=(_tiny_spec(),), replications=2, output_dir=out, models=TINY)
    base.update(kw)
    return RunPlan(**base)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    summary = harness.run_plan(_plan(out))
    return out, summary


def test_files_and_row_counts(tiny_run):
    out, summary = tiny_run
    for name in FILES:
        assert (out / name).exists()
    rows = _read(out / "replications.csv")
    assert len(rows) == 1 + 2 * 5
    assert len(_read(out / "summary.csv")) == 1 + 5
    assert len(_read(out / "nco_plot.csv")) == 1 + 5 * 4
    assert {tuple(r[2:4]) for r in rows[1:]} == {
        ("Oracle", "WithU"), ("CausalForest", "WithU"), ("CausalForest", "WithoutU"),
        ("XLearner", "WithU"), ("XLearner", "WithoutU"),
    }
    assert summary.missing == ()


def test_golden_schemas(tiny_run):
    out, _ = tiny_run
    assert _read(out / "replications.csv")[0] == [
        "scenario", "setting", "estimator", "regime", "rep", "ate", "q1", "q2", "q3", "q4",
        "rmse", "cfb", "nco_q1", "nco_q2", "nco_q3", "nco_q4",
        "nco_coef_q1", "nco_coef_q2", "nco_coef_q3", "nco_coef_q4", "flags",
    ]
    assert _read(out / "summary.csv")[0] == [
        "scenario", "setting", "estimator", "regime", "replications", "failures",
        "ate_median", "ate_lo", "ate_hi", "q1", "q2", "q3", "q4",
        "rmse_median", "rmse_lo", "rmse_hi", "cfb_median", "cfb_lo", "cfb_hi",
    ]
    assert _read(out / "nco_plot.csv")[0] == [
        "scenario", "setting", "estimator", "regime", "quartile",
        "median", "lo", "hi", "coef_median", "coef_lo", "coef_hi",
    ]
    man = json.loads((out / "manifest.json").read_text())
    assert {"config_digest", "master_seed", "spec_digests", "models", "specs", "failure_counts"} <= set(man)
    assert not any("time" in k or "thread" in k for k in man)


def test_oracle_row_has_no_rmse(tiny_run):
    out, _ = tiny_run
    for row in _read(out / "replications.csv")[1:]:
        assert (row[10] == "") == (row[2] == "Oracle")


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    out, _ = tiny_run
    harness.run_plan(_plan(tmp_path))
    for name in FILES:
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_thread_count_does_not_change_results(tiny_run, tmp_path):
    out, _ = tiny_run
    harness.run_plan(_plan(tmp_path, threads=2))
    for name in FILES:
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_shards_concatenate_to_full_run(tiny_run, tmp_path):
    out, _ = tiny_run
    harness.run_plan(_plan(tmp_path / "a", replications=1))
    harness.run_plan(_plan(tmp_path / "b", replications=1, first_rep=1))
    rows = _read(tmp_path / "a" / "replications.csv") + _read(tmp_path / "b" / "replications.csv")[1:]
    assert rows == _read(out / "replications.csv")


def test_read_and_summarize_round_trip(tiny_run, tmp_path):
    out, _ = tiny_run
    results = harness.read_replications(out / "replications.csv")
    assert [harness.replication_row(r) for r in results] == _read(out / "replications.csv")[1:]
    (tmp_path / "replications.csv").write_bytes((out / "replications.csv").read_bytes())
    harness.summarize_dir(tmp_path)
    assert (tmp_path / "summary.csv").read_bytes() == (out / "summary.csv").read_bytes()
    assert (tmp_path / "nco_plot.csv").read_bytes() == (out / "nco_plot.csv").read_bytes()


def test_digest_tracks_configuration(tmp_path):
    a = harness.plan_digest(_plan(None))
    assert a == harness.plan_digest(_plan(tmp_path, threads=3))
    assert a != harness.plan_digest(_plan(None, master_seed=7))
    assert a != harness.plan_digest(_plan(None, models=dataclasses.replace(TINY, cf_trees=21)))


def test_estimator_failures_are_recorded(monkeypatch, tmp_path):
    def boom(*args, **kwargs):
        raise RuntimeError("no fit")

    monkeypatch.setattr(xl, "fit", boom)
    summary = harness.run_plan(_plan(tmp_path, replications=2))
    rows = _read(tmp_path / "replications.csv")[1:]
    failed = [r for r in rows if r[2] == "XLearner"]
    assert len(failed) == 4 and all(r[-1] == "failed:RuntimeError" for r in failed)
    assert ("TrueHTE", "Primary", "XLearner", "WithU") in summary.missing
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["failure_counts"] == {
        "TrueHTE/Primary/XLearner/WithU": 2, "TrueHTE/Primary/XLearner/WithoutU": 2,
    }


@pytest.mark.parametrize(
    "kw", [{"train_fraction": 0.95}, {"replications": 0}, {"threads": 0}, {"first_rep": -1}]
)
def test_plan_validation(kw):
    with pytest.raises(ConfigError):
        _plan(None, **kw).validate()


# ------------------------------------------------------------ oracle and split


def test_split_rows():
    tr, te = harness.split_rows(20_000, 0.75, derive_stream(1, "split"))
    assert tr.size == 15_000 and te.size == 5_000
    assert np.intersect1d(tr, te).size == 0


def test_oracle_terms():
    d = make_dataset("nohte", "relaxed-nco", n=2000)
    spec = OracleSpec.for_names(d.names)
    assert spec.covariates == tuple(f"C{k}" for k in range(1, 14)) + ("U",)
    x = spec.design(d, d.treatment)
    assert x.shape == (2000, 1 + 14 + 3)
    np.testing.assert_array_equal(x[:, -3], d.treatment * d.covariates[:, d.names.index("C11")])


@pytest.mark.parametrize("scenario,setting", [("hte", "primary"), ("nohte", "relaxed-nco")])
def test_plugin_oracle_is_truth(scenario, setting):
    d = make_dataset(scenario, setting, n=3000)
    spec = OracleSpec.for_names(d.names)
    coefs = harness.fit_oracle(d, spec, plugin=True)
    np.testing.assert_allclose(harness.oracle_ite(coefs, d, spec), d.true_ite, atol=1e-12)


def test_refit_oracle_ate(big_hte):
    # a correctly specified refit is unbiased; at 200k rows its ATE error is ~0.002
    d = big_hte
    spec = OracleSpec.for_names(d.names)
    coefs = harness.fit_oracle(d, spec)
    assert abs(harness.oracle_ite(coefs, d, spec).mean() - d.true_ite.mean()) < 0.005


def test_covariate_view_drops_only_u(hte_primary):
    x = harness.covariate_view(hte_primary, Regime.WITHOUT_U)
    assert x.shape[1] == hte_primary.covariates.shape[1] - 1
    assert harness.covariate_view(hte_primary, Regime.WITH_U) is hte_primary.covariates


# ------------------------------------------------------------ CLI


def test_cli_fixtures(capsys):
    assert cli.main(["fixtures", "list"]) == 0
    assert capsys.readouterr().out.split() == fixture_names()
    assert cli.main(["fixtures", "show", "nohte_small-n"]) == 0
    assert capsys.readouterr().out == dumps_spec(builtin_spec("nohte", "small-n"))
    assert cli.main(["fixtures", "show", "nope"]) == 2


def test_cli_run_and_summarize(tmp_path, capsys):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(dumps_spec(_tiny_spec("nohte", "small-n", n=1200)))
    out = tmp_path / "out"
    code = cli.main(
        ["run", "--config", str(cfg), "--reps", "2", "--trees", "10", "--profile", "desk",
         "--seed", "3", "--out", str(out), "-v"]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "NoHTE/SmallSample/Oracle/WithU" in printed
    assert len(_read(out / "replications.csv")) == 11
    man = json.loads((out / "manifest.json").read_text())
    assert man["models"]["cf_trees"] == 10 and man["master_seed"] == [3]
    (out / "summary.csv").unlink()
    assert cli.main(["summarize", "--in", str(out)]) == 0
    assert (out / "summary.csv").exists()


def test_cli_rejects_unknown_setting():
    with pytest.raises(SystemExit):
        cli.main(["run", "--setting", "huge", "--out", "x"])
