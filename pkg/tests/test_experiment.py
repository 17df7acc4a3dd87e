import numpy as np
import pytest

import ncrecon.experiment as ex
from ncrecon.config import TrainConfig
from ncrecon.experiment import ExperimentPlan, MetricReport, obtain_model, ordering_checks, run_experiment

TINY = dict(size=16, n_train=2, n_eval=10, ncoil=2, epochs=1, n_iter=2, width=4, batch=2,
            cg_iters=10, l1_iters=10)


@pytest.fixture(scope="module")
def classical_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    plan = ExperimentPlan(("adjoint", "gridding"), TrainConfig(**TINY), out)
    report, checks = run_experiment(plan)
    return out, report, checks


def test_two_methods_ten_cases_bookkeeping(classical_run):
    out, report, checks = classical_run
    assert len(report.rows) == 20
    lines = (out / "results.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 20 + 2
    assert [ln.split(",")[:2] for ln in lines[-2:]] == [["adjoint", "mean"], ["gridding", "mean"]]
    assert [name for name, _ in checks] == ["gridding > adjoint"]
    assert (out / "ordering.txt").read_text().split()[1:] == ["gridding", ">", "adjoint"]


def test_csv_round_trip_and_aggregates(classical_run):
    out, report, _ = classical_run
    back = MetricReport.read_csv(out / "results.csv")
    assert len(back.rows) == len(report.rows)
    for a, b in zip(report.rows, back.rows):
        assert a["method"] == b["method"] and a["case"] == b["case"]
        for k in ex.METRICS:
            assert b[k] == pytest.approx(a[k], rel=1e-6, abs=1e-9)
    for agg in report.aggregates():
        vals = back.values(agg["method"], "psnr")
        assert agg["psnr"] == pytest.approx(vals.mean(), rel=1e-9)
        assert agg["psnr_std"] == pytest.approx(vals.std(), rel=1e-9)


def test_report_invariants(classical_run):
    _, report, _ = classical_run
    for r in report.rows:
        assert -1 <= r["ssim"] <= 1 and r["nmse_x1e3"] >= 0
    assert "adjoint" in report.table() and "±" in report.table()
    with pytest.raises(KeyError):
        report.mean("ddss")


def _fake_report(psnr: dict) -> MetricReport:
    rep = MetricReport()
    for m, v in psnr.items():
        for i in range(3):
            rep.add(m, i, {"psnr": v + 0.1 * i, "ssim": 0.5, "nmse": 0.01})
    return rep


def test_ordering_checks_pass_and_fail():
    good = {"supervised": 32, "ddss": 31, "kdss": 30, "ssdu": 29,
            "l1wavelet": 29.5, "cgsense": 28, "gridding": 25, "adjoint": 20}
    checks = dict(ordering_checks(_fake_report(good)))
    assert len(checks) == 8 and all(checks.values())
    bad = dict(good, ddss=29.8)
    checks = dict(ordering_checks(_fake_report(bad)))
    assert not checks["ddss >= l1wavelet + 1.0 dB"]
    assert not checks["ddss >= kdss"]
    assert checks["ddss > l1wavelet"]


def test_ordering_checks_for_sweeps(tmp_path):
    plan = ExperimentPlan(("ddss",), TrainConfig(), tmp_path, "n_iter", ("2", "6", "10"))
    rep = _fake_report({"ddss[n_iter=2]": 28.0, "ddss[n_iter=6]": 29.0, "ddss[n_iter=10]": 29.5})
    assert all(ok for _, ok in ordering_checks(rep, plan))
    plan = ExperimentPlan(("ddss",), TrainConfig(), tmp_path, "lambda_pdc", (1, 10, 100))
    rep = _fake_report({"ddss[lambda_pdc=1]": 28.0, "ddss[lambda_pdc=10]": 28.5,
                        "ddss[lambda_pdc=100]": 28.6})
    checks = dict(ordering_checks(rep, plan))
    assert checks["ddss: lambda_pdc 10 >= lambda_pdc 1"]
    assert not checks["ddss: lambda_pdc 10 >= lambda_pdc 100"]


def test_plan_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown methods"):
        ExperimentPlan(("adjoint", "magic"), TrainConfig(), tmp_path)
    with pytest.raises(ValueError, match="sweep axis"):
        ExperimentPlan(("ddss",), TrainConfig(), tmp_path, "lr", (1,))
    with pytest.raises(ValueError, match="at least one value"):
        ExperimentPlan(("ddss",), TrainConfig(), tmp_path, "n_iter")
    plan = ExperimentPlan(("adjoint", "ddss", "kdss"), TrainConfig(), tmp_path, "n_iter", ("2", "4"))
    runs = plan.learned_runs()
    assert [label for label, _ in runs] == ["ddss[n_iter=2]", "ddss[n_iter=4]",
                                            "kdss[n_iter=2]", "kdss[n_iter=4]"]
    assert [(c.mode, c.n_iter) for _, c in runs] == [("ddss", 2), ("ddss", 4), ("kdss", 2), ("kdss", 4)]


def test_missing_checkpoint_is_an_error(tmp_path):
    plan = ExperimentPlan(("supervised",), TrainConfig(**TINY), tmp_path)
    with pytest.raises(FileNotFoundError, match="--train-missing"):
        run_experiment(plan)


def test_models_are_cached(tmp_path, monkeypatch):
    cfg = TrainConfig(mode="supervised", **TINY)
    net = obtain_model(cfg, tmp_path, train_missing=True)

    def no_training(*a, **kw):
        raise AssertionError("model should have been loaded")

    monkeypatch.setattr(ex, "train", no_training)
    again = obtain_model(cfg.replace(l1_mu=0.5), tmp_path)
    for name in net.store:
        assert np.array_equal(again.store[name].value, net.store[name].value)


def test_sweep_outputs(tmp_path):
    plan = ExperimentPlan(("adjoint", "supervised"), TrainConfig(**TINY), tmp_path,
                          "n_iter", (1, 2), train_missing=True)
    report, _ = run_experiment(plan)
    assert report.methods == ["supervised[n_iter=1]", "supervised[n_iter=2]"]
    lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "method,n_iter,psnr,ssim" and len(lines) == 3
    assert (tmp_path / "sweep.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
