"""Method comparison tables and one-axis sweeps on a held-out synthetic suite."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classical import adjoint_recon, cg_sense, gridding_recon, l1_wavelet_recon
from .config import MODES, TrainConfig
from .ddss import load_cases, load_checkpoint, train
from .metrics import evaluate
from .problem import Problem, prepare_problem

log = logging.getLogger(__name__)

CLASSICAL = ("adjoint", "gridding", "cgsense", "l1wavelet")
METHODS = CLASSICAL + MODES
SWEEP_AXES = {"n_iter": int, "lambda_pdc": float}
METRICS = ("psnr", "ssim", "nmse_x1e3")


def reconstruct_classical(method: str, problem: Problem, cfg: TrainConfig) -> np.ndarray:
    """Run one non-learned method; the result is in the problem's normalized units."""
    if method == "adjoint":
        return adjoint_recon(problem.op, problem.y)
    if method == "gridding":
        return gridding_recon(problem.op, problem.density_weights, problem.y)
    if method == "cgsense":
        return cg_sense(problem.op, problem.y, cfg.cg_lambda, cfg.cg_iters).image
    if method == "l1wavelet":
        return l1_wavelet_recon(problem.op, problem.y, cfg.l1_mu, cfg.l1_iters, lipschitz=1.0).image
    raise ValueError(f"unknown classical method {method!r}")


def tune_l1_mu(problem: Problem, truth, cfg: TrainConfig,
               grid=(1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1)) -> tuple[float, dict]:
    """Grid-search the L1-wavelet weight on one case by PSNR against ``truth``."""
    scores = {}
    for mu in grid:
        x = l1_wavelet_recon(problem.op, problem.y, mu, cfg.l1_iters, lipschitz=1.0).image
        scores[mu] = evaluate(truth, problem.to_physical(x))["psnr"]
    return max(scores, key=scores.get), scores


@dataclass
class MetricReport:
    """Per-case metric rows plus per-method aggregates (mean and std).

    NMSE is stored multiplied by 1e3.
    """

    rows: list[dict] = field(default_factory=list)
    config_hash: str = ""

    def add(self, method: str, case: int, metrics: dict) -> None:
        self.rows.append({"method": method, "case": case, "psnr": metrics["psnr"],
                          "ssim": metrics["ssim"], "nmse_x1e3": metrics["nmse"] * 1e3})

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r["method"] for r in self.rows))

    def values(self, method: str, metric: str = "psnr") -> np.ndarray:
        return np.array([r[metric] for r in self.rows if r["method"] == method])

    def mean(self, method: str, metric: str = "psnr") -> float:
        vals = self.values(method, metric)
        if vals.size == 0:
            raise KeyError(f"no rows for method {method!r}")
        return float(vals.mean())

    def aggregates(self) -> list[dict]:
        out = []
        for m in self.methods:
            row = {"method": m, "case": "mean"}
            for k in METRICS:
                vals = self.values(m, k)
                row[k] = float(vals.mean())
                row[f"{k}_std"] = float(vals.std())
            out.append(row)
        return out

    def write_csv(self, path) -> None:
        keys = ["method", "case"] + [k for m in METRICS for k in (m, f"{m}_std")]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, keys)
            w.writeheader()
            for row in self.rows + self.aggregates():
                w.writerow({k: _fmt(row.get(k, "")) for k in keys})

    @classmethod
    def read_csv(cls, path) -> "MetricReport":
        report = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["case"] == "mean":
                    continue
                report.rows.append({"method": row["method"], "case": int(row["case"]),
                                    **{k: float(row[k]) for k in METRICS}})
        return report

    def table(self) -> str:
        lines = [f"{'method':<24} {'PSNR (dB)':>16} {'SSIM':>16} {'NMSE x1e3':>16}"]
        for agg in self.aggregates():
            cells = [f"{agg[k]:.3f} ± {agg[k + '_std']:.3f}" for k in METRICS]
            lines.append(f"{agg['method']:<24} " + " ".join(f"{c:>16}" for c in cells))
        return "\n".join(lines)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


@dataclass(frozen=True)
class ExperimentPlan:
    """Methods to compare, the shared run config, and an optional sweep axis.

    With ``sweep`` set, classical methods are skipped and every learned method
    is trained once per sweep value.
    """

    methods: tuple[str, ...]
    config: TrainConfig
    out_dir: Path
    sweep: str | None = None
    sweep_values: tuple = ()
    train_missing: bool = False
    model_dir: Path | None = None

    def __post_init__(self):
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
        if self.sweep is not None:
            if self.sweep not in SWEEP_AXES:
                raise ValueError(f"sweep axis must be one of {tuple(SWEEP_AXES)}, got {self.sweep!r}")
            if not self.sweep_values:
                raise ValueError("a sweep needs at least one value")
            cast = SWEEP_AXES[self.sweep]
            object.__setattr__(self, "sweep_values", tuple(cast(v) for v in self.sweep_values))
        object.__setattr__(self, "out_dir", Path(self.out_dir))

    def learned_runs(self) -> list[tuple[str, TrainConfig]]:
        """``(row label, training config)`` for every model the plan needs."""
        runs = []
        for m in self.methods:
            if m not in MODES:
                continue
            base = self.config.replace(mode=m)
            if self.sweep is None:
                runs.append((m, base))
            else:
                for v in self.sweep_values:
                    runs.append((f"{m}[{self.sweep}={_label(v)}]", base.replace(**{self.sweep: v})))
        return runs


def _label(v) -> str:
    return f"{v:g}"


def obtain_model(cfg: TrainConfig, model_dir: Path, train_missing: bool = False, eval_cases=None):
    """Load the finished model for ``cfg`` from ``model_dir`` or train it there."""
    d = Path(model_dir) / f"{cfg.mode}-{cfg.model_key()}"
    manifest = d / "checkpoint" / "checkpoint.json"
    if manifest.exists() and json.loads(manifest.read_text())["epoch"] == cfg.epochs - 1:
        net, _ = load_checkpoint(d / "checkpoint")
        return net
    if not train_missing:
        raise FileNotFoundError(
            f"no finished checkpoint for mode={cfg.mode} under {d}; pass --train-missing to train it")
    log.info("training %s model into %s", cfg.mode, d)
    return train(cfg, out_dir=d, eval_cases=eval_cases).net


def run_experiment(plan: ExperimentPlan) -> tuple[MetricReport, list[tuple[str, bool]]]:
    """Evaluate every method on the held-out split and write the outputs.

    Writes ``results.csv`` (per-case rows and per-method means), ``ordering.txt``
    (PASS/FAIL lines), and for sweeps ``sweep.csv`` plus ``sweep.png``.
    """
    out = plan.out_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg = plan.config
    cases = load_cases(cfg, "eval")
    problems = [prepare_problem(c) for c in cases]
    report = MetricReport(config_hash=cfg.signature())

    for m in plan.methods:
        if m in CLASSICAL and plan.sweep is None:
            for i, (p, c) in enumerate(zip(problems, cases)):
                x = reconstruct_classical(m, p, cfg)
                report.add(m, i, evaluate(c.truth, p.to_physical(x)))
    model_dir = plan.model_dir or out / "models"
    for label, run_cfg in plan.learned_runs():
        net = obtain_model(run_cfg, model_dir, plan.train_missing)
        for i, (p, c) in enumerate(zip(problems, cases)):
            x = net.reconstruct(p.op, p.y)
            report.add(label, i, evaluate(c.truth, p.to_physical(x)))

    report.write_csv(out / "results.csv")
    checks = ordering_checks(report, plan)
    (out / "ordering.txt").write_text(
        "".join(f"{'PASS' if ok else 'FAIL'}  {name}\n" for name, ok in checks))
    if plan.sweep is not None:
        write_sweep(report, plan, out)
    (out / "summary.txt").write_text(report.table() + "\n")
    return report, checks


def _series(report: MetricReport, plan: ExperimentPlan, method: str):
    labels = [f"{method}[{plan.sweep}={_label(v)}]" for v in plan.sweep_values]
    return [(v, report.mean(lab, "psnr"), report.mean(lab, "ssim"))
            for v, lab in zip(plan.sweep_values, labels)]


def write_sweep(report: MetricReport, plan: ExperimentPlan, out: Path) -> None:
    learned = [m for m in plan.methods if m in MODES]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", plan.sweep, "psnr", "ssim"])
        for m in learned:
            for v, p, s in _series(report, plan, m):
                w.writerow([m, v, repr(p), repr(s)])
    plot_sweep({m: _series(report, plan, m) for m in learned}, plan.sweep, out / "sweep.png")


def plot_sweep(series: dict, axis: str, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    for name, pts in series.items():
        v = [p[0] for p in pts]
        ax1.plot(v, [p[1] for p in pts], marker="o", label=name)
        ax2.plot(v, [p[2] for p in pts], marker="o", label=name)
    for ax, ylab in ((ax1, "PSNR (dB)"), (ax2, "SSIM")):
        ax.set_xlabel(axis)
        ax.set_ylabel(ylab)
        if axis == "lambda_pdc":
            ax.set_xscale("log")
        ax.grid(alpha=0.3)
    ax1.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def ordering_checks(report: MetricReport, plan: ExperimentPlan | None = None,
                    margin_db: float = 1.0) -> list[tuple[str, bool]]:
    """Expected orderings of mean PSNR, evaluated for every method pair present."""
    have = set(report.methods)
    mean = report.mean
    checks = []
    chain = [m for m in ("supervised", "ddss", "kdss", "ssdu") if m in have]
    for a, b in zip(chain, chain[1:]):
        checks.append((f"{a} >= {b}", mean(a) >= mean(b)))
    chain = [m for m in ("ddss", "l1wavelet", "cgsense", "gridding", "adjoint") if m in have]
    for a, b in zip(chain, chain[1:]):
        checks.append((f"{a} > {b}", mean(a) > mean(b)))
    if {"ddss", "l1wavelet"} <= have:
        checks.append((f"ddss >= l1wavelet + {margin_db} dB", mean("ddss") >= mean("l1wavelet") + margin_db))

    if plan is not None and plan.sweep is not None:
        for m in (m for m in plan.methods if m in MODES):
            pts = {v: p for v, p, _ in _series(report, plan, m)}
            if plan.sweep == "n_iter" and {2, 6, 10} <= set(pts):
                checks.append((f"{m}: n_iter 6 >= n_iter 2 + 0.5 dB", pts[6] >= pts[2] + 0.5))
                checks.append((f"{m}: |n_iter 10 - n_iter 6| <= 1.0 dB", abs(pts[10] - pts[6]) <= 1.0))
            if plan.sweep == "lambda_pdc" and {1.0, 10.0, 100.0} <= set(pts):
                checks.append((f"{m}: lambda_pdc 10 >= lambda_pdc 1", pts[10.0] >= pts[1.0]))
                checks.append((f"{m}: lambda_pdc 10 >= lambda_pdc 100", pts[10.0] >= pts[100.0]))
    return checks
