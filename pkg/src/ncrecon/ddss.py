"""Self-supervised (DDSS, KDSS, SSDU) and supervised training of the VarNet."""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .classical import power_iteration
from .config import TrainConfig, parse_config
from .core import channels_to_complex, complex_to_channels, load_array, save_array
from .metrics import evaluate
from .problem import Problem, prepare_problem
from .simulation import (DatasetConfig, PhantomSpec, SimulatedCase, make_dataset, read_case,
                         simulate_case)
from .trajectory import PartitionPair, SamplingSpec, generate_vd_trajectory, partition
from .varnet import RegularizerConfig, VarNet, VarNetConfig, encode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    img: float = 2.0
    grad: float = 1.0
    pdc: float = 10.0


def _diff(axis):
    """Forward difference along ``axis`` of a ``(2, H, W)`` array; last entry 0."""

    def fwd(v):
        out = np.zeros_like(v)
        hi = [slice(None)] * v.ndim
        lo = [slice(None)] * v.ndim
        hi[axis], lo[axis] = slice(1, None), slice(None, -1)
        out[tuple(lo)] = v[tuple(hi)] - v[tuple(lo)]
        return out

    def adj(g):
        out = np.zeros_like(g)
        hi = [slice(None)] * g.ndim
        lo = [slice(None)] * g.ndim
        hi[axis], lo[axis] = slice(1, None), slice(None, -1)
        out[tuple(hi)] += g[tuple(lo)]
        out[tuple(lo)] -= g[tuple(lo)]
        return out

    return fwd, adj


_GRAD_V = _diff(1)
_GRAD_H = _diff(2)


def grad_v(x: ad.Tensor) -> ad.Tensor:
    return ad.linear(x, *_GRAD_V, op="grad_v")


def grad_h(x: ad.Tensor) -> ad.Tensor:
    return ad.linear(x, *_GRAD_H, op="grad_h")


def data_l1(op, x: ad.Tensor, y) -> ad.Tensor:
    """``|E x - y|_1`` summed over real and imaginary channels."""
    return ad.l1_loss(ad.sub(encode(op, x), ad.constant(complex_to_channels(np.asarray(y)))))


def pdc_loss(op, x_p1, x_p2, x_u, y) -> ad.Tensor:
    """Partition data consistency: every reconstruction is projected with the full operator."""
    return ad.add(ad.add(data_l1(op, x_p1, y), data_l1(op, x_p2, y)), data_l1(op, x_u, y))


def _pair_terms(a, b, weights: LossWeights):
    d = ad.sub(a, b)
    img = ad.l1_loss(d)
    grad = ad.add(ad.l1_loss(grad_v(d)), ad.l1_loss(grad_h(d)))
    return img, grad


def ac_loss(x_p1, x_p2, x_u, weights: LossWeights = LossWeights()) -> ad.Tensor:
    """Appearance consistency over the pairs (u, p1), (u, p2), (p1, p2)."""
    i1, g1 = _pair_terms(x_u, x_p1, weights)
    i2, g2 = _pair_terms(x_u, x_p2, weights)
    i3, g3 = _pair_terms(x_p1, x_p2, weights)
    img = ad.add(ad.add(i1, i2), i3)
    grad = ad.add(ad.add(g1, g2), g3)
    return ad.add(ad.scale(img, weights.img), ad.scale(grad, weights.grad))


@dataclass
class StepOutput:
    loss: ad.Tensor
    parts: dict[str, float] = field(default_factory=dict)
    images: dict[str, ad.Tensor] = field(default_factory=dict)
    partition: PartitionPair | None = None


PARTITION_POWER_ITERS = 10


def restrict(problem: Problem, indices):
    """Partition-restricted operator and data, renormalized to unit spectral norm.

    Operator and data are multiplied by the same factor, so the least-squares
    solution and the image units are unchanged; only the conditioning of the
    unrolled gradient steps is restored to that of the full problem.
    """
    op = problem.op.subset(indices)
    gain = 1.0 / np.sqrt(power_iteration(op, PARTITION_POWER_ITERS))
    y = problem.y[:, indices] * np.asarray(gain, dtype=problem.y.real.dtype)
    return op.with_scale(op.scale * gain), y


def split_problem(problem: Problem, rng, rate_range=(0.2, 0.8)):
    """Draw a partition and return ``(pair, (op1, y1), (op2, y2))``."""
    pair = partition(problem.y.shape[-1], rng, rate_range=rate_range)
    return pair, restrict(problem, pair.p1), restrict(problem, pair.p2)


def ddss_step(problem: Problem, net: VarNet, weights: LossWeights, rng,
              rate_range=(0.2, 0.8), use_ac: bool = True, split=None) -> StepOutput:
    """Three shared-weight reconstructions (full data and both partitions) and the DDSS loss.

    ``split`` takes a precomputed :func:`split_problem` result instead of drawing one from ``rng``.
    """
    pair, (op1, y1), (op2, y2) = split or split_problem(problem, rng, rate_range)
    x_u, _ = net(problem.op, problem.y)
    x_p1, _ = net(op1, y1)
    x_p2, _ = net(op2, y2)
    pdc = pdc_loss(problem.op, x_p1, x_p2, x_u, problem.y)
    loss = ad.scale(pdc, weights.pdc)
    parts = {"pdc": float(pdc.value), "rate": pair.rate}
    if use_ac:
        ac = ac_loss(x_p1, x_p2, x_u, weights)
        loss = ad.add(ac, loss)
        parts["ac"] = float(ac.value)
    return StepOutput(loss, parts, {"u": x_u, "p1": x_p1, "p2": x_p2}, pair)


def kdss_step(problem, net, weights, rng, rate_range=(0.2, 0.8)) -> StepOutput:
    """DDSS with the appearance-consistency term removed."""
    return ddss_step(problem, net, weights, rng, rate_range, use_ac=False)


def ssdu_step(problem, net, weights, rng, rate_range=(0.2, 0.8)) -> StepOutput:
    """Reconstruct from partition 1 and predict the samples of partition 2."""
    pair, (op1, y1), (op2, y2) = split_problem(problem, rng, rate_range)
    x_p1, _ = net(op1, y1)
    loss = data_l1(op2, x_p1, y2)
    return StepOutput(loss, {"rate": pair.rate}, {"p1": x_p1}, pair)


def supervised_step(problem, net, weights=None, rng=None, rate_range=None) -> StepOutput:
    if problem.truth is None:
        raise ValueError("supervised training needs ground truth images")
    x_u, _ = net(problem.op, problem.y)
    target = ad.constant(complex_to_channels(problem.truth).astype(x_u.value.dtype))
    return StepOutput(ad.l1_loss(ad.sub(x_u, target)), {}, {"u": x_u})


STEPS = {"ddss": ddss_step, "kdss": kdss_step, "ssdu": ssdu_step, "supervised": supervised_step}


# --- datasets and checkpoints -----------------------------------------------

def dataset_config(cfg: TrainConfig, split: str) -> DatasetConfig:
    n = cfg.n_train if split == "train" else cfg.n_eval
    # train and eval share the trajectory seed (same protocol) but not the case seeds
    return DatasetConfig(shape=(cfg.size, cfg.size), accel=cfg.accel, n_cases=n, ncoil=cfg.ncoil,
                         noise_sigma=cfg.noise_sigma, seed=cfg.data_seed,
                         per_example_trajectory=cfg.per_example_trajectory)


EVAL_SEED_OFFSET = 10**7


def load_cases(cfg: TrainConfig, split: str) -> list[SimulatedCase]:
    """Cases of the ``train`` or ``eval`` split, read from disk or simulated.

    Simulated eval cases share the sampling protocol (and, by default, the
    trajectory) of the training split but use disjoint phantom seeds.
    """
    if split not in ("train", "eval"):
        raise ValueError(f"split must be 'train' or 'eval', got {split!r}")
    if cfg.dataset:
        root = Path(cfg.dataset) / split
        dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists()) \
            if root.is_dir() else []
        if not dirs:
            raise FileNotFoundError(f"no cases found under {root}")
        return [read_case(d) for d in dirs]
    dcfg = dataset_config(cfg, split)
    if split == "train":
        return make_dataset(dcfg)
    sampling = SamplingSpec(image_shape=dcfg.shape, accel=dcfg.accel, seed=dcfg.seed)
    shared = None if dcfg.per_example_trajectory else generate_vd_trajectory(sampling)
    phantom = PhantomSpec(shape=dcfg.shape, kind=dcfg.kind)
    return [
        simulate_case(phantom, sampling, dcfg.ncoil, dcfg.noise_sigma,
                      seed=EVAL_SEED_OFFSET + dcfg.seed * 1009 + i, trajectory=shared)
        for i in range(dcfg.n_cases)
    ]


def build_net(cfg: TrainConfig) -> VarNet:
    reg = RegularizerConfig(kind=cfg.regularizer, width=cfg.width, depth=cfg.depth)
    vcfg = VarNetConfig(n_iter=cfg.n_iter, lam_init=cfg.lam_init, regularizer=reg,
                        share_weights=cfg.share_weights)
    return VarNet(vcfg, seed=cfg.seed)


def save_checkpoint(directory, net: VarNet, cfg: TrainConfig, epoch: int) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blobs = {}
    for name, t in net.store.params.items():
        fname = f"{name}.bin"
        save_array(d / fname, np.asarray(t.value, dtype=np.float32))
        blobs[name] = fname
    manifest = {
        "config": cfg.to_text(),
        "epoch": epoch,
        "step": net.store.step,
        "lambdas": [float(net.store[n].value) for n in net.lambda_names()],
        "layers": [list(layer) for layer in net.regularizers[0].layers],
        "weights": blobs,
        "signature": cfg.signature(),
    }
    (d / "checkpoint.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return d


def load_checkpoint(directory) -> tuple[VarNet, TrainConfig]:
    d = Path(directory)
    manifest = json.loads((d / "checkpoint.json").read_text())
    cfg = parse_config(manifest["config"])
    net = build_net(cfg)
    net.store.load_state({k: load_array(d / f) for k, f in manifest["weights"].items()})
    net.store.step = int(manifest["step"])
    return net, cfg


# --- training -----------------------------------------------------------------

class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainResult:
    net: VarNet
    history: list[dict]
    checkpoint: Path | None


def evaluate_net(net: VarNet, problems, cases) -> dict[str, float]:
    rows = [evaluate(c.truth, p.to_physical(net.reconstruct(p.op, p.y))) for p, c in zip(problems, cases)]
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def train(cfg: TrainConfig, out_dir=None, train_cases=None, eval_cases=None,
          eval_every: int = 1) -> TrainResult:
    """Train one model; writes per-epoch checkpoints and ``metrics.csv`` when ``out_dir`` is set."""
    train_cases = load_cases(cfg, "train") if train_cases is None else train_cases
    eval_cases = load_cases(cfg, "eval") if eval_cases is None else eval_cases
    train_problems = [prepare_problem(c) for c in train_cases]
    eval_problems = [prepare_problem(c) for c in eval_cases]
    net = build_net(cfg)
    step_fn = STEPS[cfg.mode]
    weights = LossWeights(cfg.lambda_img, cfg.lambda_grad, cfg.lambda_pdc)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDD55]))
    out = Path(out_dir) if out_dir is not None else None
    history: list[dict] = []
    last_good = None
    n_steps, total_steps = 0, cfg.epochs * -(-len(train_problems) // cfg.batch)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_problems))
        losses = []
        for start in range(0, len(order), cfg.batch):
            batch = order[start:start + cfg.batch]
            for idx in batch:
                res = step_fn(train_problems[idx], net, weights, rng, (cfg.rate_min, cfg.rate_max))
                value = float(res.loss.value)
                if not np.isfinite(value):
                    raise TrainingAborted(
                        f"non-finite loss at epoch {epoch}; last good checkpoint: {last_good}")
                losses.append(value)
                ad.scale(res.loss, 1.0 / len(batch)).backward()
            try:
                ad.adam_step(net.store, cfg.lr_at(n_steps, total_steps), cfg.beta1, cfg.beta2)
                n_steps += 1
            except FloatingPointError as exc:
                raise TrainingAborted(f"{exc}; last good checkpoint: {last_good}") from exc
            net.project()
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)),
               "time_s": time.perf_counter() - t0}
        if eval_problems and ((epoch + 1) % eval_every == 0 or epoch == cfg.epochs - 1):
            row.update(evaluate_net(net, eval_problems, eval_cases))
        history.append(row)
        log.info("epoch %d %s", epoch, row)
        if out is not None:
            last_good = save_checkpoint(out / "checkpoint", net, cfg, epoch)
            write_history(out / "metrics.csv", history)
    return TrainResult(net, history, last_good)


def write_history(path, history):
    keys = ["epoch", "train_loss", "psnr", "ssim", "nmse"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in history:
            w.writerow([_fmt_num(row.get(k, "")) for k in keys])


def _fmt_num(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v
