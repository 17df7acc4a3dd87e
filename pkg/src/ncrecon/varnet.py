"""Unrolled variational reconstruction network.

Each block computes

    x_i = x_{i-1} - lam_i * E^H (E x_{i-1} - y) + cnn_i(x_{i-1})

starting from ``x_0 = E^H y``.  Images travel through the tape as real
arrays of shape ``(2, H, W)`` holding the real and imaginary parts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core import LinearOperator, channels_to_complex, complex_to_channels


@dataclass(frozen=True)
class RegularizerConfig:
    """Conv stack ``2 -> width -> ... -> 2``; ``depth`` counts conv layers.

    ``kind='mini-unet'`` inserts one 2x average-pool / upsample stage with a
    skip connection.
    """

    kind: str = "plain"
    width: int = 16
    depth: int = 4
    kernel: int = 3
    last_layer_scale: float = 0.1


@dataclass(frozen=True)
class VarNetConfig:
    n_iter: int = 6
    lam_init: float = 1.0
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    share_weights: bool = False

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError(f"n_iter must be >= 1, got {self.n_iter}")


def _layer_plan(cfg: RegularizerConfig):
    """List of (name, cin, cout, relu) conv layers."""
    if cfg.kind == "plain":
        if cfg.depth < 1:
            raise ValueError("regularizer depth must be >= 1")
        chans = [2] + [cfg.width] * (cfg.depth - 1) + [2]
        return [(f"conv{j}", chans[j], chans[j + 1], j < cfg.depth - 1) for j in range(cfg.depth)]
    if cfg.kind == "mini-unet":
        w = cfg.width
        return [("enc0", 2, w, True), ("enc1", w, w, True), ("mid0", w, 2 * w, True),
                ("mid1", 2 * w, 2 * w, True), ("dec0", 3 * w, w, True), ("dec1", w, 2, False)]
    raise ValueError(f"unknown regularizer kind {cfg.kind!r}")


class ConvRegularizer:
    """Small CNN regularizer whose weights live in a :class:`ParamStore`."""

    def __init__(self, cfg: RegularizerConfig, store: ad.ParamStore, prefix: str,
                 rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.layers = _layer_plan(cfg)
        self.prefix = prefix
        self.store = store
        k = cfg.kernel
        for i, (name, cin, cout, _) in enumerate(self.layers):
            std = np.sqrt(2.0 / (cin * k * k))
            if i == len(self.layers) - 1:
                std *= cfg.last_layer_scale
            store.add(f"{prefix}.{name}.w", (rng.standard_normal((cout, cin, k, k)) * std).astype(dtype))
            store.add(f"{prefix}.{name}.b", np.zeros(cout, dtype=dtype))

    def _conv(self, x, name, relu):
        out = ad.conv2d(x, self.store[f"{self.prefix}.{name}.w"], self.store[f"{self.prefix}.{name}.b"])
        return ad.relu(out) if relu else out

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        if self.cfg.kind == "plain":
            for name, _, _, relu in self.layers:
                x = self._conv(x, name, relu)
            return x
        layers = {name: relu for name, _, _, relu in self.layers}
        e = self._conv(self._conv(x, "enc0", True), "enc1", True)
        m = ad.avg_pool2(e)
        m = self._conv(self._conv(m, "mid0", True), "mid1", True)
        d = ad.concat([ad.upsample2(m), e], axis=0)
        d = self._conv(d, "dec0", layers["dec0"])
        return self._conv(d, "dec1", layers["dec1"])


def encode(op: LinearOperator, x: ad.Tensor) -> ad.Tensor:
    """``E x`` as a tape primitive: ``(2, H, W) -> (2, C, M)``; backward is ``E^H``."""
    return ad.linear(
        x,
        lambda a: complex_to_channels(op.apply(channels_to_complex(a))),
        lambda g: complex_to_channels(op.apply_adjoint(channels_to_complex(g))),
        "encode",
    )


def encode_adjoint(op: LinearOperator, r: ad.Tensor) -> ad.Tensor:
    return ad.linear(
        r,
        lambda g: complex_to_channels(op.apply_adjoint(channels_to_complex(g))),
        lambda a: complex_to_channels(op.apply(channels_to_complex(a))),
        "encode_adjoint",
    )


def dc_term(op: LinearOperator, x, y, lam: float) -> np.ndarray:
    """Data-consistency update ``lam * E^H (E x - y)`` on complex arrays."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return lam * op.apply_adjoint(op.apply(x) - y)


@dataclass
class VarNetState:
    """Intermediate images ``x_0 .. x_n`` of one forward pass."""

    images: list[ad.Tensor]


class VarNet:
    """Unrolled gradient-descent network with per-iteration learnable ``lam_i``."""

    def __init__(self, cfg: VarNetConfig, store: ad.ParamStore | None = None, seed: int = 0,
                 dtype=np.float32):
        self.cfg = cfg
        self.store = ad.ParamStore() if store is None else store
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.regularizers = []
        shared = None
        for i in range(cfg.n_iter):
            self.store.add(f"lam{i}", np.asarray(cfg.lam_init, dtype=dtype))
            if cfg.share_weights:
                shared = shared or ConvRegularizer(cfg.regularizer, self.store, "cnn", rng, dtype)
                self.regularizers.append(shared)
            else:
                self.regularizers.append(
                    ConvRegularizer(cfg.regularizer, self.store, f"cnn{i}", rng, dtype))

    def lambda_names(self) -> list[str]:
        return [f"lam{i}" for i in range(self.cfg.n_iter)]

    def project(self) -> None:
        """Clamp every ``lam_i`` at zero."""
        for name in self.lambda_names():
            t = self.store[name]
            t.value = np.maximum(t.value, 0).astype(t.value.dtype)

    def forward(self, op: LinearOperator, y: np.ndarray) -> tuple[ad.Tensor, VarNetState]:
        y = np.asarray(y)
        cdtype = np.result_type(self.dtype, np.complex64)
        y = y.astype(cdtype, copy=False)
        y_t = ad.constant(complex_to_channels(y))
        x = ad.constant(complex_to_channels(op.apply_adjoint(y)).astype(self.dtype))
        states = [x]
        for i in range(self.cfg.n_iter):
            residual = ad.sub(encode(op, x), y_t)
            dc = ad.mul(self.store[f"lam{i}"], encode_adjoint(op, residual))
            x = ad.add(ad.sub(x, dc), self.regularizers[i](x))
            if not np.all(np.isfinite(x.value)):
                raise FloatingPointError(f"non-finite values after block {i + 1}")
            states.append(x)
        return x, VarNetState(states)

    __call__ = forward

    def reconstruct(self, op: LinearOperator, y: np.ndarray) -> np.ndarray:
        """Forward pass returning the complex image, without keeping gradients."""
        out, _ = self.forward(op, y)
        return channels_to_complex(out.value)

    def n_parameters(self) -> int:
        return self.store.n_parameters()
