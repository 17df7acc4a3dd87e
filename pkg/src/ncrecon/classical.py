"""Non-learned reconstructions: adjoint, gridding, CG-SENSE and L1-wavelet FISTA."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import pywt

from .core import LinearOperator, inner_product, l2_norm

WAVELET = "db4"
WAVELET_LEVELS = 3


@dataclass
class ReconResult:
    image: np.ndarray
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    wall_time_s: float = 0.0


def adjoint_recon(op: LinearOperator, y) -> np.ndarray:
    return op.apply_adjoint(y)


def gridding_recon(op: LinearOperator, weights, y) -> np.ndarray:
    """Density-compensated adjoint ``E^H (W y)``; ``weights`` has one entry per sample."""
    y = np.asarray(y)
    weights = np.asarray(weights)
    if weights.shape != (y.shape[-1],):
        raise ValueError(f"expected {y.shape[-1]} density weights, got shape {weights.shape}")
    return op.apply_adjoint(y * weights.astype(np.finfo(y.dtype).dtype))


def cg_sense(op: LinearOperator, y, lam: float = 1e-4, max_iter: int = 50,
             tol: float = 1e-6) -> ReconResult:
    """Solve ``(E^H E + lam I) x = E^H y`` from ``x = 0``.

    Uses the conjugate-residual form of CG, which minimizes the normal-equation
    residual over the Krylov space, so ``residual_history`` (relative to
    ``|E^H y|``) never increases.
    """
    if lam < 0:
        raise ValueError(f"Tikhonov weight must be >= 0, got {lam}")
    t0 = time.perf_counter()

    def normal(v):
        return op.normal(v) + lam * v

    b = op.apply_adjoint(y)
    bnorm = l2_norm(b)
    x = np.zeros_like(b)
    if bnorm == 0:
        return ReconResult(x, 0, [0.0], time.perf_counter() - t0)
    r = b.copy()
    ar = normal(r)
    p, ap = r.copy(), ar.copy()
    rar = inner_product(r, ar).real
    history = [1.0]
    it = 0
    for it in range(1, max_iter + 1):
        alpha = rar / l2_norm(ap) ** 2
        x = x + alpha * p
        r = r - alpha * ap
        res = l2_norm(r) / bnorm
        if not np.isfinite(res):
            raise FloatingPointError(f"CG-SENSE residual became non-finite at iteration {it}")
        history.append(res)
        if res <= tol:
            break
        ar = normal(r)
        rar_new = inner_product(r, ar).real
        beta = rar_new / rar
        rar = rar_new
        p = r + beta * p
        ap = ar + beta * ap
    return ReconResult(x, it, history, time.perf_counter() - t0)


# --- wavelets ----------------------------------------------------------------

def _pad_shape(shape, levels):
    m = 2**levels
    return tuple(int(np.ceil(s / m) * m) for s in shape)


def wavelet_forward(image, levels: int = WAVELET_LEVELS, wavelet: str = WAVELET) -> np.ndarray:
    """Orthonormal separable 2D wavelet coefficients packed into one array.

    Real and imaginary parts are transformed separately.  Shapes that are not
    multiples of ``2**levels`` are zero-padded.
    """
    image = np.asarray(image)
    padded = _pad_shape(image.shape, levels)
    if padded != image.shape:
        image = np.pad(image, [(0, p - s) for p, s in zip(padded, image.shape)])

    def fwd(part):
        with warnings.catch_warnings():
            # periodized transforms stay orthonormal past pywt's recommended depth
            warnings.simplefilter("ignore", UserWarning)
            coeffs = pywt.wavedec2(part, wavelet, mode="periodization", level=levels)
        return pywt.coeffs_to_array(coeffs)[0]

    if np.iscomplexobj(image):
        return fwd(image.real) + 1j * fwd(image.imag)
    return fwd(image)


def wavelet_inverse(coeffs, shape=None, levels: int = WAVELET_LEVELS,
                    wavelet: str = WAVELET) -> np.ndarray:
    coeffs = np.asarray(coeffs)
    shape = coeffs.shape if shape is None else tuple(shape)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        template = pywt.wavedec2(np.zeros(coeffs.shape), wavelet, mode="periodization",
                                 level=levels)
    slices = pywt.coeffs_to_array(template)[1]

    def inv(part):
        c = pywt.array_to_coeffs(part, slices, output_format="wavedec2")
        return pywt.waverec2(c, wavelet, mode="periodization")

    out = inv(coeffs.real) + 1j * inv(coeffs.imag) if np.iscomplexobj(coeffs) else inv(coeffs)
    return out[: shape[0], : shape[1]]


def soft_threshold(c, thresh):
    """Complex soft thresholding ``c * max(0, 1 - t/|c|)``."""
    c = np.asarray(c)
    mag = np.abs(c)
    scale = np.maximum(0.0, 1.0 - thresh / np.maximum(mag, np.finfo(float).tiny))
    return c * scale


def power_iteration(op: LinearOperator, n_iter: int = 20, seed: int = 0) -> float:
    """Estimate the largest eigenvalue of ``E^H E``."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.in_shape) + 1j * rng.standard_normal(op.in_shape)
    v /= l2_norm(v)
    est = 0.0
    for _ in range(n_iter):
        w = op.normal(v)
        est = inner_product(v, w).real
        v = w / l2_norm(w)
    return float(est)


DIVERGENCE_RTOL = 1e-5


def l1_wavelet_recon(op: LinearOperator, y, mu: float, n_iter: int = 100,
                     lipschitz: float | None = None) -> ReconResult:
    """FISTA for ``0.5 |Ex - y|^2 + mu |Psi x|_1`` with adaptive momentum restart.

    ``residual_history`` holds the objective after each iteration.
    """
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    t0 = time.perf_counter()
    lip = power_iteration(op) if lipschitz is None else lipschitz
    step = 1.0 / lip
    shape = op.in_shape

    def objective(x):
        r = op.apply(x) - y
        return 0.5 * l2_norm(r) ** 2 + mu * float(np.sum(np.abs(wavelet_forward(x))))

    x = np.zeros(shape, dtype=np.result_type(y.dtype, np.complex64))
    z, t = x.copy(), 1.0
    history = [objective(x)]
    rises = 0
    for it in range(1, n_iter + 1):
        grad = op.apply_adjoint(op.apply(z) - y)
        x_new = wavelet_inverse(soft_threshold(wavelet_forward(z - step * grad), mu * step), shape)
        x_new = x_new.astype(x.dtype)
        obj = objective(x_new)
        if not np.isfinite(obj):
            raise FloatingPointError(f"FISTA objective became non-finite at iteration {it}")
        if obj > history[-1]:
            # rises within float32 round-off near the optimum are not divergence
            rises = rises + 1 if obj > history[-1] * (1 + DIVERGENCE_RTOL) else 0
            if rises >= 3:
                raise FloatingPointError(
                    f"FISTA diverging: objective rose 3 iterations in a row "
                    f"(last values {history[-3:] + [obj]}, step {step:.3g})"
                )
            t_new = 1.0  # restart momentum
            z = x_new
        else:
            rises = 0
            t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
            z = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        history.append(obj)
    return ReconResult(x, n_iter, history, time.perf_counter() - t0)
