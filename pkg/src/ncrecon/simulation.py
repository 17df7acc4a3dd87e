"""Synthetic complex-valued multi-coil phantoms and undersampled k-space."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import COMPLEX, check_image_shape, load_array, save_array
from .nufft import SenseOperator, Trajectory, plan_nufft
from .trajectory import SamplingSpec, generate_vd_trajectory

# Modified Shepp-Logan: (intensity, semi-axis a, semi-axis b, x0, y0, angle deg)
_SHEPP_LOGAN = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0),
]


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int] = (64, 64)
    kind: str = "random-ellipses"
    n_ellipses: int = 10
    intensity_range: tuple[float, float] = (-0.4, 0.4)
    axis_range: tuple[float, float] = (0.05, 0.35)
    phase_degree: int = 2
    phase_scale: float = 1.0
    sinusoid_amplitude: float = 0.5
    seed: int = 0


def _grid(shape):
    ny, nx = shape
    # normalized coordinates in [-1, 1), y pointing up the rows
    yy = (np.arange(ny) - ny // 2) / (ny / 2)
    xx = (np.arange(nx) - nx // 2) / (nx / 2)
    return np.meshgrid(yy, xx, indexing="ij")


def _ellipse(yy, xx, a, b, x0, y0, angle_deg):
    t = np.deg2rad(angle_deg)
    dx, dy = xx - x0, yy - y0
    u = dx * np.cos(t) + dy * np.sin(t)
    v = -dx * np.sin(t) + dy * np.cos(t)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _magnitude(spec: PhantomSpec, rng) -> np.ndarray:
    yy, xx = _grid(spec.shape)
    img = np.zeros(spec.shape)
    if spec.kind == "shepp-logan":
        ellipses = _SHEPP_LOGAN
    elif spec.kind == "random-ellipses":
        lo, hi = spec.axis_range
        if lo <= 0 or hi < lo:
            raise ValueError(f"degenerate ellipse axis range {spec.axis_range}")
        head_a, head_b = rng.uniform(0.6, 0.8), rng.uniform(0.75, 0.92)
        ellipses = [
            (rng.uniform(0.7, 0.9), head_a, head_b, 0.0, 0.0, rng.uniform(-10, 10)),
            (-rng.uniform(0.1, 0.3), head_a - 0.06, head_b - 0.06, 0.0, 0.0, 0.0),
        ]
        for _ in range(spec.n_ellipses):
            a, b = rng.uniform(lo, hi, size=2)
            r, phi = rng.uniform(0, 0.55), rng.uniform(0, 2 * np.pi)
            ellipses.append(
                (rng.uniform(*spec.intensity_range), a, b, r * head_a * np.cos(phi),
                 r * head_b * np.sin(phi), rng.uniform(0, 180))
            )
    else:
        raise ValueError(f"unknown phantom kind {spec.kind!r}")
    for value, a, b, x0, y0, ang in ellipses:
        if a <= 0 or b <= 0:
            raise ValueError(f"degenerate ellipse axes ({a}, {b})")
        img[_ellipse(yy, xx, a, b, x0, y0, ang)] += value
    img = np.clip(img, 0.0, 1.0)
    peak = img.max()
    if peak <= 0:
        raise ValueError("phantom has no positive intensity")
    return img / peak


def _phase(spec: PhantomSpec, rng) -> np.ndarray:
    yy, xx = _grid(spec.shape)
    phase = np.zeros(spec.shape)
    terms = [(i, j) for i in range(spec.phase_degree + 1) for j in range(spec.phase_degree + 1 - i)]
    coef = rng.uniform(-1, 1, size=len(terms)) / max(len(terms), 1)
    for c, (i, j) in zip(coef, terms):
        phase += spec.phase_scale * c * yy**i * xx**j
    fy, fx = rng.uniform(0.5, 1.5, size=2) * rng.choice([-1, 1], size=2)
    offset = rng.uniform(0, 2 * np.pi)
    phase += spec.sinusoid_amplitude * np.sin(np.pi * (fy * yy + fx * xx) + offset)
    return phase


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Complex phantom: ellipse magnitude in [0, 1] times a smooth synthetic phase."""
    check_image_shape(spec.shape)
    rng = np.random.default_rng(spec.seed)
    mag = _magnitude(spec, rng)
    if spec.phase_scale == 0 and spec.sinusoid_amplitude == 0:
        return mag.astype(COMPLEX)
    return (mag * np.exp(1j * _phase(spec, rng))).astype(COMPLEX)


def make_coil_maps(shape, ncoil: int = 8, seed: int = 0) -> np.ndarray:
    """Gaussian-lobe coil sensitivities on a ring around the FOV, normalized to RSS = 1."""
    check_image_shape(shape)
    if ncoil < 1:
        raise ValueError(f"ncoil must be >= 1, got {ncoil}")
    rng = np.random.default_rng(seed)
    yy, xx = _grid(shape)
    rotation = rng.uniform(0, 2 * np.pi)
    maps = np.empty((ncoil,) + tuple(shape), dtype=np.complex128)
    for c in range(ncoil):
        ang = rotation + 2 * np.pi * c / ncoil
        cy, cx = 1.2 * np.sin(ang), 1.2 * np.cos(ang)
        lobe = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.7**2))
        gy, gx = rng.uniform(-0.5, 0.5, size=2)
        phase = rng.uniform(-np.pi, np.pi) + np.pi * (gy * yy + gx * xx)
        maps[c] = lobe * np.exp(1j * phase)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return (maps / rss).astype(COMPLEX)


def uniform_trajectory(shape, rate: float = 1.25, jitter: float = 0.25, seed: int = 0) -> Trajectory:
    """Jittered Cartesian-like trajectory covering k-space at ``rate`` x Nyquist."""
    ny, nx = check_image_shape(shape)
    rng = np.random.default_rng(seed)
    step = 1.0 / np.sqrt(rate)
    kx = np.arange(-nx / 2 + step / 2, nx / 2, step)
    ky = np.arange(-ny / 2 + step / 2, ny / 2, step)
    grid = np.stack(np.meshgrid(kx, ky, indexing="xy"), axis=-1).reshape(-1, 2)
    grid = grid + rng.uniform(-jitter, jitter, size=grid.shape) * step
    lo = np.array([-nx / 2, -ny / 2])
    hi = np.array([nx / 2, ny / 2]) - 1e-9
    return Trajectory(np.clip(grid, lo, hi), nominal_accel=1.0 / rate)


@dataclass
class SimulatedCase:
    truth: np.ndarray
    maps: np.ndarray
    trajectory: Trajectory
    y: np.ndarray
    seed: int
    noise_sigma: float = 0.0
    accel: float = float("nan")

    def operator(self, oversampling: float = 2.0, width: int = 4) -> SenseOperator:
        plan = plan_nufft(self.truth.shape, self.trajectory, oversampling, width)
        return SenseOperator(plan, self.maps)


def add_noise(y: np.ndarray, sigma: float, dc: float, rng) -> np.ndarray:
    """Add i.i.d. circular complex Gaussian noise with standard deviation ``sigma * dc``."""
    if sigma == 0:
        return y.copy()
    std = sigma * dc / np.sqrt(2)
    noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
    return (y + std * noise).astype(y.dtype)


def simulate_case(phantom_spec: PhantomSpec, sampling_spec: SamplingSpec | None = None,
                  ncoil: int = 8, noise_sigma: float = 0.0, seed: int = 0,
                  trajectory: Trajectory | None = None) -> SimulatedCase:
    """Simulate one case; every random stream is derived from ``seed``.

    Pass ``trajectory`` to share one sampling pattern across cases; otherwise a
    trajectory is drawn from ``sampling_spec`` with a seed derived from ``seed``.
    """
    s_phantom, s_maps, s_traj, s_noise = np.random.SeedSequence(seed).spawn(4)
    phantom_spec = dataclasses.replace(phantom_spec, seed=int(s_phantom.generate_state(1)[0]))
    truth = make_phantom(phantom_spec)
    maps = make_coil_maps(truth.shape, ncoil, seed=int(s_maps.generate_state(1)[0]))
    if trajectory is None:
        if sampling_spec is None:
            raise ValueError("either sampling_spec or trajectory is required")
        sampling_spec = dataclasses.replace(
            sampling_spec, image_shape=truth.shape, seed=int(s_traj.generate_state(1)[0])
        )
        trajectory = generate_vd_trajectory(sampling_spec)
    plan = plan_nufft(truth.shape, trajectory)
    clean = SenseOperator(plan, maps).apply(truth.astype(np.complex128))
    dc = abs(complex(np.sum(truth.astype(np.complex128))))
    y = add_noise(clean, noise_sigma, dc, np.random.default_rng(s_noise)).astype(COMPLEX)
    return SimulatedCase(truth, maps, trajectory, y, seed, float(noise_sigma),
                         float(trajectory.nominal_accel))


def write_case(directory, case: SimulatedCase) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_array(d / "truth.bin", case.truth)
    save_array(d / "maps.bin", case.maps)
    save_array(d / "trajectory.bin", case.trajectory.coords.astype(np.float32))
    save_array(d / "y.bin", case.y)
    manifest = {"seed": case.seed, "sigma": case.noise_sigma, "R": case.accel,
                "shape": list(case.truth.shape), "ncoil": int(case.maps.shape[0])}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def read_case(directory) -> SimulatedCase:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    truth_path = d / "truth.bin"
    coords = load_array(d / "trajectory.bin").astype(np.float64)
    return SimulatedCase(
        truth=load_array(truth_path) if truth_path.exists() else None,
        maps=load_array(d / "maps.bin"),
        trajectory=Trajectory(coords, nominal_accel=manifest.get("R", 1.0)),
        y=load_array(d / "y.bin"),
        seed=int(manifest["seed"]),
        noise_sigma=float(manifest["sigma"]),
        accel=float(manifest["R"]),
    )


@dataclass(frozen=True)
class DatasetConfig:
    shape: tuple[int, int] = (64, 64)
    accel: float = 2.0
    n_cases: int = 30
    ncoil: int = 8
    noise_sigma: float = 5e-4
    seed: int = 0
    kind: str = "random-ellipses"
    per_example_trajectory: bool = False


def make_dataset(cfg: DatasetConfig) -> list[SimulatedCase]:
    """Simulate ``cfg.n_cases`` cases with seeds ``cfg.seed * 100003 + i``.

    By default one trajectory, drawn from ``(accel, seed)``, is shared by all cases.
    """
    phantom = PhantomSpec(shape=cfg.shape, kind=cfg.kind)
    sampling = SamplingSpec(image_shape=cfg.shape, accel=cfg.accel, seed=cfg.seed)
    shared = None if cfg.per_example_trajectory else generate_vd_trajectory(sampling)
    return [
        simulate_case(phantom, sampling, cfg.ncoil, cfg.noise_sigma,
                      seed=cfg.seed * 100003 + i, trajectory=shared)
        for i in range(cfg.n_cases)
    ]
