"""Non-uniform Fourier encoding.

The NUFFT approximates the direct transform

    y(k) = sum_r x[r] * exp(+2j*pi*(kx*rx/nx + ky*ry/ny))

with ``r`` the centered pixel coordinate (``r = n - N/2``) and ``k`` in
cycles/FOV.  It is factored as de-apodization, a zero-padded FFT on an
``s``-times oversampled grid and Kaiser-Bessel interpolation onto the
sample locations.  Trajectory column 0 is ``kx`` (pairs with image axis 1),
column 1 is ``ky`` (image axis 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse
from scipy.special import i0

from .core import LinearOperator, check_image_shape

NDFT_BUDGET = 10**8


def kb_beta(width: int, oversampling: float) -> float:
    """Kaiser-Bessel shape parameter for a given kernel width and oversampling."""
    return float(np.pi * np.sqrt((width / oversampling) ** 2 * (oversampling - 0.5) ** 2 - 0.8))


def kb_kernel(u, width: int, beta: float) -> np.ndarray:
    """Kaiser-Bessel kernel in oversampled-grid units, peak value 1, zero for |u| >= width/2."""
    u = np.asarray(u, dtype=np.float64)
    arg = 1.0 - (2.0 * u / width) ** 2
    out = np.zeros_like(u)
    inside = arg > 0
    out[inside] = i0(beta * np.sqrt(arg[inside])) / i0(beta)
    return out


def kb_kernel_ft(nu, width: int, beta: float) -> np.ndarray:
    """Continuous Fourier transform of :func:`kb_kernel` at frequency ``nu`` (cycles/grid unit)."""
    nu = np.asarray(nu, dtype=np.float64)
    z = beta**2 - (np.pi * width * nu) ** 2
    out = np.empty_like(nu)
    pos = z > 0
    rz = np.sqrt(np.abs(z))
    out[pos] = np.sinh(rz[pos]) / rz[pos]
    neg = z < 0
    out[neg] = np.sin(rz[neg]) / rz[neg]
    out[z == 0] = 1.0
    return out * width / i0(beta)


@dataclass(frozen=True)
class Trajectory:
    """Non-Cartesian sample locations, shape ``(M, 2)`` in cycles/FOV."""

    coords: np.ndarray
    nominal_accel: float = 1.0

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] < 1:
            raise ValueError(f"trajectory must have shape (M, 2) with M >= 1, got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("trajectory contains non-finite coordinates")
        object.__setattr__(self, "coords", coords)

    def __len__(self):
        return self.coords.shape[0]

    def subset(self, indices) -> "Trajectory":
        return Trajectory(self.coords[np.asarray(indices)], self.nominal_accel)


def check_trajectory(coords: np.ndarray, image_shape) -> None:
    ny, nx = image_shape
    lo = np.array([-nx / 2, -ny / 2])
    hi = np.array([nx / 2, ny / 2])
    bad = np.flatnonzero(np.any((coords < lo) | (coords >= hi), axis=1))
    if bad.size:
        shown = ", ".join(str(i) for i in bad[:20])
        more = f" (+{bad.size - 20} more)" if bad.size > 20 else ""
        raise ValueError(f"trajectory samples out of range [-N/2, N/2): indices {shown}{more}")


def _interp_matrix(coords, image_shape, grid_shape, width, beta):
    """Sparse ``(M, Ky*Kx)`` matrix of separable kernel weights; indices wrap."""
    m = coords.shape[0]
    ky_n, kx_n = grid_shape
    taps = np.arange(width)
    per_axis = []
    for col, n, k_n in ((1, image_shape[0], ky_n), (0, image_shape[1], kx_n)):
        g = (k_n / n) * coords[:, col]
        start = np.floor(g - width / 2).astype(np.int64) + 1
        j = start[:, None] + taps[None, :]
        w = kb_kernel(g[:, None] - j, width, beta)
        per_axis.append((np.mod(j, k_n), w))
    (iy, wy), (ix, wx) = per_axis
    cols = (iy[:, :, None] * kx_n + ix[:, None, :]).reshape(m, -1)
    vals = (wy[:, :, None] * wx[:, None, :]).reshape(m, -1)
    rows = np.repeat(np.arange(m), width * width)
    mat = scipy.sparse.csr_matrix(
        (vals.ravel(), (rows, cols.ravel())), shape=(m, ky_n * kx_n)
    )
    mat.sum_duplicates()
    return mat


@dataclass(eq=False)
class NufftPlan:
    """Precomputed NUFFT pieces for one image shape and trajectory.

    Immutable after construction; :meth:`subset` shares the de-apodization
    and FFT setup and only slices the interpolation rows.
    """

    image_shape: tuple[int, int]
    trajectory: Trajectory
    oversampling: float
    width: int
    beta: float
    grid_shape: tuple[int, int]
    apod: np.ndarray
    interp: scipy.sparse.csr_matrix
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_samples(self) -> int:
        return self.interp.shape[0]

    def _mats(self, dtype):
        key = np.dtype(dtype).char
        if key not in self._cache:
            g = self.interp.astype(dtype)
            self._cache[key] = (g, g.T.tocsr())
        return self._cache[key]

    def _pad_index(self):
        if "pad" not in self._cache:
            (ny, nx), (gy, gx) = self.image_shape, self.grid_shape
            rows = np.mod(np.arange(ny) - ny // 2, gy)
            cols = np.mod(np.arange(nx) - nx // 2, gx)
            self._cache["pad"] = (rows[:, None], cols[None, :])
        return self._cache["pad"]

    def subset(self, indices) -> "NufftPlan":
        indices = np.asarray(indices)
        return NufftPlan(
            self.image_shape,
            self.trajectory.subset(indices),
            self.oversampling,
            self.width,
            self.beta,
            self.grid_shape,
            self.apod,
            self.interp[indices],
        )

    # Batched kernels over a leading axis; public wrappers below check shapes.
    def _forward(self, x: np.ndarray) -> np.ndarray:
        cdtype = np.result_type(x.dtype, np.complex64)
        rdtype = np.finfo(cdtype).dtype
        g, _ = self._mats(rdtype)
        rows, cols = self._pad_index()
        batch = x.shape[:-2]
        grid = np.zeros(batch + self.grid_shape, dtype=cdtype)
        grid[..., rows, cols] = x * self.apod.astype(rdtype)
        grid = scipy.fft.ifft2(grid, norm="forward", overwrite_x=True)
        flat = np.ascontiguousarray(grid.reshape(-1, grid.shape[-2] * grid.shape[-1]).T)
        out = (g @ flat.view(rdtype)).view(cdtype)
        return np.ascontiguousarray(out.T).reshape(batch + (self.n_samples,))

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        cdtype = np.result_type(y.dtype, np.complex64)
        rdtype = np.finfo(cdtype).dtype
        _, gt = self._mats(rdtype)
        rows, cols = self._pad_index()
        batch = y.shape[:-1]
        flat = np.ascontiguousarray(y.reshape(-1, self.n_samples).T, dtype=cdtype)
        grid = (gt @ flat.view(rdtype)).view(cdtype)
        grid = np.ascontiguousarray(grid.T).reshape(batch + self.grid_shape)
        grid = scipy.fft.fft2(grid, norm="backward", overwrite_x=True)
        return grid[..., rows, cols] * self.apod.astype(rdtype)


def plan_nufft(image_shape, trajectory, oversampling: float = 2.0, width: int = 4) -> NufftPlan:
    """Build a Kaiser-Bessel NUFFT plan for ``trajectory`` on ``image_shape``."""
    ny, nx = check_image_shape(image_shape)
    if not isinstance(trajectory, Trajectory):
        trajectory = Trajectory(trajectory)
    if oversampling < 1.25:
        raise ValueError(f"oversampling must be >= 1.25, got {oversampling}")
    if not 2 <= int(width) <= 8 or int(width) != width:
        raise ValueError(f"kernel width must be an integer in [2, 8], got {width}")
    width = int(width)
    check_trajectory(trajectory.coords, (ny, nx))
    gy = int(np.ceil(oversampling * ny))
    gx = int(np.ceil(oversampling * nx))
    gy += gy % 2
    gx += gx % 2
    beta = kb_beta(width, oversampling)
    # Grid index j sits at k = j*N/K, so pixel r sees kernel frequency r/K.
    fy = kb_kernel_ft((np.arange(ny) - ny // 2) / gy, width, beta)
    fx = kb_kernel_ft((np.arange(nx) - nx // 2) / gx, width, beta)
    apod = 1.0 / (fy[:, None] * fx[None, :])
    interp = _interp_matrix(trajectory.coords, (ny, nx), (gy, gx), width, beta)
    return NufftPlan((ny, nx), trajectory, float(oversampling), width, beta, (gy, gx), apod, interp)


def nufft_forward(plan: NufftPlan, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != plan.image_shape:
        raise ValueError(f"image shape {x.shape} does not match plan {plan.image_shape}")
    return plan._forward(x)


def nufft_adjoint(plan: NufftPlan, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (plan.n_samples,):
        raise ValueError(f"expected {plan.n_samples} samples, got shape {y.shape}")
    return plan._adjoint(y)


def _ndft_factors(coords, image_shape):
    ny, nx = image_shape
    n_work = ny * nx * coords.shape[0]
    if n_work > NDFT_BUDGET:
        raise ValueError(f"NDFT size {n_work} exceeds the desk budget of {NDFT_BUDGET}")
    ry = np.arange(ny) - ny // 2
    rx = np.arange(nx) - nx // 2
    ex = np.exp(2j * np.pi * np.outer(coords[:, 0], rx) / nx)
    ey = np.exp(2j * np.pi * np.outer(coords[:, 1], ry) / ny)
    return ey, ex


def ndft_oracle(trajectory, x, image_shape=None, direction: str = "forward") -> np.ndarray:
    """Direct double-precision non-uniform DFT (``direction='forward'``) or its adjoint.

    For the adjoint pass the sample vector as ``x`` and give ``image_shape``.
    """
    coords = trajectory.coords if isinstance(trajectory, Trajectory) else np.asarray(trajectory, float)
    x = np.asarray(x, dtype=np.complex128)
    if direction == "forward":
        ey, ex = _ndft_factors(coords, x.shape)
        return np.sum((ey @ x) * ex, axis=1)
    if direction == "adjoint":
        if image_shape is None:
            raise ValueError("image_shape is required for the adjoint NDFT")
        ey, ex = _ndft_factors(coords, image_shape)
        return ey.conj().T @ (x[:, None] * ex.conj())
    raise ValueError(f"direction must be 'forward' or 'adjoint', got {direction!r}")


class NufftOperator(LinearOperator):
    """Single-coil NUFFT as a :class:`LinearOperator`."""

    def __init__(self, plan: NufftPlan):
        super().__init__(plan.image_shape, (plan.n_samples,))
        self.plan = plan

    def _apply(self, x):
        return self.plan._forward(x)

    def _adjoint(self, y):
        return self.plan._adjoint(y)


class NdftOperator(LinearOperator):
    """Exact non-uniform DFT as a :class:`LinearOperator` (desk sizes only)."""

    def __init__(self, trajectory, image_shape):
        self.coords = trajectory.coords if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
        super().__init__(image_shape, (self.coords.shape[0],))

    def _apply(self, x):
        return ndft_oracle(self.coords, x)

    def _adjoint(self, y):
        return ndft_oracle(self.coords, y, self.in_shape, direction="adjoint")


class SenseOperator(LinearOperator):
    """Multi-coil encoding ``(E x)_c = scale * NUFFT(maps_c * x)``, output ``(Ncoil, M)``.

    ``scale`` is a real factor used to normalize the operator norm; it is 1
    for the physical encoding.
    """

    def __init__(self, plan: NufftPlan, maps: np.ndarray, scale: float = 1.0):
        maps = np.asarray(maps)
        if maps.ndim != 3 or maps.shape[1:] != plan.image_shape:
            raise ValueError(
                f"coil maps of shape {maps.shape} do not match image shape {plan.image_shape}"
            )
        super().__init__(plan.image_shape, (maps.shape[0], plan.n_samples))
        self.plan = plan
        self.maps = maps
        self.scale = float(scale)
        self._map_cache = {}

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    def _maps(self, dtype):
        key = np.result_type(dtype, np.complex64)
        if key not in self._map_cache:
            self._map_cache[key] = self.maps.astype(key)
        return self._map_cache[key]

    def _apply(self, x):
        out = self.plan._forward(self._maps(x.dtype) * x)
        return out if self.scale == 1.0 else out * self.scale

    def _adjoint(self, y):
        img = self.plan._adjoint(y)
        out = np.einsum("cyx,cyx->yx", self._maps(img.dtype).conj(), img)
        return out if self.scale == 1.0 else out * self.scale

    def subset(self, indices) -> "SenseOperator":
        """Operator restricted to a subset of the sample locations."""
        return SenseOperator(self.plan.subset(indices), self.maps, self.scale)

    def with_scale(self, scale: float) -> "SenseOperator":
        return SenseOperator(self.plan, self.maps, scale)


def sense_nufft(plan: NufftPlan, maps) -> SenseOperator:
    return SenseOperator(plan, maps)


def density_compensation(plan: NufftPlan, n_iter: int = 20) -> np.ndarray:
    """Pipe-Menon density compensation weights for the plan's trajectory.

    Iterates ``w <- w / |G G^T w|`` with the gridding kernel ``G`` and then
    scales ``w`` so that gridding a wide Gaussian blob returns its peak value.
    The blob's spectrum lies inside the densely sampled centre, so the scale
    does not depend on how sparsely the periphery is covered.
    """
    g, gt = plan._mats(np.float64)
    w = np.ones(plan.n_samples)
    for it in range(n_iter):
        denom = np.abs(g @ (gt @ w))
        w = w / denom
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise FloatingPointError(f"density compensation broke down at iteration {it}")
    ny, nx = plan.image_shape
    yy, xx = np.meshgrid(np.arange(ny) - ny // 2, np.arange(nx) - nx // 2, indexing="ij")
    sigma = max(ny, nx) / 8
    blob = np.exp(-(yy**2 + xx**2) / (2 * sigma**2)).astype(np.complex128)
    centre = plan._adjoint(w * plan._forward(blob))[ny // 2, nx // 2].real
    if not np.isfinite(centre) or centre <= 0:
        raise FloatingPointError("density compensation normalization failed")
    return w / centre
