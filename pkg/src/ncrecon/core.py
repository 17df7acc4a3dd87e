"""Array primitives shared by every module: inner products, norms, the
linear-operator contract and the binary array container used for all I/O.

Images are stored row-major with the vertical axis first, ``(ny, nx)``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

COMPLEX = np.complex64
REAL = np.float32

_CONTAINER_DTYPES = {"c64": np.dtype("<c8"), "f32": np.dtype("<f4")}


def inner_product(u, v):
    """Return ``sum(conj(u) * v)``; conjugate-linear in ``u``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    return complex(np.vdot(u.ravel(), v.ravel()))


def _finite(u):
    u = np.asarray(u)
    if not np.all(np.isfinite(u)):
        raise ValueError("input contains NaN or Inf")
    return u


def l1_norm(u) -> float:
    return float(np.sum(np.abs(_finite(u))))


def l2_norm(u) -> float:
    u = _finite(u)
    return float(np.sqrt(np.sum(np.abs(u) ** 2)))


def linf_norm(u) -> float:
    u = _finite(u)
    return float(np.max(np.abs(u))) if u.size else 0.0


def check_image_shape(shape) -> tuple[int, int]:
    """Validate a 2D image shape: both sides even and at least 8."""
    if len(shape) != 2:
        raise ValueError(f"expected a 2D image shape, got {tuple(shape)}")
    ny, nx = (int(s) for s in shape)
    if ny < 8 or nx < 8 or ny % 2 or nx % 2:
        raise ValueError(f"image sides must be even and >= 8, got {(ny, nx)}")
    return ny, nx


def complex_to_channels(x: np.ndarray) -> np.ndarray:
    """Stack real and imaginary parts on a new leading axis of length 2."""
    return np.stack([x.real, x.imag])


def channels_to_complex(a: np.ndarray) -> np.ndarray:
    if a.shape[0] != 2:
        raise ValueError(f"expected a leading channel axis of 2, got {a.shape}")
    return a[0] + 1j * a[1]


class LinearOperator:
    """Abstract linear map ``A: C^in_shape -> C^out_shape`` with its adjoint.

    Subclasses implement :meth:`_apply` and :meth:`_adjoint`; the public
    methods check shapes.
    """

    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]

    def __init__(self, in_shape, out_shape):
        self.in_shape = tuple(int(s) for s in in_shape)
        self.out_shape = tuple(int(s) for s in out_shape)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != self.in_shape:
            raise ValueError(f"{type(self).__name__}: expected input {self.in_shape}, got {x.shape}")
        return self._apply(x)

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != self.out_shape:
            raise ValueError(f"{type(self).__name__}: expected input {self.out_shape}, got {y.shape}")
        return self._adjoint(y)

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.apply_adjoint(self.apply(x))

    def _apply(self, x):
        raise NotImplementedError

    def _adjoint(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)

    @property
    def H(self) -> "LinearOperator":
        return _Adjoint(self)

    def __mul__(self, alpha):
        return ScaledOperator(self, alpha)

    __rmul__ = __mul__


class _Adjoint(LinearOperator):
    def __init__(self, op: LinearOperator):
        super().__init__(op.out_shape, op.in_shape)
        self.op = op

    def _apply(self, x):
        return self.op._adjoint(x)

    def _adjoint(self, y):
        return self.op._apply(y)


class ScaledOperator(LinearOperator):
    """``alpha * A`` for a real scalar ``alpha``."""

    def __init__(self, op: LinearOperator, alpha: float):
        super().__init__(op.in_shape, op.out_shape)
        self.op = op
        self.alpha = float(alpha)

    def _apply(self, x):
        return self.alpha * self.op._apply(x)

    def _adjoint(self, y):
        return self.alpha * self.op._adjoint(y)


class MatrixOperator(LinearOperator):
    """Dense matrix acting on flattened arrays; handy as a test fixture."""

    def __init__(self, matrix, in_shape=None, out_shape=None):
        matrix = np.asarray(matrix)
        super().__init__(in_shape or (matrix.shape[1],), out_shape or (matrix.shape[0],))
        self.matrix = matrix

    def _apply(self, x):
        return (self.matrix @ x.ravel()).reshape(self.out_shape)

    def _adjoint(self, y):
        return (self.matrix.conj().T @ y.ravel()).reshape(self.in_shape)


def random_complex(rng: np.random.Generator, shape, dtype=np.complex128) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(dtype)


def adjoint_mismatch(op: LinearOperator, rng: np.random.Generator, dtype=np.complex128) -> float:
    """Relative dot-product test residual for one random ``(u, v)`` pair.

    Returns ``|<Au, v> - <u, A^H v>| / (|Au| |v| + |u| |A^H v|)``.
    """
    u = random_complex(rng, op.in_shape, dtype)
    v = random_complex(rng, op.out_shape, dtype)
    au = op.apply(u)
    ahv = op.apply_adjoint(v)
    lhs = inner_product(au, v)
    rhs = inner_product(u, ahv)
    scale = l2_norm(au) * l2_norm(v) + l2_norm(u) * l2_norm(ahv)
    return abs(lhs - rhs) / scale if scale > 0 else 0.0


# --- binary container -------------------------------------------------------

def save_array(path, array: np.ndarray) -> None:
    """Write ``array`` as a one-line JSON header followed by raw LE bytes.

    Complex data is stored as ``c64`` and real data as ``f32``.
    """
    array = np.asarray(array)
    code = "c64" if np.iscomplexobj(array) else "f32"
    # asarray keeps 0-d shapes; ascontiguousarray would promote them to (1,)
    data = np.asarray(array, dtype=_CONTAINER_DTYPES[code], order="C")
    header = json.dumps({"dtype": code, "shape": list(data.shape), "order": "row-major"})
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(data.tobytes())


def load_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing container header")
    header = json.loads(raw[:newline].decode("utf-8"))
    if header.get("order", "row-major") != "row-major":
        raise ValueError(f"{path}: unsupported order {header['order']!r}")
    try:
        dtype = _CONTAINER_DTYPES[header["dtype"]]
    except KeyError:
        raise ValueError(f"{path}: unsupported dtype {header.get('dtype')!r}") from None
    shape = tuple(header["shape"])
    body = raw[newline + 1:]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(shape).copy()
