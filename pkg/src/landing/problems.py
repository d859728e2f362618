"""Benchmark objectives, synthetic data generators, closed-form oracles and metrics.

Objectives expose the finite-sum structure f(X) = (1/N) sum_i f_i(X) through a
uniform handle so deterministic, stochastic and variance-reduced drivers can
share them. Data generators are fully determined by an integer seed. The
penalty oracle solves the linear problem min <M, X> + lambda N(X) in closed
form for testing the penalty-method trade-off.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import matcore
from .errors import ConfigError, ContractViolationError, SingularityError

__all__ = [
    "ObjectiveHandle",
    "PcaInstance",
    "IcaInstance",
    "pca_objective",
    "ica_objective",
    "linear_objective",
    "penalty_oracle",
    "amari_distance",
    "random_stiefel",
    "gen_pca_data",
    "gen_ica_data",
    "pca_reference_optimum",
    "principal_angles",
    "save_instance",
    "load_instance",
]


@dataclass(frozen=True)
class ObjectiveHandle:
    """Evaluation interface for a finite-sum objective on n x p matrices.

    ``grad_samples(indices, x)`` returns the mean gradient over the index set
    (repeats allowed); ``grad_each(indices, x)`` stacks the individual
    per-sample gradients, shape (len(indices), n, p), which variance-reduced
    methods need for their memory updates. The mean of per-sample gradients
    over all indices equals ``grad_full`` by construction.
    """

    name: str
    dims: tuple[int, int]
    sample_count: int
    value: Callable[[np.ndarray], float]
    grad_full: Callable[[np.ndarray], np.ndarray]
    grad_samples: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad_each: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PcaInstance:
    """Synthetic PCA data: rows of ``data`` are i.i.d. N(0, U U^T + sigma I)."""

    data: np.ndarray  # (N, n)
    noise_sigma: float
    planted_u: np.ndarray  # (n, p), orthonormal
    seed: int


@dataclass(frozen=True)
class IcaInstance:
    """Synthetic ICA data: ``data = sources @ mixing.T`` with Laplace sources."""

    sources: np.ndarray  # (N, n), i.i.d. Laplace(0, 1)
    mixing: np.ndarray  # (n, n), orthogonal
    data: np.ndarray  # (N, n)
    seed: int


def _check_indices(idx: np.ndarray, count: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
    if idx.size == 0:
        raise ContractViolationError("index set must be nonempty")
    if idx.min() < 0 or idx.max() >= count:
        raise ContractViolationError(
            f"sample index out of range [0, {count}): {idx.min()}..{idx.max()}"
        )
    return idx


def pca_objective(inst: PcaInstance) -> ObjectiveHandle:
    """Subspace objective f(X) = -||A X||^2 / (2N), per sample f_i = -||a_i X||^2 / 2.

    Minimizing over the Stiefel manifold recovers the span of the dominant
    eigenvectors of A^T A (the top principal components of the data).
    """
    a = matcore.as_matrix(inst.data, "data")
    n_samples, n = a.shape
    p = inst.planted_u.shape[1]

    def value(x):
        ax = a @ x
        return -0.5 * float(np.sum(ax * ax)) / n_samples

    def grad_full(x):
        return -(a.T @ (a @ x)) / n_samples

    def grad_samples(idx, x):
        idx = _check_indices(idx, n_samples)
        rows = a[idx]
        return -(rows.T @ (rows @ x)) / idx.size

    def grad_each(idx, x):
        idx = _check_indices(idx, n_samples)
        rows = a[idx]  # (b, n)
        proj = rows @ x  # (b, p)
        return -rows[:, :, None] * proj[:, None, :]

    return ObjectiveHandle("pca", (n, p), n_samples, value, grad_full, grad_samples, grad_each)


def _logcosh(z: np.ndarray) -> np.ndarray:
    # log(cosh(z)) = |z| + log1p(exp(-2|z|)) - log 2, stable for large |z|
    az = np.abs(z)
    return az + np.log1p(np.exp(-2.0 * az)) - np.log(2.0)


def ica_objective(inst: IcaInstance) -> ObjectiveHandle:
    """Maximum-likelihood ICA contrast f(X) = (1/N) sum_ij log cosh([A X]_ij).

    The variable X is an n x n unmixing matrix; gradients use
    grad f = (1/N) A^T tanh(A X), with log cosh evaluated overflow-safely.
    """
    a = matcore.as_matrix(inst.data, "data")
    n_samples, n = a.shape

    def value(x):
        return float(np.sum(_logcosh(a @ x))) / n_samples

    def grad_full(x):
        return (a.T @ np.tanh(a @ x)) / n_samples

    def grad_samples(idx, x):
        idx = _check_indices(idx, n_samples)
        rows = a[idx]
        return (rows.T @ np.tanh(rows @ x)) / idx.size

    def grad_each(idx, x):
        idx = _check_indices(idx, n_samples)
        rows = a[idx]
        t = np.tanh(rows @ x)  # (b, n)
        return rows[:, :, None] * t[:, None, :]

    return ObjectiveHandle("ica", (n, n), n_samples, value, grad_full, grad_samples, grad_each)


def linear_objective(m: np.ndarray) -> ObjectiveHandle:
    """Linear objective f(X) = <M, X> with constant gradient M, one sample."""
    m = matcore.as_matrix(m, "m")

    def value(x):
        return float(np.sum(m * x))

    def grad_full(x):
        return m

    def grad_samples(idx, x):
        _check_indices(idx, 1)
        return m

    def grad_each(idx, x):
        idx = _check_indices(idx, 1)
        return np.broadcast_to(m, (idx.size, *m.shape))

    return ObjectiveHandle("linear", m.shape, 1, value, grad_full, grad_samples, grad_each)


def _cubic_root_above_one(c: float) -> float:
    """Root x > 1 of x^3 - x = c for c >= 0, bisection then Newton to 1e-14 relative."""
    if c < 0:
        raise ContractViolationError(f"need c >= 0, got {c}")
    if c == 0.0:
        return 1.0
    lo, hi = 1.0, 1.0 + c  # h(1) = 0 <= c and h(1+c) >= c for c >= 0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid**3 - mid < c:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    for _ in range(8):
        fx = x**3 - x - c
        dfx = 3.0 * x * x - 1.0
        step = fx / dfx
        x -= step
        if abs(step) <= 1e-15 * x:
            break
    return x


def penalty_oracle(m: np.ndarray, lambda_pen: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form minimizer of g(X) = <M, X> + lambda ||X^T X - I||^2 / 4.

    With M = U Sigma V^T a thin SVD, the minimizer is X* = -U Sigma* V^T where
    each sigma*_i > 1 solves x^3 - x = sigma_i / lambda. Also returns the
    constrained minimizer of <M, X> over the Stiefel manifold, -U V^T; the gap
    ||X* - X_St|| shrinks like 1/lambda.
    """
    if lambda_pen <= 0:
        raise ContractViolationError(f"lambda_pen must be > 0, got {lambda_pen}")
    u, sigma, v = matcore.thin_svd(m)
    if sigma[0] == 0.0 or sigma[-1] <= 1e-12 * sigma[0]:
        raise SingularityError(
            f"penalty oracle needs full column rank: smallest singular value {sigma[-1]:.3e}"
        )
    sigma_star = np.array([_cubic_root_above_one(s / lambda_pen) for s in sigma])
    x_star = -(u * sigma_star) @ v.T
    x_stiefel = -(u @ v.T)
    return x_star, x_stiefel


def amari_distance(p_matrix: np.ndarray) -> float:
    """Permutation- and scale-invariant distance of a square matrix from the identity class.

    Zero iff the matrix is a permutation matrix with nonzero row scalings;
    used to score how well an ICA unmixing matrix recovers the sources
    (applied to mixing^T @ X).
    """
    p = matcore.as_matrix(p_matrix, "p_matrix")
    if p.shape[0] != p.shape[1]:
        raise ContractViolationError(f"amari_distance needs a square matrix, got {p.shape}")
    n = p.shape[0]
    if n < 2:
        raise ContractViolationError("amari_distance needs n >= 2")
    ap = np.abs(p)
    row_max = ap.max(axis=1)
    col_max = ap.max(axis=0)
    if row_max.min() == 0.0 or col_max.min() == 0.0:
        raise ContractViolationError("matrix has an all-zero row or column")
    rows = (ap / row_max[:, None]).sum(axis=1) - 1.0
    cols = (ap / col_max[None, :]).sum(axis=0) - 1.0
    return float((rows.sum() + cols.sum()) / (2.0 * n * (n - 1)))


def random_stiefel(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform random point with orthonormal columns (QR of a Gaussian matrix)."""
    q, _ = matcore.thin_qr(rng.standard_normal((n, p)))
    return q


def gen_pca_data(n: int, p: int, big_n: int, sigma: float, seed: int) -> PcaInstance:
    """Sample ``big_n`` rows from N(0, U U^T + sigma I) with a Haar-planted U."""
    if sigma < 0:
        raise ContractViolationError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    u = random_stiefel(n, p, rng)
    z = rng.standard_normal((big_n, p))
    w = rng.standard_normal((big_n, n))
    data = z @ u.T + np.sqrt(sigma) * w
    return PcaInstance(data=data, noise_sigma=sigma, planted_u=u, seed=seed)


def gen_ica_data(n: int, big_n: int, seed: int) -> IcaInstance:
    """Laplace(0, 1) sources mixed by a Haar-orthogonal matrix.

    Sources come from the inverse CDF applied to the seeded uniform stream, so
    the instance is a pure function of the seed.
    """
    rng = np.random.default_rng(seed)
    t = rng.random((big_n, n)) - 0.5
    # inverse CDF of Laplace(0, 1); clip keeps the log argument positive
    at = np.minimum(np.abs(t), np.nextafter(0.5, 0.0))
    sources = -np.sign(t) * np.log1p(-2.0 * at)
    mixing = random_stiefel(n, n, rng)
    data = sources @ mixing.T
    return IcaInstance(sources=sources, mixing=mixing, data=data, seed=seed)


def pca_reference_optimum(inst: PcaInstance) -> np.ndarray:
    """Top-p right singular vectors of the data matrix (constrained optimum of the PCA objective)."""
    a = inst.data
    p = inst.planted_u.shape[1]
    _, v = matcore.sym_eig(a.T @ a)
    return v[:, -p:]


def principal_angles(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans of u and v."""
    qu, _ = matcore.thin_qr(np.asarray(u, dtype=np.float64))
    qv, _ = matcore.thin_qr(np.asarray(v, dtype=np.float64))
    sigma = np.linalg.svd(qu.T @ qv, compute_uv=False)
    return np.arccos(np.clip(sigma, -1.0, 1.0))[::-1]


# ---------------------------------------------------------------------------
# Binary container for cross-run data reuse.
#
# Layout (little-endian): magic "LNDG" | u32 version | u32 kind | u64 seed,
# then kind-specific u64 dimensions and f64 scalars, then the payload matrices
# as row-major float64.
# ---------------------------------------------------------------------------

_MAGIC = b"LNDG"
_VERSION = 1
_KIND_PCA = 1
_KIND_ICA = 2


def _pack_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _read_array(buf: memoryview, offset: int, shape: tuple[int, ...]) -> tuple[np.ndarray, int]:
    count = int(np.prod(shape))
    nbytes = count * 8
    if offset + nbytes > len(buf):
        raise ConfigError("data container truncated")
    arr = np.frombuffer(buf[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
    return arr, offset + nbytes


def save_instance(path, inst) -> None:
    """Serialize a PCA or ICA instance to the flat binary container."""
    if isinstance(inst, PcaInstance):
        big_n, n = inst.data.shape
        p = inst.planted_u.shape[1]
        header = _MAGIC + struct.pack(
            "<IIQQQQd", _VERSION, _KIND_PCA, inst.seed, big_n, n, p, inst.noise_sigma
        )
        payload = _pack_array(inst.data) + _pack_array(inst.planted_u)
    elif isinstance(inst, IcaInstance):
        big_n, n = inst.sources.shape
        header = _MAGIC + struct.pack("<IIQQQ", _VERSION, _KIND_ICA, inst.seed, big_n, n)
        payload = _pack_array(inst.sources) + _pack_array(inst.mixing)
    else:
        raise ContractViolationError(f"cannot serialize {type(inst).__name__}")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_instance(path):
    """Load an instance written by :func:`save_instance`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = memoryview(raw)
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise ConfigError(f"{path}: not a landing data container (bad magic)")
    version, kind = struct.unpack_from("<II", buf, 4)
    if version != _VERSION:
        raise ConfigError(f"{path}: unsupported container version {version}")
    if kind == _KIND_PCA:
        seed, big_n, n, p, sigma = struct.unpack_from("<QQQQd", buf, 12)
        offset = 12 + struct.calcsize("<QQQQd")
        data, offset = _read_array(buf, offset, (big_n, n))
        u, offset = _read_array(buf, offset, (n, p))
        return PcaInstance(data=data, noise_sigma=sigma, planted_u=u, seed=seed)
    if kind == _KIND_ICA:
        seed, big_n, n = struct.unpack_from("<QQQ", buf, 12)
        offset = 12 + struct.calcsize("<QQQ")
        sources, offset = _read_array(buf, offset, (big_n, n))
        mixing, offset = _read_array(buf, offset, (n, n))
        return IcaInstance(sources=sources, mixing=mixing, data=sources @ mixing.T, seed=seed)
    raise ConfigError(f"{path}: unknown container kind {kind}")
