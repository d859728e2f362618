"""Optimization drivers: landing GD/SGD/SAGA, Riemannian and penalty baselines.

Every landing variant follows a direction of the form A X + lambda grad N(X)
with A skew-symmetric, and clamps its step with the closed-form safeguard so
all iterates provably stay in the safe region. Riemannian baselines retract
onto the manifold each step; the penalty baseline does plain Euclidean SGD on
f + lambda_pen N.

A single run is sequential; distinct runs are independent and can execute
concurrently. Runs are pure functions of (inputs, seed): identical calls give
bit-identical traces.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolationError, NumericalError
from .geometry import (
    LandingParams,
    gram_residual,
    landing_direction,
    landing_field,
    merit_value,
    riemannian_gradient_ext,
    safeguard_eta,
    safeguard_eta_star,
    SAFE_REGION_SLACK,
)
from .matcore import spd_inv_sqrt, thin_qr

__all__ = [
    "StepSchedule",
    "RunRecord",
    "RunResult",
    "SagaState",
    "step_landing",
    "run_landing_gd",
    "run_landing_sgd",
    "step_saga",
    "run_landing_saga",
    "qr_retraction",
    "projection_retraction",
    "run_riemannian",
    "run_penalty_sgd",
    "gd_theory_step",
    "gd_descent_step",
    "sgd_theory_step",
    "saga_theory_step",
]

logger = logging.getLogger("landing.optim")

_SCHEDULE_KINDS = ("constant", "inv_sqrt", "horizon_scaled", "epoch_decay")

# Clamp-rate warning: if most recent steps hit the safeguard, eta0 is too big.
_CLAMP_WINDOW = 100
_CLAMP_WARN_FRACTION = 0.5


@dataclass(frozen=True)
class StepSchedule:
    """Step-size schedule.

    kinds
    -----
    constant:       eta_k = eta0
    inv_sqrt:       eta_k = eta0 * (1 + k)^(-1/2)
    horizon_scaled: eta_k = eta0 * (1 + horizon)^(-1/2), fixed for all k
    epoch_decay:    eta divided by decay_factor every decay_every epochs
    """

    kind: str
    eta0: float
    decay_factor: float = 10.0
    decay_every: float = 50.0
    horizon: int = 0

    def __post_init__(self):
        if self.kind not in _SCHEDULE_KINDS:
            raise ConfigError(
                f"unknown schedule kind {self.kind!r}, expected one of {_SCHEDULE_KINDS}"
            )
        if self.eta0 <= 0:
            raise ConfigError(f"eta0 must be > 0, got {self.eta0}")
        if self.kind == "horizon_scaled" and self.horizon <= 0:
            raise ConfigError("horizon_scaled schedule needs horizon > 0")
        if self.kind == "epoch_decay" and (self.decay_factor <= 1 or self.decay_every <= 0):
            raise ConfigError("epoch_decay needs decay_factor > 1 and decay_every > 0")

    def eta(self, k: int, epoch: float = 0.0) -> float:
        if self.kind == "constant":
            return self.eta0
        if self.kind == "inv_sqrt":
            return self.eta0 * (1.0 + k) ** -0.5
        if self.kind == "horizon_scaled":
            return self.eta0 * (1.0 + self.horizon) ** -0.5
        return self.eta0 / self.decay_factor ** math.floor(epoch / self.decay_every)


@dataclass(frozen=True)
class RunRecord:
    """One logged row of a convergence trace (state after ``iter`` steps)."""

    iter: int
    epoch: float
    wall_time_s: float
    f_value: float
    grad_norm_sq: float  # ||grad f(X)||^2, full objective
    distance: float  # ||X^T X - I||
    n_of_x: float  # squared violation measure, distance^2 / 4
    merit: float
    step_used: float  # step that produced this iterate (0 for iter 0)
    clamped: bool


@dataclass
class RunResult:
    """Trace plus final state and aggregate clamp statistics."""

    records: list[RunRecord]
    x_final: np.ndarray
    iterations: int
    clamp_count: int

    @property
    def clamp_rate(self) -> float:
        return self.clamp_count / self.iterations if self.iterations else 0.0


@dataclass(frozen=True)
class StepInfo:
    eta_used: float
    clamped: bool
    field_norm: float
    distance: float


def step_landing(
    x: np.ndarray, g: np.ndarray, params: LandingParams, eta_sched: float
) -> tuple[np.ndarray, StepInfo]:
    """One safeguarded landing step X - eta * Lambda(X) from a safe-region point.

    ``eta = min(eta_sched, safeguard)``; the returned flag says whether the
    safeguard was binding. The next iterate is guaranteed to stay in the safe
    region.
    """
    direction, g_norm, dist = landing_direction(g, x, params.lam)
    if dist > params.epsilon + SAFE_REGION_SLACK:
        raise ContractViolationError(
            f"iterate outside safe region: distance {dist:.6e} > epsilon {params.epsilon}"
        )
    eta_safe = safeguard_eta(g_norm, dist, params.lam, params.epsilon)
    clamped = eta_safe < eta_sched
    eta_used = min(eta_sched, eta_safe)
    return x - eta_used * direction, StepInfo(eta_used, clamped, g_norm, dist)


def _record(
    obj,
    x: np.ndarray,
    params: LandingParams,
    k: int,
    batch_size: int,
    info: StepInfo | None,
    t_start: float,
    check_safe: bool = True,
) -> RunRecord:
    f_val = obj.value(x)
    g_full = obj.grad_full(x)
    fd = landing_field(g_full, x, params.lam)
    if not np.isfinite(f_val) or not np.isfinite(fd.tangent_norm):
        raise NumericalError(f"non-finite objective value or gradient at iteration {k}")
    if check_safe and fd.distance > params.epsilon + SAFE_REGION_SLACK:
        raise NumericalError(
            f"iterate left the safe region at iteration {k}: distance {fd.distance:.6e}"
        )
    return RunRecord(
        iter=k,
        epoch=k * batch_size / obj.sample_count,
        wall_time_s=time.perf_counter() - t_start,
        f_value=f_val,
        grad_norm_sq=fd.tangent_norm**2,
        distance=fd.distance,
        n_of_x=0.25 * fd.distance**2,
        merit=merit_value(x, f_val, g_full, params.mu),
        step_used=0.0 if info is None else info.eta_used,
        clamped=False if info is None else info.clamped,
    )


class _ClampMonitor:
    """Warn once when the safeguard binds on most of the recent steps."""

    def __init__(self, label: str):
        self.window = deque(maxlen=_CLAMP_WINDOW)
        self.count = 0
        self.warned = False
        self.label = label

    def push(self, clamped: bool) -> None:
        self.window.append(clamped)
        self.count += clamped
        if (
            not self.warned
            and len(self.window) == _CLAMP_WINDOW
            and sum(self.window) > _CLAMP_WARN_FRACTION * _CLAMP_WINDOW
        ):
            self.warned = True
            logger.warning(
                "%s: safeguard clamped >%d%% of the last %d steps; "
                "consider a smaller eta0",
                self.label,
                int(_CLAMP_WARN_FRACTION * 100),
                _CLAMP_WINDOW,
            )


def _run_landing(
    obj,
    x0: np.ndarray,
    params: LandingParams,
    sched: StepSchedule,
    max_iter: int,
    log_every: int,
    batch_size: int,
    pick_gradient,
    label: str,
) -> RunResult:
    """Shared landing loop; ``pick_gradient(k, x)`` supplies the step's Euclidean gradient."""
    if max_iter < 0 or log_every < 1:
        raise ConfigError("need max_iter >= 0 and log_every >= 1")
    x = np.array(x0, dtype=np.float64)
    t0 = time.perf_counter()
    records = [_record(obj, x, params, 0, batch_size, None, t0)]
    monitor = _ClampMonitor(label)
    clamp_count = 0
    info = None
    for k in range(max_iter):
        try:
            g = pick_gradient(k, x)
        except Exception as exc:
            raise NumericalError(f"objective evaluation failed at iteration {k}: {exc}") from exc
        epoch = k * batch_size / obj.sample_count
        x, info = step_landing(x, g, params, sched.eta(k, epoch))
        clamp_count += info.clamped
        monitor.push(info.clamped)
        step_index = k + 1
        if step_index % log_every == 0 or step_index == max_iter:
            records.append(_record(obj, x, params, step_index, batch_size, info, t0))
    return RunResult(records, x, max_iter, clamp_count)


def run_landing_gd(
    obj,
    x0: np.ndarray,
    params: LandingParams,
    sched: StepSchedule,
    max_iter: int,
    log_every: int = 1,
) -> RunResult:
    """Deterministic landing gradient descent (full gradient every step)."""
    return _run_landing(
        obj,
        x0,
        params,
        sched,
        max_iter,
        log_every,
        batch_size=obj.sample_count,
        pick_gradient=lambda k, x: obj.grad_full(x),
        label="landing_gd",
    )


def run_landing_sgd(
    obj,
    x0: np.ndarray,
    params: LandingParams,
    sched: StepSchedule,
    batch_size: int,
    max_iter: int,
    seed: int,
    log_every: int = 1,
    full_batch: bool = False,
) -> RunResult:
    """Stochastic landing: minibatch indices drawn uniformly with replacement.

    ``full_batch=True`` is the deterministic degenerate mode: every step uses
    the full gradient and the trace coincides with :func:`run_landing_gd`.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if full_batch:
        return _run_landing(
            obj,
            x0,
            params,
            sched,
            max_iter,
            log_every,
            batch_size=obj.sample_count,
            pick_gradient=lambda k, x: obj.grad_full(x),
            label="landing_sgd",
        )
    rng = np.random.default_rng(seed)

    def pick(k, x):
        idx = rng.integers(0, obj.sample_count, size=batch_size)
        return obj.grad_samples(idx, x)

    return _run_landing(
        obj, x0, params, sched, max_iter, log_every, batch_size, pick, "landing_sgd"
    )


@dataclass
class SagaState:
    """Per-sample gradient memory and its running mean.

    ``memory_mean`` is maintained incrementally (mean += sum(new - old) / N)
    and re-derived from scratch every ``sample_count`` iterations as a drift
    check; disagreement beyond 1e-10 relative is a bug and raises.
    """

    memory: np.ndarray  # (N, n, p)
    memory_mean: np.ndarray  # (n, p)
    last_update_iter: np.ndarray  # (N,), -1 while never updated
    iteration: int = 0

    @classmethod
    def initialize(cls, obj, x0: np.ndarray, init_mode: str = "first_pass") -> "SagaState":
        n, p = obj.dims
        count = obj.sample_count
        memory = np.zeros((count, n, p))
        if init_mode == "first_pass":
            chunk = max(1, min(count, 1_000_000 // (n * p)))
            for lo in range(0, count, chunk):
                idx = np.arange(lo, min(lo + chunk, count))
                memory[idx] = obj.grad_each(idx, x0)
            stamps = np.zeros(count, dtype=np.int64)
        elif init_mode == "zeros":
            stamps = np.full(count, -1, dtype=np.int64)
        else:
            raise ConfigError(f"unknown init_mode {init_mode!r}, expected first_pass or zeros")
        return cls(memory=memory, memory_mean=memory.mean(axis=0), last_update_iter=stamps)

    def recompute_mean(self, tol: float = 1e-10) -> None:
        fresh = self.memory.mean(axis=0)
        scale = max(float(np.linalg.norm(fresh)), 1e-300)
        drift = float(np.linalg.norm(fresh - self.memory_mean)) / scale
        if drift > tol:
            raise NumericalError(
                f"SAGA memory mean drifted by {drift:.3e} relative (tolerance {tol:g})"
            )
        self.memory_mean = fresh


def step_saga(
    x: np.ndarray,
    sample_idx,
    obj,
    state: SagaState,
    params: LandingParams,
    eta_sched: float,
) -> tuple[np.ndarray, StepInfo]:
    """One landing SAGA step; ``sample_idx`` may be a scalar or a minibatch.

    The variance-reduced Euclidean surrogate is

        G = mean_i grad f_i(X) + ( mean_j Phi^j - mean_i Phi^i ),

    whose skew field averages to the full landing field over i (the skew map
    is linear in its first argument). Each drawn slot is then overwritten with
    its fresh gradient; repeated indices are processed sequentially so the
    incremental mean update stays exact. A batch of size b updates b slots
    (the per-sample theory corresponds to b = 1).
    """
    idx = np.atleast_1d(np.asarray(sample_idx, dtype=np.int64))
    if idx.min() < 0 or idx.max() >= obj.sample_count:
        raise ContractViolationError(
            f"sample index out of range [0, {obj.sample_count}): {idx}"
        )
    grads = obj.grad_each(idx, x)  # (b, n, p)
    g_batch = grads.mean(axis=0)
    correction = state.memory_mean - state.memory[idx].mean(axis=0)
    g_eff = g_batch + correction
    x_next, info = step_landing(x, g_eff, params, eta_sched)

    delta = np.zeros_like(state.memory_mean)
    for j, i in enumerate(idx):
        delta += grads[j] - state.memory[i]
        state.memory[i] = grads[j]
        state.last_update_iter[i] = state.iteration
    state.memory_mean = state.memory_mean + delta / obj.sample_count
    state.iteration += 1
    if state.iteration % obj.sample_count == 0:
        state.recompute_mean()
    return x_next, info


def run_landing_saga(
    obj,
    x0: np.ndarray,
    params: LandingParams,
    sched: StepSchedule | str,
    max_iter: int,
    seed: int,
    log_every: int = 1,
    init_mode: str = "first_pass",
    batch_size: int = 1,
    max_memory_bytes: int = 4 << 30,
) -> RunResult:
    """Landing SAGA. ``sched="auto"`` uses the theory step :func:`saga_theory_step`.

    The gradient memory holds N x n x p doubles; a run whose memory would
    exceed ``max_memory_bytes`` is rejected before any work happens. With
    ``init_mode="first_pass"`` the memory is filled with gradients at ``x0``
    (one full data pass, not counted in the trace's epoch column, which is
    defined as iter * batch_size / N).
    """
    n, p = obj.dims
    needed = obj.sample_count * n * p * 8
    if needed > max_memory_bytes:
        raise ConfigError(
            f"SAGA memory would need {needed} bytes for {obj.sample_count} samples "
            f"of {n}x{p}, above the {max_memory_bytes} byte budget"
        )
    if isinstance(sched, str):
        if sched != "auto":
            raise ConfigError(f"unknown schedule {sched!r}; expected 'auto' or a StepSchedule")
        sched = StepSchedule("constant", saga_theory_step(params, obj.sample_count))
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")

    x = np.array(x0, dtype=np.float64)
    state = SagaState.initialize(obj, x, init_mode)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    records = [_record(obj, x, params, 0, batch_size, None, t0)]
    monitor = _ClampMonitor("landing_saga")
    clamp_count = 0
    for k in range(max_iter):
        idx = rng.integers(0, obj.sample_count, size=batch_size)
        epoch = k * batch_size / obj.sample_count
        x, info = step_saga(x, idx, obj, state, params, sched.eta(k, epoch))
        clamp_count += info.clamped
        monitor.push(info.clamped)
        step_index = k + 1
        if step_index % log_every == 0 or step_index == max_iter:
            records.append(_record(obj, x, params, step_index, batch_size, info, t0))
    return RunResult(records, x, max_iter, clamp_count)


def qr_retraction(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Retraction via the sign-canonical thin QR of X + Z."""
    q, _ = thin_qr(x + z)
    return q


def projection_retraction(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Polar/projection retraction Y (Y^T Y)^(-1/2) with Y = X + Z."""
    y = x + z
    return y @ spd_inv_sqrt(y.T @ y)


_RETRACTIONS = {"qr": qr_retraction, "projection": projection_retraction}


def run_riemannian(
    obj,
    x0: np.ndarray,
    params: LandingParams,
    retraction: str,
    sched: StepSchedule,
    batch,
    max_iter: int,
    seed: int = 0,
    log_every: int = 1,
    reorth_every: int = 1000,
) -> RunResult:
    """Riemannian (retraction-based) gradient descent or SGD baseline.

    ``batch`` is ``"full"`` or a minibatch size. Iterates stay orthonormal up
    to drift; a thin QR re-orthonormalization every ``reorth_every`` steps
    keeps the drift below 1e-10. ``params`` only feeds the merit/safe-region
    bookkeeping in the shared trace schema.
    """
    try:
        retract = _RETRACTIONS[retraction]
    except KeyError:
        raise ConfigError(
            f"unknown retraction {retraction!r}, expected one of {sorted(_RETRACTIONS)}"
        ) from None
    x = np.array(x0, dtype=np.float64)
    if float(np.linalg.norm(gram_residual(x))) > 1e-8:
        raise ContractViolationError("x0 must be orthonormal for Riemannian runs")
    full = batch == "full"
    if not full and (not isinstance(batch, int) or batch < 1):
        raise ConfigError(f"batch must be 'full' or a positive int, got {batch!r}")
    batch_size = obj.sample_count if full else batch
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    records = [_record(obj, x, params, 0, batch_size, None, t0)]
    for k in range(max_iter):
        if full:
            g = obj.grad_full(x)
        else:
            idx = rng.integers(0, obj.sample_count, size=batch_size)
            g = obj.grad_samples(idx, x)
        grad = riemannian_gradient_ext(g, x)
        eta = sched.eta(k, k * batch_size / obj.sample_count)
        x = retract(x, -eta * grad)
        if reorth_every and (k + 1) % reorth_every == 0:
            x, _ = thin_qr(x)
        step_index = k + 1
        if step_index % log_every == 0 or step_index == max_iter:
            info = StepInfo(eta, False, float(np.linalg.norm(grad)), 0.0)
            records.append(_record(obj, x, params, step_index, batch_size, info, t0))
    return RunResult(records, x, max_iter, 0)


def run_penalty_sgd(
    obj,
    x0: np.ndarray,
    params: LandingParams,
    lambda_pen: float,
    sched: StepSchedule,
    batch,
    max_iter: int,
    seed: int = 0,
    log_every: int = 1,
) -> RunResult:
    """Euclidean SGD on the penalized objective f + lambda_pen * N.

    No safeguard and no safe-region guarantee: iterates go wherever the
    penalty gradient sends them. The merit column is still computed with the
    landing ``params.mu`` so traces are comparable across methods.
    """
    if lambda_pen < 0:
        raise ConfigError(f"lambda_pen must be >= 0, got {lambda_pen}")
    x = np.array(x0, dtype=np.float64)
    full = batch == "full"
    if not full and (not isinstance(batch, int) or batch < 1):
        raise ConfigError(f"batch must be 'full' or a positive int, got {batch!r}")
    batch_size = obj.sample_count if full else batch
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    records = [_record(obj, x, params, 0, batch_size, None, t0, check_safe=False)]
    for k in range(max_iter):
        if full:
            g = obj.grad_full(x)
        else:
            idx = rng.integers(0, obj.sample_count, size=batch_size)
            g = obj.grad_samples(idx, x)
        direction = g + lambda_pen * (x @ gram_residual(x))
        eta = sched.eta(k, k * batch_size / obj.sample_count)
        x = x - eta * direction
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"penalty iterate diverged at iteration {k + 1}")
        step_index = k + 1
        if step_index % log_every == 0 or step_index == max_iter:
            info = StepInfo(eta, False, float(np.linalg.norm(direction)), 0.0)
            records.append(
                _record(obj, x, params, step_index, batch_size, info, t0, check_safe=False)
            )
    return RunResult(records, x, max_iter, 0)


def gd_theory_step(params: LandingParams) -> float:
    """Theory step for deterministic landing: the uniform safeguard bound.

    Equals min(Q(lam, eps, a~), 1/(2 lam)); combined with the per-step clamp it
    keeps every iterate in the safe region. The (much smaller) merit-descent
    bound is available as :func:`gd_descent_step`.
    """
    return safeguard_eta_star(params.a_tilde, params.epsilon, params.lam)


def gd_descent_step(params: LandingParams) -> float:
    """Step bound under which the merit function provably decreases each iteration:

    min( 1/(2 L_g), nu / (4 lam^2 L_g (1+eps)), eta* ).
    """
    eta_star = safeguard_eta_star(params.a_tilde, params.epsilon, params.lam)
    return min(
        0.5 / params.l_g,
        params.nu / (4.0 * params.lam**2 * params.l_g * (1.0 + params.epsilon)),
        eta_star,
    )


def sgd_theory_step(params: LandingParams) -> float:
    """Base step eta0 for stochastic landing schedules (same bound as the descent step)."""
    return gd_descent_step(params)


def saga_theory_step(params: LandingParams, n_samples: int, l_f: float | None = None) -> float:
    """Theory step for landing SAGA:

    min( eta*, rho/L_g, 1/(sqrt(8 N (1+eps)) L_f),
         (rho / (8 N (4N+2) L_g L_f^2 (1+eps)^2))^(1/3) ).
    """
    lf = params.l_smooth if l_f is None else l_f
    eta_star = safeguard_eta_star(params.a_tilde, params.epsilon, params.lam)
    one_eps = 1.0 + params.epsilon
    return min(
        eta_star,
        params.rho / params.l_g,
        1.0 / (math.sqrt(8.0 * n_samples * one_eps) * lf),
        (params.rho / (8.0 * n_samples * (4.0 * n_samples + 2.0) * params.l_g * lf**2 * one_eps**2))
        ** (1.0 / 3.0),
    )
