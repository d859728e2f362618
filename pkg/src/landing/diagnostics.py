"""Numerical property suites corroborating the step-size and merit guarantees.

Each check draws random configurations under a seed, measures the worst
violation of the claimed inequality, and reports pass/fail against a stated
tolerance. Negative-control knobs (an inflated safeguard, an undersized merit
weight) deliberately break the assumptions and must flip the checks to FAIL,
guarding against vacuous tests. Everything is deterministic under the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import ConfigError
from .geometry import (
    LandingParams,
    field_norm_bounds,
    gram_residual,
    landing_field,
    merit_value,
    mu_lower_bound,
    safeguard_eta,
    sample_safe_region,
)
from .optim import RunRecord, StepSchedule, gd_theory_step, run_landing_gd
from .problems import gen_pca_data, linear_objective, pca_objective, random_stiefel

__all__ = [
    "PropertyReport",
    "fd_directional_derivative",
    "check_safeguard_containment",
    "check_field_orthogonality",
    "check_norm_sandwich",
    "check_merit_inequalities",
    "check_rate_halving",
    "run_suite",
    "SUITES",
]


@dataclass(frozen=True)
class PropertyReport:
    """Outcome of one property check; ``passed`` iff worst violation <= tolerance."""

    name: str
    draws: int
    worst_violation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_violation <= self.tolerance

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (
            f"{tag} {self.name}: worst violation {self.worst_violation:.3e} "
            f"(tolerance {self.tolerance:.3e}, {self.draws} draws)"
        )


def fd_directional_derivative(scalar_fn, x: np.ndarray, direction: np.ndarray, delta: float) -> float:
    """Central-difference estimate of <grad phi(x), direction> with O(delta^2) error.

    Steps ``delta`` along the unit direction and rescales by ``||direction||``.
    """
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return 0.0
    u = direction / norm
    return (scalar_fn(x + delta * u) - scalar_fn(x - delta * u)) / (2.0 * delta) * norm


def check_safeguard_containment(
    n: int,
    p: int,
    lam: float,
    epsilon: float,
    draws: int,
    seed: int,
    eta_scale: float = 1.0,
) -> PropertyReport:
    """Post-step distance never exceeds eps (+1e-12 rounding slack).

    Random safe-region points with controlled distance (every 10th draw sits
    exactly on the d = eps boundary), random skew fields across three decades
    of magnitude, step = ``eta_scale`` times the safeguard. ``eta_scale > 1``
    is the negative control and produces genuine violations.
    """
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for i in range(draws):
        dist = epsilon if i % 10 == 9 else None
        x = sample_safe_region(n, p, epsilon, rng, dist=dist)
        a = matcore.skew_part(rng.standard_normal((n, n)))
        a *= 10.0 ** rng.uniform(-2.0, 1.5)
        f = a @ x + lam * (x @ gram_residual(x))
        g_norm = float(np.linalg.norm(f))
        d = float(np.linalg.norm(gram_residual(x)))
        eta = eta_scale * safeguard_eta(g_norm, min(d, epsilon), lam, epsilon)
        d_next = float(np.linalg.norm(gram_residual(x - eta * f)))
        worst = max(worst, d_next - epsilon)
    return PropertyReport("safeguard_containment", draws, worst, 1e-12)


def check_field_orthogonality(n: int, p: int, lam: float, epsilon: float, draws: int, seed: int) -> PropertyReport:
    """Tangent and normal parts of the landing field are orthogonal to 1e-10 relative."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(draws):
        x = sample_safe_region(n, p, epsilon, rng, dist=epsilon * (0.1 + 0.9 * rng.random()))
        g = rng.standard_normal(x.shape)
        fd = landing_field(g, x, lam)
        denom = max(fd.tangent_norm * fd.normal_norm, 1e-300)
        cosine = abs(float(np.sum(fd.tangent_part * fd.normal_part))) / denom
        worst = max(worst, cosine)
    return PropertyReport("field_orthogonality", draws, worst, 1e-10)


def check_norm_sandwich(n: int, p: int, lam: float, epsilon: float, draws: int, seed: int) -> PropertyReport:
    """||F||^2 lies between the two closed-form bounds on every draw."""
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(draws):
        x = sample_safe_region(n, p, epsilon, rng)
        g = rng.standard_normal(x.shape)
        fd = landing_field(g, x, lam)
        lower, upper = field_norm_bounds(fd, lam, epsilon)
        f_sq = float(np.sum(fd.total * fd.total))
        scale = max(upper, 1e-300)
        worst = max(worst, (lower - f_sq) / scale, (f_sq - upper) / scale)
    return PropertyReport("field_norm_sandwich", draws, worst, 1e-10)


def check_merit_inequalities(
    obj, params: LandingParams, draws: int, seed: int, delta_scale: float = 1e-5
) -> PropertyReport:
    """Finite-difference check of the two merit descent inequalities.

    At safe-region points, the directional derivative of the merit function
    along the landing field must be at least 0.49 ||grad f||^2 + 0.99 nu N(X)
    and at least 0.99 rho ||Lambda||^2; the slack factors absorb the O(delta^2)
    differencing error.
    """
    n, p = obj.dims
    rng = np.random.default_rng(seed)

    def merit_at(y):
        return merit_value(y, obj.value(y), obj.grad_full(y), params.mu)

    worst = -np.inf
    for i in range(draws):
        dist = params.epsilon if i % 8 == 7 else None
        x = sample_safe_region(n, p, params.epsilon, rng, dist=dist)
        g = obj.grad_full(x)
        fd = landing_field(g, x, params.lam)
        if float(np.linalg.norm(fd.total)) == 0.0:
            continue
        delta = delta_scale * max(1.0, float(np.linalg.norm(x)))
        lhs = fd_directional_derivative(merit_at, x, fd.total, delta)
        n_of_x = 0.25 * fd.distance**2
        rhs_descent = 0.49 * fd.tangent_norm**2 + 0.99 * params.nu * n_of_x
        rhs_rho = 0.99 * params.rho * float(np.sum(fd.total * fd.total))
        worst = max(worst, rhs_descent - lhs, rhs_rho - lhs)
    return PropertyReport("merit_inequalities", draws, worst, 1e-9)


def check_rate_halving(trace_k: list[RunRecord], trace_2k: list[RunRecord]) -> PropertyReport:
    """Running means over a doubled horizon drop to at most 0.75x the shorter mean.

    Consistent with O(1/K) decay of both ||grad f||^2 and N(X) up to the
    non-asymptotic constant; a trace with non-decaying gradients fails.
    """
    if not trace_k or not trace_2k:
        raise ConfigError("rate check needs nonempty traces")

    def means(recs):
        g = float(np.mean([r.grad_norm_sq for r in recs]))
        nx = float(np.mean([r.n_of_x for r in recs]))
        return g, nx

    g_k, n_k = means(trace_k)
    g_2k, n_2k = means(trace_2k)
    worst = max(
        g_2k - 0.75 * g_k,
        n_2k - 0.75 * n_k,
    )
    return PropertyReport("rate_halving", len(trace_2k), worst, 0.0)


# ---------------------------------------------------------------------------
# Named suites used by `landing verify` and the negative-control tests.
# ---------------------------------------------------------------------------


def _normal_curvature_objective(curvature: float = 1.0):
    """Quadratic bowl f(x) = c ||x||^2 / 2 on n x 1 frames.

    Its Riemannian gradient vanishes identically, so the merit inequality
    reduces to the pure normal-direction balance and genuinely requires
    mu >= mu_lower_bound; undersized mu is violated on shrunk boundary draws.
    This is the instance that makes the mu negative control meaningful.
    """
    m_dim = 16

    def value(x):
        return 0.5 * curvature * float(np.sum(x * x))

    def grad_full(x):
        return curvature * x

    from .problems import ObjectiveHandle

    return ObjectiveHandle(
        "normal_bowl",
        (m_dim, 1),
        1,
        value,
        grad_full,
        lambda idx, x: grad_full(x),
        lambda idx, x: np.broadcast_to(grad_full(x), (np.atleast_1d(idx).size, m_dim, 1)),
    )


def _geometry_suite(seed: int, eta_scale: float = 1.0, **_) -> list[PropertyReport]:
    return [
        check_field_orthogonality(30, 5, 1.0, 0.5, 1000, seed),
        check_norm_sandwich(30, 5, 1.0, 0.5, 1000, seed + 1),
        check_safeguard_containment(30, 5, 1.0, 0.5, 2000, seed + 2, eta_scale=eta_scale),
    ]


def _merit_suite(seed: int, mu_scale: float = 1.0, **_) -> list[PropertyReport]:
    inst = gen_pca_data(20, 3, 200, 0.1, seed)
    obj = pca_objective(inst)
    rng = np.random.default_rng(seed + 1)
    params = LandingParams.from_objective(obj, lam=1.0, epsilon=0.5, rng=rng)
    params_scaled = LandingParams(
        lam=params.lam,
        epsilon=params.epsilon,
        mu=params.mu * mu_scale,
        l_smooth=params.l_smooth,
        s_bound=params.s_bound,
        l_hat=params.l_hat,
        l_fh=params.l_fh,
        a_tilde=params.a_tilde,
    )
    reports = [check_merit_inequalities(obj, params_scaled, 200, seed + 2)]

    # Curvature-dominated control: exact constants, stressed normal direction.
    c, lam, eps = 1.0, 10.0, 0.5
    bowl = _normal_curvature_objective(c)
    s_exact = c * (1.0 + eps)
    l_prime = c * np.sqrt(1.0 + eps)
    mu_lb = mu_lower_bound(c, s_exact, max(c, l_prime), lam, eps)
    bowl_params = LandingParams(
        lam=lam,
        epsilon=eps,
        mu=mu_lb * mu_scale,
        l_smooth=c,
        s_bound=s_exact,
        l_hat=max(c, l_prime),
        l_fh=3.0 * c,
        a_tilde=1.0,
    )
    rep = check_merit_inequalities(bowl, bowl_params, 200, seed + 3)
    reports.append(
        PropertyReport("merit_normal_curvature", rep.draws, rep.worst_violation, rep.tolerance)
    )
    return reports


def _descent_suite(seed: int, **_) -> list[PropertyReport]:
    inst = gen_pca_data(50, 5, 500, 0.1, seed)
    obj = pca_objective(inst)
    rng = np.random.default_rng(seed + 1)
    params = LandingParams.from_objective(obj, lam=1.0, epsilon=0.5, rng=rng)
    x0 = random_stiefel(50, 5, np.random.default_rng(seed + 2))
    sched = StepSchedule("constant", gd_theory_step(params))
    half = run_landing_gd(obj, x0, params, sched, 500, log_every=1)
    full = run_landing_gd(obj, x0, params, sched, 1000, log_every=1)
    reports = [check_rate_halving(half.records, full.records)]

    increments = np.diff([r.merit for r in full.records])
    worst_up = float(increments.max()) if increments.size else 0.0
    reports.append(PropertyReport("merit_monotone_descent", len(full.records), worst_up, 1e-12))
    return reports


def _oracle_suite(seed: int, **_) -> list[PropertyReport]:
    from .problems import penalty_oracle

    rng = np.random.default_rng(seed)
    # unit-scale singular values keep lambda = 10 inside the 1/lambda regime
    m = rng.standard_normal((20, 5)) / np.sqrt(20.0)
    worst_stat = -np.inf
    gaps = []
    for lam_pen in (10.0, 100.0, 1000.0):
        x_star, x_st = penalty_oracle(m, lam_pen)
        grad_g = m + lam_pen * (x_star @ gram_residual(x_star))
        worst_stat = max(worst_stat, float(np.linalg.norm(grad_g)) / float(np.linalg.norm(m)))
        gaps.append(lam_pen * float(np.linalg.norm(x_star - x_st)))
    reports = [PropertyReport("penalty_oracle_stationarity", 3, worst_stat, 1e-10)]
    spread = (max(gaps) - min(gaps)) / max(gaps)
    reports.append(PropertyReport("penalty_gap_inverse_lambda", 3, spread, 0.2))

    # Full-gradient vs finite differences on each objective family.
    worst_fd = -np.inf
    pca = pca_objective(gen_pca_data(12, 3, 60, 0.1, seed + 1))
    from .problems import gen_ica_data, ica_objective

    ica = ica_objective(gen_ica_data(6, 200, seed + 2))
    lin = linear_objective(rng.standard_normal((8, 3)))
    for obj in (pca, ica, lin):
        n, p = obj.dims
        for _ in range(5):
            x = sample_safe_region(n, p, 0.5, rng)
            g = obj.grad_full(x)
            d = rng.standard_normal((n, p))
            fd = fd_directional_derivative(obj.value, x, d, 1e-6 * max(1.0, float(np.linalg.norm(x))))
            exact = float(np.sum(g * d))
            scale = max(abs(exact), abs(fd), 1e-8)
            worst_fd = max(worst_fd, abs(fd - exact) / scale)
    reports.append(PropertyReport("objective_fd_gradients", 30, worst_fd, 1e-5))
    return reports


SUITES = {
    "geometry": _geometry_suite,
    "merit": _merit_suite,
    "descent": _descent_suite,
    "oracle": _oracle_suite,
}


def run_suite(name: str, seed: int, eta_scale: float = 1.0, mu_scale: float = 1.0) -> list[PropertyReport]:
    """Run a named property suite; returns one report per property."""
    try:
        suite = SUITES[name]
    except KeyError:
        raise ConfigError(f"unknown suite {name!r}, expected one of {sorted(SUITES)}") from None
    return suite(seed, eta_scale=eta_scale, mu_scale=mu_scale)
