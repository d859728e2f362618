"""Geometric core of landing (retraction-free) optimization on the Stiefel manifold.

The landing field at X in R^{n x p} is

    Lambda(X) = skew(G X^T) X + lambda * X (X^T X - I_p),       G = grad f(X),

the sum of the extended Riemannian gradient (canonical metric) and an
attraction term lambda * grad N(X), where N(X) = ||X^T X - I||^2 / 4 measures
the constraint violation. The two terms are orthogonal for every X, which is
what makes the per-step safeguard and the merit-function analysis work.

Iterates are meant to stay in the safe region { X : ||X^T X - I|| <= eps }.
The module provides the per-step safeguard step size that guarantees this, a
grid estimate of its uniform lower bound, the merit function
L = f + h + mu * N with h(X) = -<sym(X^T G), X^T X - I>/2, and sampling-based
estimators for the regularity constants the step-size theory needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import matcore
from .errors import ContractViolationError

__all__ = [
    "LandingParams",
    "FieldDecomposition",
    "gram_residual",
    "distance",
    "distance_sq",
    "in_safe_region",
    "singular_values_within_window",
    "riemannian_gradient_ext",
    "landing_field",
    "landing_direction",
    "field_norm_bounds",
    "safeguard_eta",
    "safeguard_eta_star",
    "merit_value",
    "mu_lower_bound",
    "sample_safe_region",
    "smoothness_estimate",
    "estimate_field_bound",
]

# Distances may exceed eps by accumulated rounding only; beyond this slack the
# safe-region precondition is treated as genuinely violated.
SAFE_REGION_SLACK = 1e-9


def gram_residual(x: np.ndarray) -> np.ndarray:
    """Return X^T X - I_p."""
    x = np.asarray(x)
    a = x.T @ x
    return a - np.eye(x.shape[1])


def distance(x: np.ndarray) -> float:
    """Constraint violation d = ||X^T X - I||_F."""
    return float(np.linalg.norm(gram_residual(x)))


def distance_sq(x: np.ndarray) -> float:
    """Squared violation measure N(X) = ||X^T X - I||^2 / 4 (zero iff X is orthonormal)."""
    x = matcore.as_matrix(x, "x")
    if x.shape[0] < x.shape[1]:
        raise ContractViolationError(f"x needs n >= p, got shape {x.shape}")
    return 0.25 * distance(x) ** 2


def in_safe_region(x: np.ndarray, epsilon: float) -> bool:
    """True iff ||X^T X - I|| <= epsilon."""
    return distance(x) <= epsilon


def singular_values_within_window(x: np.ndarray, epsilon: float) -> bool:
    """Consequence check: all singular values of X lie in [sqrt(1-eps), sqrt(1+eps)].

    Implied by membership in the safe region; exposed so tests and diagnostics
    can verify the implication directly.
    """
    sigma = np.linalg.svd(np.asarray(x), compute_uv=False)
    lo, hi = math.sqrt(max(0.0, 1.0 - epsilon)), math.sqrt(1.0 + epsilon)
    return bool(np.all(sigma >= lo - 1e-12) and np.all(sigma <= hi + 1e-12))


def riemannian_gradient_ext(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Extended Riemannian gradient skew(G X^T) X, defined for any X.

    For orthonormal X this is the Riemannian gradient of f in the (doubled)
    canonical metric and equals (G - X G^T X)/2. Computed with four p-sized
    products when n > 2p, otherwise through the n x n skew matrix; both
    orderings cost O(min(n, 2p) * n * p).
    """
    g = np.asarray(g)
    x = np.asarray(x)
    if g.shape != x.shape:
        raise ContractViolationError(f"shape mismatch: grad {g.shape} vs x {x.shape}")
    n, p = x.shape
    if n > 2 * p:
        a = x.T @ x
        c = g.T @ x
        return 0.5 * (g @ a - x @ c)
    return matcore.skew_part(g @ x.T) @ x


@dataclass(frozen=True)
class FieldDecomposition:
    """Landing field split into its two mutually orthogonal components.

    ``total = tangent_part + normal_part`` holds exactly (it is formed by that
    addition); the inner product of the parts vanishes to roundoff.
    """

    tangent_part: np.ndarray  # skew(G X^T) X
    normal_part: np.ndarray  # lambda * X (X^T X - I)
    total: np.ndarray
    tangent_norm: float
    normal_norm: float
    distance: float  # ||X^T X - I||


def landing_field(g: np.ndarray, x: np.ndarray, lam: float) -> FieldDecomposition:
    """Landing field with full tangent/normal decomposition.

    Uses five O(np^2) products (the shared Gram matrices plus one product per
    exposed component). The optimizer hot path uses :func:`landing_direction`,
    which fuses the components into four products when the split is not needed.
    """
    g = np.asarray(g)
    x = np.asarray(x)
    if g.shape != x.shape:
        raise ContractViolationError(f"shape mismatch: grad {g.shape} vs x {x.shape}")
    if lam < 0:
        raise ContractViolationError(f"lambda must be >= 0, got {lam}")
    p = x.shape[1]
    a = x.T @ x
    c = g.T @ x
    resid = a - np.eye(p)
    tangent = 0.5 * (g @ a - x @ c)
    normal = lam * (x @ resid)
    total = tangent + normal
    return FieldDecomposition(
        tangent_part=tangent,
        normal_part=normal,
        total=total,
        tangent_norm=float(np.linalg.norm(tangent)),
        normal_norm=float(np.linalg.norm(normal)),
        distance=float(np.linalg.norm(resid)),
    )


def landing_direction(g: np.ndarray, x: np.ndarray, lam: float) -> tuple[np.ndarray, float, float]:
    """Landing field total with exactly four O(np^2) matrix products.

    Fused ordering: A = X^T X, B = (G/2 + lambda X) A, C = G^T X, D = X C and
    Lambda = B - D/2 - lambda X. Returns ``(field, ||field||, ||X^T X - I||)``,
    which is everything a safeguarded step needs.
    """
    p = x.shape[1]
    a = x.T @ x
    b = (0.5 * g + lam * x) @ a
    c = g.T @ x
    d = x @ c
    field = b - 0.5 * d - lam * x
    dist = float(np.linalg.norm(a - np.eye(p)))
    return field, float(np.linalg.norm(field)), dist


def field_norm_bounds(fd: FieldDecomposition, lam: float, epsilon: float) -> tuple[float, float]:
    """Bracket ||F||^2 between ||A X||^2 + 4 lam^2 (1 -/+ eps) N(X).

    Valid whenever the underlying point is in the safe region; callers assert
    ``lower <= ||F||^2 <= upper``.
    """
    ax_sq = fd.tangent_norm**2
    n_of_x = 0.25 * fd.distance**2
    return (
        ax_sq + 4.0 * lam**2 * (1.0 - epsilon) * n_of_x,
        ax_sq + 4.0 * lam**2 * (1.0 + epsilon) * n_of_x,
    )


def safeguard_eta(g_norm: float, d: float, lam: float, epsilon: float) -> float:
    """Largest step size guaranteed to keep the next iterate in the safe region.

    For an update X - eta * F with ||F|| = g from a point at distance
    d = ||X^T X - I|| <= eps < 1:

        eta(X) = min{ (lam d (1-d) + sqrt(lam^2 d^2 (1-d)^2 + g^2 (eps-d))) / g^2,
                      1 / (2 lam) }.

    A zero field returns 1/(2 lam) (the first branch diverges; the min is well
    defined). Distances above eps by more than a small rounding slack raise
    :class:`ContractViolationError`; within the slack d is clamped to eps.
    """
    if lam <= 0:
        raise ContractViolationError(f"lambda must be > 0, got {lam}")
    if not 0.0 < epsilon < 1.0:
        raise ContractViolationError(f"epsilon must be in (0, 1), got {epsilon}")
    if d < 0 or g_norm < 0:
        raise ContractViolationError("norms must be nonnegative")
    if d > epsilon + SAFE_REGION_SLACK:
        raise ContractViolationError(
            f"point is outside the safe region: distance {d:.6e} > epsilon {epsilon}"
        )
    cap = 0.5 / lam
    if g_norm == 0.0:
        return cap
    d = min(d, epsilon)
    t = lam * d * (1.0 - d)
    g_sq = g_norm * g_norm
    root = (t + math.sqrt(t * t + g_sq * (epsilon - d))) / g_sq
    return min(root, cap)


def _golden_min(fun, lo: float, hi: float, iters: int = 48) -> float:
    """Golden-section minimum of a unimodal-ish scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return min(fc, fd)


def safeguard_kernel(lam: float, epsilon: float, a, d):
    """K(lam, eps, a, d), the quantity whose infimum lower-bounds the safeguard step."""
    a = np.asarray(a, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    num = lam * (1.0 - epsilon) * d + a * np.sqrt((epsilon - d) / 2.0)
    den = a * a + lam * lam * (1.0 + epsilon) * d * d
    return num / den


def safeguard_eta_star(
    a_tilde: float, epsilon: float, lam: float, grid: int = 256
) -> float:
    """Uniform lower bound on the safeguard step over the whole safe region.

    Estimates

        Q(lam, eps, a~) = inf_{a in (0, a~], d in (0, eps]} K(lam, eps, a, d),
        K(lam, eps, a, d) = (lam (1-eps) d + a sqrt((eps-d)/2))
                            / (a^2 + lam^2 (1+eps) d^2),

    by a ``grid x grid`` logarithmic search refined with golden-section passes
    along each axis, together with the analytic boundary limits
    (1-eps)/(lam (1+eps) eps) (a -> 0) and sqrt(eps/2)/a~ (d -> 0). Returns
    min(Q, 1/(2 lam)), always strictly positive.

    This is a diagnostic/default-step quantity; trajectory safety rests on the
    exact per-step :func:`safeguard_eta` clamp, never on this estimate.
    """
    if a_tilde <= 0 or lam <= 0 or not 0.0 < epsilon < 1.0:
        raise ContractViolationError("need a_tilde > 0, lam > 0, 0 < epsilon < 1")
    a_grid = a_tilde * np.logspace(-6.0, 0.0, grid)
    d_grid = epsilon * np.logspace(-6.0, 0.0, grid)
    k = safeguard_kernel(lam, epsilon, a_grid[:, None], d_grid[None, :])
    i, j = np.unravel_index(np.argmin(k), k.shape)
    best = float(k[i, j])

    # Coordinate golden-section refinement around the best grid cell, in log space.
    a_lo = a_grid[max(i - 1, 0)]
    a_hi = a_grid[min(i + 1, grid - 1)]
    d_lo = d_grid[max(j - 1, 0)]
    d_hi = d_grid[min(j + 1, grid - 1)]
    a_c, d_c = float(a_grid[i]), float(d_grid[j])
    for _ in range(3):
        best_a = _golden_min(
            lambda la: float(safeguard_kernel(lam, epsilon, math.exp(la), d_c)),
            math.log(a_lo),
            math.log(a_hi),
        )
        best_d = _golden_min(
            lambda ld: float(safeguard_kernel(lam, epsilon, a_c, min(math.exp(ld), epsilon))),
            math.log(d_lo),
            math.log(d_hi),
        )
        best = min(best, best_a, best_d)

    boundary_a0 = (1.0 - epsilon) / (lam * (1.0 + epsilon) * epsilon)
    boundary_d0 = math.sqrt(epsilon / 2.0) / a_tilde
    corner = float(safeguard_kernel(lam, epsilon, a_tilde, epsilon))
    q = min(best, boundary_a0, boundary_d0, corner)
    return min(q, 0.5 / lam)


def merit_value(x: np.ndarray, f_val: float, grad: np.ndarray, mu: float) -> float:
    """Merit function L(X) = f(X) - <sym(X^T G), X^T X - I>/2 + mu N(X).

    Coincides with f on the manifold. For mu at or above
    :func:`mu_lower_bound`, stepping along the landing field decreases L, which
    is what certifies simultaneous progress in optimality and feasibility.
    """
    x = np.asarray(x)
    grad = np.asarray(grad)
    resid = gram_residual(x)
    sym = matcore.sym_part(x.T @ grad)
    h = -0.5 * float(np.sum(sym * resid))
    return float(f_val) + h + mu * 0.25 * float(np.sum(resid * resid))


def mu_lower_bound(
    l_smooth: float, s_bound: float, l_hat: float, lam: float, epsilon: float
) -> float:
    """Smallest merit weight mu for which the merit descent inequality is guaranteed:

        mu >= 2/(3 - 4 eps) * ( L (1-eps) + 3 s + L_hat^2 (1+eps)^2 / (lam (1-eps)) ),

    where L is the smoothness constant of f on the safe region, s bounds
    ||sym(X^T grad f)|| there, and L_hat = max(L, sup ||grad f||). Requires
    eps < 3/4.
    """
    if not 0.0 <= epsilon < 0.75:
        raise ContractViolationError(f"epsilon must be in [0, 3/4), got {epsilon}")
    if lam <= 0:
        raise ContractViolationError(f"lambda must be > 0, got {lam}")
    return (2.0 / (3.0 - 4.0 * epsilon)) * (
        l_smooth * (1.0 - epsilon)
        + 3.0 * s_bound
        + l_hat**2 * (1.0 + epsilon) ** 2 / (lam * (1.0 - epsilon))
    )


@dataclass(frozen=True)
class LandingParams:
    """Attraction weight, safe-region radius, merit constants and regularity estimates.

    ``nu = lam * mu`` and ``rho = min(1/2, nu / (4 lam^2 (1+eps)))`` are derived
    exactly; ``l_g = l_fh + mu * (2 + 3 eps)`` combines the smoothness of f + h
    with the (2 + 3 eps) bound on the smoothness of N. The merit guarantees
    assume ``mu >= mu_lower_bound(...)``; the constructor does not enforce that
    so diagnostics can probe deliberately undersized mu.
    """

    lam: float = 1.0
    epsilon: float = 0.5
    mu: float = 1.0
    l_smooth: float = 1.0
    s_bound: float = 0.0
    l_hat: float = 1.0
    l_fh: float = 1.0
    a_tilde: float = 1.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ContractViolationError(f"lam must be > 0, got {self.lam}")
        if not 0.0 < self.epsilon < 0.75:
            raise ContractViolationError(
                f"epsilon must be in (0, 3/4), got {self.epsilon}"
            )
        for name in ("mu", "l_smooth", "l_hat", "l_fh", "a_tilde"):
            if getattr(self, name) <= 0:
                raise ContractViolationError(f"{name} must be > 0")
        if self.s_bound < 0:
            raise ContractViolationError("s_bound must be >= 0")

    @property
    def nu(self) -> float:
        return self.lam * self.mu

    @property
    def rho(self) -> float:
        return min(0.5, self.nu / (4.0 * self.lam**2 * (1.0 + self.epsilon)))

    @property
    def l_g(self) -> float:
        return self.l_fh + self.mu * (2.0 + 3.0 * self.epsilon)

    @classmethod
    def from_objective(
        cls,
        obj,
        lam: float = 1.0,
        epsilon: float = 0.5,
        mu: float | None = None,
        samples: int = 32,
        rng: np.random.Generator | None = None,
        stochastic: bool = False,
    ) -> "LandingParams":
        """Build parameters from sampled regularity estimates of an objective.

        ``mu`` defaults to :func:`mu_lower_bound` of the estimates. The f + h
        smoothness has no closed form in terms of the other constants; the
        heuristic ``l_fh = L + 3 s + 2 L_hat`` errs on the large side, which
        only shrinks theory-derived steps.
        """
        rng = np.random.default_rng(0) if rng is None else rng
        l_smooth, s_bound, l_hat = smoothness_estimate(obj, epsilon, samples, rng)
        a_tilde = estimate_field_bound(obj, epsilon, samples, rng, stochastic=stochastic)
        l_smooth = max(l_smooth, 1e-12)
        l_hat = max(l_hat, 1e-12)
        if mu is None:
            mu = mu_lower_bound(l_smooth, s_bound, l_hat, lam, epsilon)
        l_fh = l_smooth + 3.0 * s_bound + 2.0 * l_hat
        return cls(
            lam=lam,
            epsilon=epsilon,
            mu=mu,
            l_smooth=l_smooth,
            s_bound=s_bound,
            l_hat=l_hat,
            l_fh=l_fh,
            a_tilde=max(a_tilde, 1e-12),
        )


def _haar_stiefel(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    q, _ = matcore.thin_qr(rng.standard_normal((n, p)))
    return q


def sample_safe_region(
    n: int,
    p: int,
    epsilon: float,
    rng: np.random.Generator,
    dist: float | None = None,
) -> np.ndarray:
    """Random point of the safe region with exactly controlled violation.

    Draws a Haar-orthonormal Q and a random symmetric E scaled to
    ``||E|| = dist`` (uniform in (0, eps] when unspecified), and returns
    Q (I + E)^{1/2}, whose Gram residual is exactly E. ``dist = 0`` gives a
    Haar point on the manifold.
    """
    if not 0.0 < epsilon < 1.0:
        raise ContractViolationError(f"epsilon must be in (0, 1), got {epsilon}")
    if dist is None:
        dist = epsilon * rng.uniform(0.0, 1.0)
    if dist < 0 or dist > epsilon:
        raise ContractViolationError(f"dist must be in [0, eps], got {dist}")
    q = _haar_stiefel(n, p, rng)
    if dist == 0.0 or p == 0:
        return q
    e = rng.standard_normal((p, p))
    e = 0.5 * (e + e.T)
    norm = np.linalg.norm(e)
    if norm == 0.0:  # pragma: no cover - measure zero
        return q
    e *= dist / norm
    w, v = np.linalg.eigh(np.eye(p) + e)
    return q @ ((v * np.sqrt(np.maximum(w, 0.0))) @ v.T)


def smoothness_estimate(
    obj, epsilon: float, samples: int, rng: np.random.Generator
) -> tuple[float, float, float]:
    """Sampled estimates (L, s, L_hat) of the regularity constants on the safe region.

    L is the largest ratio ||grad f(X) - grad f(Y)|| / ||X - Y|| over sampled
    pairs, s the largest ||sym(X^T grad f(X))||, L' the largest ||grad f(X)]]
    and L_hat = max(L, L'); all are multiplied by a 1.5 safety factor. This is
    a heuristic stand-in for suprema the theory assumes to exist; supply
    measured constants instead when they are known.
    """
    if samples < 2:
        raise ContractViolationError("need at least 2 samples")
    n, p = obj.dims
    pts = [sample_safe_region(n, p, epsilon, rng) for _ in range(samples)]
    grads = [obj.grad_full(x) for x in pts]
    l_prime = max(float(np.linalg.norm(g)) for g in grads)
    s = max(
        float(np.linalg.norm(matcore.sym_part(x.T @ g)))
        for x, g in zip(pts, grads)
    )
    lips = 0.0
    for i in range(samples - 1):
        for j in (i + 1, (i + samples // 2) % samples):
            if j == i:
                continue
            dx = float(np.linalg.norm(pts[i] - pts[j]))
            if dx > 0:
                lips = max(lips, float(np.linalg.norm(grads[i] - grads[j])) / dx)
    return 1.5 * lips, 1.5 * s, 1.5 * max(lips, l_prime)


def estimate_field_bound(
    obj,
    epsilon: float,
    samples: int,
    rng: np.random.Generator,
    stochastic: bool = False,
) -> float:
    """Sampled bound a~ on the Riemannian-gradient norm over the safe region.

    With ``stochastic=True`` the maximum also runs over random per-sample
    gradients, matching the skew fields that stochastic variants follow.
    """
    n, p = obj.dims
    worst = 0.0
    for _ in range(samples):
        x = sample_safe_region(n, p, epsilon, rng)
        grads = [obj.grad_full(x)]
        if stochastic and obj.sample_count > 1:
            idx = rng.integers(0, obj.sample_count, size=min(8, obj.sample_count))
            grads.extend(obj.grad_samples(np.asarray([i]), x) for i in idx)
        for g in grads:
            worst = max(worst, float(np.linalg.norm(riemannian_gradient_ext(g, x))))
    return 1.5 * worst
