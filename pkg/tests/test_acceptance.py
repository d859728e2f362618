"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings. Every tolerance is fixed here; nothing is calibrated at
run time.
"""

import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from landing.diagnostics import (
    check_field_orthogonality,
    check_norm_sandwich,
    check_safeguard_containment,
)
from landing.geometry import (
    LandingParams,
    gram_residual,
    landing_field,
    riemannian_gradient_ext,
    sample_safe_region,
)
from landing.harness import parse_config, run_experiment, run_grid, verify
from landing.optim import (
    SagaState,
    StepSchedule,
    gd_theory_step,
    qr_retraction,
    run_landing_gd,
    run_landing_saga,
    run_landing_sgd,
    run_penalty_sgd,
    run_riemannian,
    step_landing,
)
from landing.problems import (
    amari_distance,
    gen_ica_data,
    gen_pca_data,
    ica_objective,
    linear_objective,
    pca_objective,
    pca_reference_optimum,
    penalty_oracle,
    principal_angles,
    random_stiefel,
)


def report(num: int, text: str) -> None:
    print(f"PASS criterion {num}: {text}")


@pytest.fixture(scope="module")
def pca_setup():
    """Shared PCA instance for criteria 3, 4, 5 and 9 (n=50, p=5, N=500)."""
    inst = gen_pca_data(50, 5, 500, 0.1, 101)
    obj = pca_objective(inst)
    params = LandingParams.from_objective(obj, lam=1.0, epsilon=0.5, rng=np.random.default_rng(102))
    x0 = random_stiefel(50, 5, np.random.default_rng(103))
    return inst, obj, params, x0


@pytest.fixture(scope="module")
def merit_run(pca_setup):
    """The criterion-3 trajectory, reused by criteria 4 and 5."""
    _, obj, params, x0 = pca_setup
    eta = gd_theory_step(params)
    sched = StepSchedule("constant", eta)
    return run_landing_gd(obj, x0, params, sched, 2000, log_every=1), eta


def test_criterion_1_safeguard_containment():
    t0 = time.perf_counter()
    rep = check_safeguard_containment(30, 5, 1.0, 0.5, 10_000, seed=201)
    elapsed = time.perf_counter() - t0
    assert rep.worst_violation <= 1e-12, rep
    assert elapsed < 10.0, f"containment check took {elapsed:.1f}s"
    report(1, f"10^4 safeguarded steps stayed within eps+1e-12 "
              f"(worst excess {rep.worst_violation:.2e}, {elapsed:.1f}s)")


def test_criterion_2_orthogonality_and_sandwich():
    ortho = check_field_orthogonality(30, 5, 1.0, 0.5, 1000, seed=202)
    sandwich = check_norm_sandwich(30, 5, 1.0, 0.5, 1000, seed=203)
    assert ortho.worst_violation < 1e-10, ortho
    assert sandwich.worst_violation <= 1e-10, sandwich
    report(2, f"1000 draws: |cos(tangent,normal)| < 1e-10 "
              f"(worst {ortho.worst_violation:.2e}) and ||F||^2 inside both bounds")


def test_criterion_3_merit_descent(merit_run):
    t0 = time.perf_counter()
    result, eta = merit_run
    merits = [r.merit for r in result.records]
    worst_up = max(b - a for a, b in zip(merits, merits[1:]))
    last = result.records[-1]
    assert worst_up <= 1e-12, f"merit increased by {worst_up:.3e}"
    assert last.n_of_x < 1e-10, last.n_of_x
    assert last.grad_norm_sq < 1e-8, last.grad_norm_sq
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    report(3, f"theory step {eta:.3f}: merit nonincreasing over 2000 iters "
              f"(worst increment {worst_up:.1e}), final N(X)={last.n_of_x:.1e}, "
              f"final ||grad f||^2={last.grad_norm_sq:.1e}")


def test_criterion_4_correct_optimum(pca_setup, merit_run):
    inst, _, _, _ = pca_setup
    result, _ = merit_run
    oracle = pca_reference_optimum(inst)  # dense eigendecomposition of A^T A
    angles = principal_angles(result.x_final, oracle)
    assert np.all(angles < 1e-3), angles
    report(4, f"principal angles to the top-5 eigenspace all < 1e-3 rad "
              f"(largest {angles.max():.2e})")


def test_criterion_5_rate_consistency(pca_setup, merit_run):
    _, obj, params, x0 = pca_setup
    result, _ = merit_run
    k = 500
    recs = result.records
    mean_g_k = np.mean([r.grad_norm_sq for r in recs[: k + 1]])
    mean_g_2k = np.mean([r.grad_norm_sq for r in recs[: 2 * k + 1]])
    mean_n_k = np.mean([r.n_of_x for r in recs[: k + 1]])
    mean_n_2k = np.mean([r.n_of_x for r in recs[: 2 * k + 1]])
    assert mean_g_2k <= 0.75 * mean_g_k
    assert mean_n_2k <= 0.75 * mean_n_k

    k_sgd, batch, eta0 = 1000, 8, 0.4
    bests = {}
    for horizon in (k_sgd, 4 * k_sgd):
        sched = StepSchedule("horizon_scaled", eta0, horizon=horizon)
        res = run_landing_sgd(obj, x0, params, sched, batch, horizon, seed=205, log_every=5)
        bests[horizon] = min(r.grad_norm_sq for r in res.records)
    ratio = bests[4 * k_sgd] / bests[k_sgd]
    assert ratio <= 0.6, bests
    report(5, f"GD running means halve (grad {mean_g_2k / mean_g_k:.2f}x, "
              f"N {mean_n_2k / mean_n_k:.2f}x <= 0.75); SGD best at 4K is "
              f"{ratio:.2f}x best at K (<= 0.6)")


def test_criterion_6_saga_beats_sgd_on_ica():
    t0 = time.perf_counter()
    inst = gen_ica_data(10, 10_000, 21)
    obj = ica_objective(inst)
    params = LandingParams.from_objective(
        obj, rng=np.random.default_rng(22), stochastic=True
    )
    x0 = random_stiefel(10, 10, np.random.default_rng(23))
    batch = 100
    iters = 20 * obj.sample_count // batch  # 20-epoch budget

    def best_lambda_sq(res):
        # near the manifold ||Lambda||^2 = ||grad f||^2 + 4 lam^2 N(X) up to O(eps N)
        return min(r.grad_norm_sq + 4.0 * params.lam**2 * r.n_of_x for r in res.records)

    grid = (0.3, 0.1, 0.03)
    sgd_runs = {
        eta: run_landing_sgd(obj, x0, params, StepSchedule("constant", eta), batch,
                             iters, seed=5, log_every=20)
        for eta in grid
    }
    saga_runs = {
        eta: run_landing_saga(obj, x0, params, StepSchedule("constant", eta), iters,
                              seed=5, log_every=20, batch_size=batch)
        for eta in grid
    }
    sgd_best_eta = min(grid, key=lambda e: best_lambda_sq(sgd_runs[e]))
    saga_best_eta = min(grid, key=lambda e: best_lambda_sq(saga_runs[e]))
    sgd_best = best_lambda_sq(sgd_runs[sgd_best_eta])
    saga_best = best_lambda_sq(saga_runs[saga_best_eta])
    assert saga_best < sgd_best, (saga_best, sgd_best)

    saga_final = saga_runs[saga_best_eta].records[-1].n_of_x
    assert saga_final < 1e-8, saga_final

    amari_saga = amari_distance(inst.mixing.T @ saga_runs[saga_best_eta].x_final)
    amari_sgd = amari_distance(inst.mixing.T @ sgd_runs[sgd_best_eta].x_final)
    assert amari_saga < amari_sgd, (amari_saga, amari_sgd)
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    report(6, f"20-epoch ICA budget: SAGA best ||Lambda||^2 {saga_best:.1e} < "
              f"SGD {sgd_best:.1e}; SAGA final N(X)={saga_final:.1e}; amari "
              f"{amari_saga:.2e} < {amari_sgd:.2e} ({elapsed:.0f}s)")


def test_criterion_7_saga_unbiasedness():
    inst = gen_ica_data(10, 500, 31)
    obj = ica_objective(inst)
    lam = 1.0
    rng = np.random.default_rng(32)
    worst = 0.0
    for _ in range(20):
        x = sample_safe_region(10, 10, 0.5, rng)
        state = SagaState.initialize(obj, sample_safe_region(10, 10, 0.5, rng), "first_pass")
        full = landing_field(obj.grad_full(x), x, lam).total
        acc = np.zeros_like(full)
        for i in range(obj.sample_count):
            g_eff = obj.grad_each(np.array([i]), x)[0] + (state.memory_mean - state.memory[i])
            acc += landing_field(g_eff, x, lam).total
        gap = np.linalg.norm(acc / obj.sample_count - full) / max(np.linalg.norm(full), 1e-300)
        worst = max(worst, gap)
    assert worst <= 1e-12, worst
    report(7, f"enumerated SAGA direction equals the full field at 20 states "
              f"(worst relative gap {worst:.1e})")


def test_criterion_8_penalty_tradeoff():
    rng = np.random.default_rng(41)
    m = rng.standard_normal((20, 5)) / np.sqrt(20.0)
    m_norm = np.linalg.norm(m)

    # (a) closed-form stationarity
    gaps = {}
    for lam_pen in (10.0, 100.0, 1000.0):
        x_star, x_st = penalty_oracle(m, lam_pen)
        grad_norm = np.linalg.norm(m + lam_pen * (x_star @ gram_residual(x_star)))
        assert grad_norm < 1e-10 * m_norm, (lam_pen, grad_norm)
        gaps[lam_pen] = lam_pen * np.linalg.norm(x_star - x_st)

    # (b) the O(1/lambda) law: lambda-scaled gaps agree pairwise within 20%
    vals = list(gaps.values())
    for a in vals:
        for b in vals:
            assert abs(a - b) <= 0.2 * max(a, b), gaps

    # (c) conditioning: iterations to reach the same relative suboptimality
    obj = linear_objective(m)
    params = LandingParams(lam=1.0, epsilon=0.5, mu=20.0, l_smooth=1.0,
                           s_bound=1.0, l_hat=1.0, l_fh=5.0, a_tilde=1.0)
    x0 = random_stiefel(20, 5, np.random.default_rng(42))
    tol_rel = 1e-3
    hit = {}
    for lam_pen in (10.0, 1000.0):
        x_star, _ = penalty_oracle(m, lam_pen)
        g_star = obj.value(x_star) + lam_pen * 0.25 * np.linalg.norm(gram_residual(x_star)) ** 2
        res = run_penalty_sgd(obj, x0, params, lam_pen,
                              StepSchedule("constant", 0.25 / lam_pen), "full",
                              60_000, log_every=1)
        g0 = res.records[0].f_value + lam_pen * res.records[0].n_of_x
        target = g_star + tol_rel * (g0 - g_star)
        hit[lam_pen] = next(
            r.iter for r in res.records
            if r.f_value + lam_pen * r.n_of_x <= target
        )
    assert hit[1000.0] >= 5 * hit[10.0], hit

    # landing reaches the manifold regardless of lambda
    finals = {}
    for lam in (0.1, 1.0, 10.0):
        p_lam = LandingParams(lam=lam, epsilon=0.5, mu=20.0, l_smooth=1.0,
                              s_bound=1.0, l_hat=1.0, l_fh=5.0, a_tilde=1.0)
        res = run_landing_gd(obj, x0, p_lam, StepSchedule("constant", 0.2), 3000,
                             log_every=500)
        finals[lam] = res.records[-1].n_of_x
        assert finals[lam] < 1e-10, (lam, finals[lam])
    report(8, f"oracle stationary; lambda-scaled gaps {sorted(gaps.values())[0]:.3f}.."
              f"{sorted(gaps.values())[-1]:.3f} within 20%; penalty needs "
              f"{hit[1000.0]}/{hit[10.0]} = {hit[1000.0] / hit[10.0]:.0f}x iterations at "
              f"lambda 1000 vs 10; landing N(X) < 1e-10 at every lambda")


def test_criterion_9_baseline_parity(pca_setup):
    _, obj, params, x0 = pca_setup
    sched = StepSchedule("constant", 0.3)
    land = run_landing_gd(obj, x0, params, sched, 2000, log_every=100)
    riem = run_riemannian(obj, x0, params, "qr", sched, "full", 2000, log_every=100)
    f_land = land.records[-1].f_value
    f_riem = riem.records[-1].f_value
    assert abs(f_land - f_riem) <= 1e-6 * abs(f_riem), (f_land, f_riem)
    assert all(r.distance <= 1e-10 for r in riem.records)

    # per-iteration cost at (n, p) = (2000, 500), single-threaded
    n, p = 2000, 500
    rng = np.random.default_rng(51)
    with threadpool_limits(limits=1):
        x = random_stiefel(n, p, rng)
        g = rng.standard_normal((n, p))
        big_params = LandingParams(lam=1.0, epsilon=0.5, mu=10.0, l_smooth=1.0,
                                   s_bound=1.0, l_hat=1.0, l_fh=5.0, a_tilde=1.0)

        def landing_iter():
            step_landing(x, g, big_params, 1e-3)

        def riemannian_iter():
            grad = riemannian_gradient_ext(g, x)
            qr_retraction(x, -1e-3 * grad)

        for fn in (landing_iter, riemannian_iter):
            fn()  # warm up
        t_land = []
        t_riem = []
        for _ in range(8):
            t0 = time.perf_counter()
            landing_iter()
            t_land.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            riemannian_iter()
            t_riem.append(time.perf_counter() - t0)
    med_land = float(np.median(t_land))
    med_riem = float(np.median(t_riem))
    assert med_land <= med_riem, (med_land, med_riem)
    report(9, f"same f floor ({f_land:.6f} vs {f_riem:.6f}); Riemannian drift "
              f"<= 1e-10; landing step {med_land * 1e3:.0f} ms <= QR-retraction "
              f"step {med_riem * 1e3:.0f} ms at (2000, 500) single-threaded")


CONFIG = """
[problem]
kind = pca
n = 20
p = 3
samples = 100
sigma = 0.1
seed = 61

[algorithm]
method = landing_sgd

[schedule]
kind = inv_sqrt
eta0 = 0.2

[run]
batch_size = 5
max_iter = 60
log_every = 5
seed = {seed}
output = out/{name}
"""


def test_criterion_10_determinism(tmp_path):
    cfg_path = tmp_path / "run.ini"
    cfg_path.write_text(CONFIG.format(seed=9, name="solo"))
    cfg = parse_config(cfg_path)
    run_experiment(cfg, base_dir=tmp_path)
    first = (tmp_path / "out" / "solo.csv").read_bytes()
    run_experiment(cfg, base_dir=tmp_path)
    second = (tmp_path / "out" / "solo.csv").read_bytes()
    assert first == second

    for jobs, sub in ((1, "g1"), (4, "g4")):
        gdir = tmp_path / sub
        gdir.mkdir()
        for i in range(3):
            (gdir / f"r{i}.ini").write_text(CONFIG.format(seed=i, name=f"r{i}"))
        index = run_grid(gdir, parallel_jobs=jobs)
        assert index["failed"] == 0
    for i in range(3):
        a = (tmp_path / "g1" / "out" / f"r{i}.csv").read_bytes()
        b = (tmp_path / "g4" / "out" / f"r{i}.csv").read_bytes()
        assert a == b
    report(10, "byte-identical CSV on rerun; 1-job and 4-job grids produced "
               "identical traces")


def test_criterion_11_negative_controls():
    reports_eta, passed_eta = verify("geometry", seed=71, eta_scale=1.5)
    assert not passed_eta
    assert any(r.name == "safeguard_containment" and not r.passed for r in reports_eta)

    reports_mu, passed_mu = verify("merit", seed=72, mu_scale=0.25)
    assert not passed_mu
    assert any(not r.passed for r in reports_mu)
    report(11, "corrupted safeguard (eta x 1.5) and undersized merit weight "
               "(mu/4) both flip their suites to FAIL")
