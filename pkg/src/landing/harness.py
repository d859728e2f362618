"""Declarative run configs, experiment orchestration, and trace/summary output.

Config files are strict INI-style documents (sections of ``key = value``
lines); unknown keys are rejected with their line number. One config describes
one run: a problem instance, an algorithm, a step schedule and logging/output
settings. Runs write a CSV trace with a fixed column schema plus a JSON
summary, and are bit-reproducible: identical config and seed give
byte-identical CSV files, regardless of grid parallelism.

Seeding: the problem seed alone determines the dataset, the initial iterate
and the constant estimation (so changing the algorithm never perturbs the
data); the run seed drives minibatch sampling only.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics, optim, problems
from .errors import ConfigError, LandingError
from .geometry import LandingParams, landing_field
from .optim import RunRecord, RunResult, StepSchedule
from .problems import random_stiefel

__all__ = [
    "RunConfig",
    "parse_config",
    "run_experiment",
    "run_grid",
    "verify",
    "CSV_HEADER",
    "write_trace_csv",
]

logger = logging.getLogger("landing.harness")

CSV_HEADER = "iter,epoch,wall_time_s,f_value,grad_norm_sq,distance,n_of_x,merit,step_used,clamped"

_PROBLEMS = ("pca", "ica", "linear")
_ALGORITHMS = (
    "landing_gd",
    "landing_sgd",
    "landing_saga",
    "riemannian_gd",
    "riemannian_sgd",
    "penalty_sgd",
)
_SCHEDULE_KINDS = ("constant", "inv_sqrt", "horizon_scaled", "epoch_decay")


@dataclass(frozen=True)
class RunConfig:
    """Fully validated description of one experiment run."""

    problem: str
    n: int
    p: int
    samples: int
    sigma: float
    problem_seed: int
    algorithm: str
    lam: float
    epsilon: float
    mu: float | None  # None = derive from the lower bound
    lambda_pen: float
    retraction: str
    schedule_kind: str
    eta0: float | None  # None = method's theory step
    decay_factor: float
    decay_every: float
    horizon: int
    batch_size: int
    max_iter: int | None
    max_epochs: float | None
    log_every: int
    seed: int
    output_path: str
    record_walltime: bool
    init_mode: str

    def echo(self) -> dict:
        d = dict(self.__dict__)
        return d


# ---------------------------------------------------------------------------
# Config file parsing
# ---------------------------------------------------------------------------

_SCHEMA = {
    "problem": {"kind", "n", "p", "samples", "sigma", "seed"},
    "algorithm": {"method", "lambda", "epsilon", "mu", "lambda_pen", "retraction"},
    "schedule": {"kind", "eta0", "decay_factor", "decay_every", "horizon"},
    "run": {
        "batch_size",
        "max_iter",
        "max_epochs",
        "log_every",
        "seed",
        "output",
        "record_walltime",
        "init_mode",
    },
}


def _parse_sections(path: Path) -> dict[str, dict[str, str]]:
    sections: dict[str, dict[str, str]] = {}
    current: str | None = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in _SCHEMA:
                raise ConfigError(
                    f"{path}:{lineno}: unknown section [{current}] "
                    f"(expected {sorted(_SCHEMA)})"
                )
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside of any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key not in _SCHEMA[current]:
            raise ConfigError(
                f"{path}:{lineno}: unknown key {key!r} in [{current}] "
                f"(expected one of {sorted(_SCHEMA[current])})"
            )
        if key in sections[current]:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = value
    return sections


def _get(sections, section, key, conv, default=None, required=False, path=""):
    raw = sections.get(section, {}).get(key)
    if raw is None:
        if required:
            raise ConfigError(f"{path}: missing required key {key!r} in [{section}]")
        return default
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid value for [{section}] {key}: {raw!r} ({exc})") from exc


def _to_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def parse_config(path) -> RunConfig:
    """Parse and validate a run config file; defaults fill unspecified values
    (lambda = 1, epsilon = 1/2, mu and eta0 derived from theory)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    sections = _parse_sections(path)
    sp = str(path)

    problem = _get(sections, "problem", "kind", str, required=True, path=sp).lower()
    if problem not in _PROBLEMS:
        raise ConfigError(f"{sp}: unknown problem {problem!r}, expected one of {_PROBLEMS}")
    n = _get(sections, "problem", "n", int, required=True, path=sp)
    if problem == "ica":
        p = _get(sections, "problem", "p", int, default=n, path=sp)
        if p != n:
            raise ConfigError(f"{sp}: ica requires p = n (square unmixing), got p={p}, n={n}")
    else:
        p = _get(sections, "problem", "p", int, required=True, path=sp)
    samples = _get(
        sections, "problem", "samples", int, default=1, required=problem != "linear", path=sp
    )
    sigma = _get(sections, "problem", "sigma", float, default=0.1, path=sp)
    problem_seed = _get(sections, "problem", "seed", int, default=0, path=sp)
    if n < 1 or p < 1 or n < p:
        raise ConfigError(f"{sp}: need n >= p >= 1, got n={n}, p={p}")
    if samples < 1:
        raise ConfigError(f"{sp}: samples must be >= 1")

    algorithm = _get(sections, "algorithm", "method", str, required=True, path=sp).lower()
    if algorithm not in _ALGORITHMS:
        raise ConfigError(f"{sp}: unknown method {algorithm!r}, expected one of {_ALGORITHMS}")
    lam = _get(sections, "algorithm", "lambda", float, default=1.0, path=sp)
    epsilon = _get(sections, "algorithm", "epsilon", float, default=0.5, path=sp)
    if not 0.0 < epsilon < 0.75:
        raise ConfigError(
            f"{sp}: epsilon must lie in (0, 0.75) — the merit bound requires epsilon < 3/4, "
            f"got {epsilon}"
        )
    if lam <= 0:
        raise ConfigError(f"{sp}: lambda must be > 0, got {lam}")
    mu_raw = _get(sections, "algorithm", "mu", str, default="auto", path=sp)
    if mu_raw.strip().lower() == "auto":
        mu = None
    else:
        mu = float(mu_raw)
        if mu <= 0:
            raise ConfigError(f"{sp}: mu must be > 0 or 'auto', got {mu_raw}")
    lambda_pen = _get(sections, "algorithm", "lambda_pen", float, default=1.0, path=sp)
    retraction = _get(sections, "algorithm", "retraction", str, default="qr", path=sp).lower()
    if retraction not in ("qr", "projection"):
        raise ConfigError(f"{sp}: retraction must be 'qr' or 'projection', got {retraction!r}")

    schedule_kind = _get(sections, "schedule", "kind", str, default="constant", path=sp).lower()
    if schedule_kind not in _SCHEDULE_KINDS:
        raise ConfigError(
            f"{sp}: unknown schedule kind {schedule_kind!r}, expected one of {_SCHEDULE_KINDS}"
        )
    eta0_raw = _get(sections, "schedule", "eta0", str, default="auto", path=sp)
    if eta0_raw.strip().lower() == "auto":
        eta0 = None
    else:
        eta0 = float(eta0_raw)
        if eta0 <= 0:
            raise ConfigError(f"{sp}: eta0 must be > 0 or 'auto', got {eta0_raw}")
    decay_factor = _get(sections, "schedule", "decay_factor", float, default=10.0, path=sp)
    decay_every = _get(sections, "schedule", "decay_every", float, default=30.0, path=sp)
    horizon = _get(sections, "schedule", "horizon", int, default=0, path=sp)

    batch_size = _get(sections, "run", "batch_size", int, default=1, path=sp)
    max_iter = _get(sections, "run", "max_iter", int, path=sp)
    max_epochs = _get(sections, "run", "max_epochs", float, path=sp)
    if (max_iter is None) == (max_epochs is None):
        raise ConfigError(f"{sp}: exactly one of max_iter / max_epochs must be set in [run]")
    if max_iter is not None and max_iter < 0:
        raise ConfigError(f"{sp}: max_iter must be >= 0")
    if max_epochs is not None and max_epochs <= 0:
        raise ConfigError(f"{sp}: max_epochs must be > 0")
    log_every = _get(sections, "run", "log_every", int, default=1, path=sp)
    if log_every < 1:
        raise ConfigError(f"{sp}: log_every must be >= 1")
    seed = _get(sections, "run", "seed", int, default=0, path=sp)
    output = _get(sections, "run", "output", str, required=True, path=sp)
    record_walltime = _get(sections, "run", "record_walltime", _to_bool, default=False, path=sp)
    init_mode = _get(sections, "run", "init_mode", str, default="first_pass", path=sp).lower()
    if init_mode not in ("first_pass", "zeros"):
        raise ConfigError(f"{sp}: init_mode must be 'first_pass' or 'zeros'")
    if batch_size < 1:
        raise ConfigError(f"{sp}: batch_size must be >= 1")

    return RunConfig(
        problem=problem,
        n=n,
        p=p,
        samples=samples,
        sigma=sigma,
        problem_seed=problem_seed,
        algorithm=algorithm,
        lam=lam,
        epsilon=epsilon,
        mu=mu,
        lambda_pen=lambda_pen,
        retraction=retraction,
        schedule_kind=schedule_kind,
        eta0=eta0,
        decay_factor=decay_factor,
        decay_every=decay_every,
        horizon=horizon,
        batch_size=batch_size,
        max_iter=max_iter,
        max_epochs=max_epochs,
        log_every=log_every,
        seed=seed,
        output_path=output,
        record_walltime=record_walltime,
        init_mode=init_mode,
    )


# ---------------------------------------------------------------------------
# Experiment execution
# ---------------------------------------------------------------------------


def _build_problem(cfg: RunConfig):
    if cfg.problem == "pca":
        inst = problems.gen_pca_data(cfg.n, cfg.p, cfg.samples, cfg.sigma, cfg.problem_seed)
        return problems.pca_objective(inst), inst
    if cfg.problem == "ica":
        inst = problems.gen_ica_data(cfg.n, cfg.samples, cfg.problem_seed)
        return problems.ica_objective(inst), inst
    rng = np.random.default_rng(np.random.SeedSequence(cfg.problem_seed, spawn_key=(7,)))
    m = rng.standard_normal((cfg.n, cfg.p))
    return problems.linear_objective(m), None


def _build_params(cfg: RunConfig, obj) -> LandingParams:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.problem_seed, spawn_key=(2,)))
    stochastic = cfg.algorithm in ("landing_sgd", "landing_saga", "riemannian_sgd", "penalty_sgd")
    return LandingParams.from_objective(
        obj, lam=cfg.lam, epsilon=cfg.epsilon, mu=cfg.mu, rng=rng, stochastic=stochastic
    )


def _initial_point(cfg: RunConfig, obj) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(cfg.problem_seed, spawn_key=(1,)))
    n, p = obj.dims
    return random_stiefel(n, p, rng)


def _resolve_iters(cfg: RunConfig, obj) -> tuple[int, int]:
    batch = cfg.batch_size
    if cfg.algorithm in ("landing_gd", "riemannian_gd"):
        batch = obj.sample_count
    if cfg.max_iter is not None:
        return cfg.max_iter, batch
    iters = int(round(cfg.max_epochs * obj.sample_count / batch))
    return max(iters, 1), batch


def _resolve_eta0(cfg: RunConfig, params: LandingParams, obj) -> float:
    if cfg.eta0 is not None:
        return cfg.eta0
    if cfg.algorithm == "landing_gd":
        return optim.gd_theory_step(params)
    if cfg.algorithm == "landing_sgd":
        return optim.sgd_theory_step(params)
    if cfg.algorithm == "landing_saga":
        return optim.saga_theory_step(params, obj.sample_count)
    raise ConfigError(
        f"eta0 = auto is only defined for landing methods, not {cfg.algorithm!r}"
    )


def _build_schedule(cfg: RunConfig, eta0: float) -> StepSchedule:
    return StepSchedule(
        kind=cfg.schedule_kind,
        eta0=eta0,
        decay_factor=cfg.decay_factor,
        decay_every=cfg.decay_every,
        horizon=cfg.horizon,
    )


def _execute(cfg: RunConfig, obj, params: LandingParams, x0: np.ndarray) -> RunResult:
    max_iter, batch = _resolve_iters(cfg, obj)
    sched = _build_schedule(cfg, _resolve_eta0(cfg, params, obj))
    if cfg.algorithm == "landing_gd":
        return optim.run_landing_gd(obj, x0, params, sched, max_iter, cfg.log_every)
    if cfg.algorithm == "landing_sgd":
        return optim.run_landing_sgd(
            obj, x0, params, sched, batch, max_iter, cfg.seed, cfg.log_every
        )
    if cfg.algorithm == "landing_saga":
        return optim.run_landing_saga(
            obj,
            x0,
            params,
            sched,
            max_iter,
            cfg.seed,
            cfg.log_every,
            init_mode=cfg.init_mode,
            batch_size=batch,
        )
    if cfg.algorithm in ("riemannian_gd", "riemannian_sgd"):
        batch_arg = "full" if cfg.algorithm == "riemannian_gd" else batch
        return optim.run_riemannian(
            obj, x0, params, cfg.retraction, sched, batch_arg, max_iter, cfg.seed, cfg.log_every
        )
    return optim.run_penalty_sgd(
        obj, x0, params, cfg.lambda_pen, sched, batch, max_iter, cfg.seed, cfg.log_every
    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trace_csv(path, records: list[RunRecord], record_walltime: bool) -> None:
    """Write the trace with the fixed column schema and 17-significant-digit reals.

    Wall time is a measured quantity and breaks byte-reproducibility, so it is
    zeroed unless explicitly requested.
    """
    lines = [CSV_HEADER]
    for r in records:
        wt = r.wall_time_s if record_walltime else 0.0
        lines.append(
            ",".join(
                (
                    str(r.iter),
                    _fmt(r.epoch),
                    _fmt(wt),
                    _fmt(r.f_value),
                    _fmt(r.grad_norm_sq),
                    _fmt(r.distance),
                    _fmt(r.n_of_x),
                    _fmt(r.merit),
                    _fmt(r.step_used),
                    "1" if r.clamped else "0",
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _variance_estimate(obj, x: np.ndarray, params: LandingParams, cap: int = 1024) -> float:
    """Empirical B: mean squared deviation of per-sample landing fields from the mean field.

    Uses a deterministic evenly-strided index subset when N exceeds the cap.
    """
    count = obj.sample_count
    if count <= 1:
        return 0.0
    if count <= cap:
        idx = np.arange(count)
    else:
        idx = np.unique(np.linspace(0, count - 1, cap).astype(np.int64))
    full = landing_field(obj.grad_full(x), x, params.lam).total
    total = 0.0
    chunk = 256
    for lo in range(0, idx.size, chunk):
        sel = idx[lo : lo + chunk]
        grads = obj.grad_each(sel, x)
        for g in grads:
            diff = landing_field(g, x, params.lam).total - full
            total += float(np.sum(diff * diff))
    return total / idx.size


def run_experiment(cfg: RunConfig, base_dir=None) -> dict:
    """Run one configured experiment; writes ``<output>.csv`` and ``<output>.json``.

    Returns the summary dictionary. Module errors abort the run and produce a
    summary with ``status = "failed"`` instead of propagating.
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    out = Path(cfg.output_path)
    if not out.is_absolute():
        out = base / out
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    json_path = out.with_suffix(".json")

    summary: dict = {"status": "ok", "config": cfg.echo()}
    t0 = time.perf_counter()
    try:
        obj, inst = _build_problem(cfg)
        params = _build_params(cfg, obj)
        x0 = _initial_point(cfg, obj)
        result = _execute(cfg, obj, params, x0)
        write_trace_csv(csv_path, result.records, cfg.record_walltime)
        last = result.records[-1]
        summary["final"] = {
            "iter": last.iter,
            "epoch": last.epoch,
            "f_value": last.f_value,
            "grad_norm_sq": last.grad_norm_sq,
            "distance": last.distance,
            "n_of_x": last.n_of_x,
            "merit": last.merit,
        }
        summary["clamp_rate"] = result.clamp_rate
        summary["variance_estimate_b"] = _variance_estimate(obj, result.x_final, params)
        summary["params"] = {
            "lam": params.lam,
            "epsilon": params.epsilon,
            "mu": params.mu,
            "nu": params.nu,
            "rho": params.rho,
            "l_smooth": params.l_smooth,
            "s_bound": params.s_bound,
            "l_hat": params.l_hat,
            "l_g": params.l_g,
            "a_tilde": params.a_tilde,
        }
        if cfg.problem == "ica" and inst is not None:
            summary["amari_distance"] = problems.amari_distance(inst.mixing.T @ result.x_final)
        summary["trace_csv"] = str(csv_path)
        summary["summary_json"] = str(json_path)
    except (LandingError, np.linalg.LinAlgError) as exc:
        logger.error("run failed: %s", exc)
        summary["status"] = "failed"
        summary["error"] = f"{type(exc).__name__}: {exc}"
    summary["elapsed_s"] = time.perf_counter() - t0
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def _grid_worker(args: tuple[str, str]) -> dict:
    config_path, base_dir = args
    try:
        cfg = parse_config(config_path)
        summary = run_experiment(cfg, base_dir=base_dir)
    except LandingError as exc:
        return {"config": str(config_path), "status": "failed", "error": str(exc)}
    return {
        "config": str(config_path),
        "status": summary["status"],
        "error": summary.get("error"),
        "csv": summary.get("trace_csv"),
        "summary_json": summary.get("summary_json"),
    }


def run_grid(config_dir, parallel_jobs: int = 1, index_path=None) -> dict:
    """Run every ``*.ini``/``*.cfg`` config in a directory, up to ``parallel_jobs`` at once.

    Per-run determinism is unaffected by scheduling (runs share nothing but the
    filesystem, and distinct output paths are enforced up front). Individual
    failures are isolated; the index lists every run's status. The index dict
    gets ``"failed"`` > 0 iff any run failed.
    """
    config_dir = Path(config_dir)
    if not config_dir.is_dir():
        raise ConfigError(f"not a directory: {config_dir}")
    if parallel_jobs < 1:
        raise ConfigError("parallel_jobs must be >= 1")
    paths = sorted(p for p in config_dir.iterdir() if p.suffix in (".ini", ".cfg"))

    outputs: dict[str, str] = {}
    for p in paths:
        try:
            cfg = parse_config(p)
        except ConfigError:
            continue  # recorded as failed by the worker
        if cfg.output_path in outputs:
            raise ConfigError(
                f"output collision: {p} and {outputs[cfg.output_path]} both write "
                f"{cfg.output_path!r}"
            )
        outputs[cfg.output_path] = str(p)

    base_dir = str(config_dir)
    args = [(str(p), base_dir) for p in paths]
    if parallel_jobs == 1 or len(args) <= 1:
        rows = [_grid_worker(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=parallel_jobs) as pool:
            rows = list(pool.map(_grid_worker, args))
    index = {
        "runs": rows,
        "total": len(rows),
        "failed": sum(1 for r in rows if r["status"] != "ok"),
    }
    index_file = Path(index_path) if index_path else config_dir / "grid_index.json"
    index_file.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return index


def verify(
    suite: str, seed: int, eta_scale: float = 1.0, mu_scale: float = 1.0
) -> tuple[list[diagnostics.PropertyReport], bool]:
    """Run a named diagnostics suite; returns (reports, all_passed)."""
    reports = diagnostics.run_suite(suite, seed, eta_scale=eta_scale, mu_scale=mu_scale)
    return reports, all(r.passed for r in reports)
