"""Monte Carlo driver: repeated Poisson/PPS sampling, all estimators, %RB / %RRMSE / coverage."""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import inference, propensity, sampling
from .datamodel import Population, with_overlap
from .errors import OewtError, ValidationError
from .popgen import PopulationSpec, generate_population

log = logging.getLogger(__name__)

ESTIMATORS = ("naive", "OE", "CLW", "WVL", "KW", "VD")
MAX_FAILURE_RATE = 0.01


def percent_rb(estimates, truth: float) -> float:
    est = np.asarray(estimates, dtype=np.float64)
    if truth == 0:
        raise ValidationError("relative bias is undefined for a zero truth")
    if est.size < 1:
        raise ValidationError("need at least one estimate")
    return float(np.mean((est - truth) / truth) * 100.0)


def percent_rrmse(estimates, truth: float) -> float:
    est = np.asarray(estimates, dtype=np.float64)
    if truth == 0:
        raise ValidationError("relative RMSE is undefined for a zero truth")
    if est.size < 1:
        raise ValidationError("need at least one estimate")
    return float(np.sqrt(np.mean((est - truth) ** 2)) / truth * 100.0)


def coverage_rate(intervals, truth: float) -> float:
    iv = np.asarray(intervals, dtype=np.float64).reshape(-1, 2)
    if iv.shape[0] < 1:
        raise ValidationError("need at least one interval")
    return float(np.mean((iv[:, 0] <= truth) & (truth <= iv[:, 1])))


def _canonical_estimator(name: str) -> str:
    return "naive" if name.lower() == "naive" else propensity.normalize_method(name)


@dataclass(frozen=True)
class ScenarioConfig:
    rho: float = 0.3
    target_NB: int = 50_000
    n_A: int = 5_000
    replicates: int = 2_000
    seed: int = 20240521
    estimators: tuple = ESTIMATORS
    N: int = 200_000
    ratio: float = 10.0
    slopes: tuple = sampling.PAPER_SLOPES
    variance: str = "standard"
    level: float = 0.95
    debug: bool = False

    def __post_init__(self):
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if not 1 <= self.target_NB < self.N:
            raise ValidationError("target_NB must lie in [1, N-1]")
        if not 1 <= self.n_A <= self.N:
            raise ValidationError("n_A must lie in [1, N]")
        if self.variance not in ("standard", "alt", "none"):
            raise ValidationError("variance must be standard, alt or none")
        est = tuple(dict.fromkeys(_canonical_estimator(e) for e in self.estimators))
        object.__setattr__(self, "estimators", est)

    @property
    def key(self) -> tuple:
        """Scenario identifier mixed into every replicate seed."""
        return (int(round(self.rho * 1_000_000)), int(self.target_NB), int(self.n_A), int(self.N))


def replicate_seed(master_seed: int, scenario_key: tuple, r: int) -> np.random.SeedSequence:
    """Seed for replicate r: SeedSequence hashing of (master seed; scenario key, r)."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(*scenario_key, int(r)))


@dataclass
class ReplicateResult:
    r: int
    N_B: int = 0
    estimates: dict = field(default_factory=dict)
    oe_variance: Optional[float] = None
    oe_ci: Optional[tuple] = None
    failure: Optional[str] = None
    balance_violations: int = 0


@dataclass
class EstimatorSummary:
    name: str
    pct_rb: float
    pct_rrmse: float
    mc_se_rb: float
    coverage: Optional[float] = None


@dataclass
class SimulationReport:
    config: ScenarioConfig
    truth: float
    summaries: dict
    estimates: np.ndarray
    oe_variances: Optional[np.ndarray]
    mean_NB: float
    n_used: int
    failures: int
    balance_violations: int
    runtime: float
    failure_messages: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.failures <= MAX_FAILURE_RATE * self.config.replicates and self.n_used > 0


class _Context:
    """Per-scenario quantities fixed across replicates."""

    def __init__(self, population: Population, config: ScenarioConfig):
        self.config = config
        if population.pi_b_true is None:
            population, _ = sampling.with_true_propensities(
                population, sampling.BigDesignSpec(config.target_NB, tuple(config.slopes))
            )
        self.population = population
        self.pps = sampling.PPSDesignSpec(n_A=config.n_A, size_column=3, ratio=config.ratio)
        z = sampling.pps_size_measure(population, self.pps)
        self.design_weights = 1.0 / sampling.pps_inclusion_probabilities(z, config.n_A)
        self.var_options = (
            None if config.variance == "none" else inference.VarianceOptions(config.variance, config.level)
        )


def run_replicate(ctx: _Context, r: int) -> ReplicateResult:
    cfg = ctx.config
    pop = ctx.population
    out = ReplicateResult(r=r)
    rng = np.random.default_rng(replicate_seed(cfg.seed, cfg.key, r))
    try:
        B = sampling.draw_poisson(pop, pop.pi_b_true, rng, design_weights=ctx.design_weights)
        A = with_overlap(sampling.draw_pps_systematic(pop, ctx.pps, rng), B)
        out.N_B = B.n
        for name in cfg.estimators:
            if name == "naive":
                out.estimates[name] = inference.naive_mean(B).mu_hat
                continue
            f = propensity.fit(name, A, B)
            if not f.converged:
                raise OewtError(f"{name} fit did not converge (score norm {f.score_norm:.3g})")
            if cfg.debug and not propensity.check_balance(f, A, B):
                out.balance_violations += 1
                log.warning("replicate %d: %s balance residual %.3g", r, name, propensity.balance_residual(f, A, B))
            est, var = inference.estimate_mean(
                f, A, B, pop.N, ctx.var_options if name == "OE" else None
            )
            out.estimates[name] = est.mu_hat
            if var is not None:
                out.oe_variance = var.total
                out.oe_ci = (est.ci_lower, est.ci_upper)
    except (OewtError, ArithmeticError) as exc:
        out.failure = f"{type(exc).__name__}: {exc}"
        log.info("replicate %d failed: %s", r, out.failure)
    return out


_WORKER_CTX: Optional[_Context] = None


def _init_worker(population, config):
    global _WORKER_CTX
    _WORKER_CTX = _Context(population, config)


def _run_chunk(rs):
    return [run_replicate(_WORKER_CTX, r) for r in rs]


def _replicates(population, config, workers, replicate_ids):
    if workers <= 1:
        ctx = _Context(population, config)
        return [run_replicate(ctx, r) for r in replicate_ids]
    chunks = [replicate_ids[i : i + 25] for i in range(0, len(replicate_ids), 25)]
    with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(population, config)) as ex:
        return list(itertools.chain.from_iterable(ex.map(_run_chunk, chunks)))


def summarize(config: ScenarioConfig, truth: float, results: Sequence[ReplicateResult], runtime=0.0) -> SimulationReport:
    results = sorted(results, key=lambda res: res.r)
    ok = [res for res in results if res.failure is None]
    names = config.estimators
    est = np.array([[res.estimates[n] for n in names] for res in ok]).reshape(len(ok), len(names))
    summaries = {}
    variances = None
    if ok:
        for j, name in enumerate(names):
            col = est[:, j]
            se = float(np.std(col, ddof=1) / np.sqrt(col.size) / truth * 100.0) if col.size > 1 else float("nan")
            summaries[name] = EstimatorSummary(name, percent_rb(col, truth), percent_rrmse(col, truth), se)
        if "OE" in names and config.variance != "none":
            variances = np.array([res.oe_variance for res in ok])
            summaries["OE"].coverage = coverage_rate([res.oe_ci for res in ok], truth)
    failures = len(results) - len(ok)
    return SimulationReport(
        config=config,
        truth=truth,
        summaries=summaries,
        estimates=est,
        oe_variances=variances,
        mean_NB=float(np.mean([res.N_B for res in ok])) if ok else float("nan"),
        n_used=len(ok),
        failures=failures,
        balance_violations=sum(res.balance_violations for res in results),
        runtime=runtime,
        failure_messages=[res.failure for res in results if res.failure][:20],
    )


def run_scenario(population: Population, config: ScenarioConfig, workers: int = 1) -> SimulationReport:
    """Run all replicates of one scenario on an already generated population."""
    if workers < 1:
        raise ValidationError("workers must be at least 1")
    t0 = time.perf_counter()
    results = _replicates(population, config, workers, list(range(config.replicates)))
    report = summarize(config, population.mean_y, results, time.perf_counter() - t0)
    if not report.valid:
        log.warning(
            "scenario rho=%s N_B=%s invalid: %d of %d replicates failed",
            config.rho, config.target_NB, report.failures, config.replicates,
        )
    return report


def population_for(config: ScenarioConfig) -> Population:
    """The study population; x and epsilon depend only on (N, seed), sigma on rho."""
    return generate_population(PopulationSpec(N=config.N, rho=config.rho, seed=config.seed))


# --- study configuration (key = value) -----------------------------------------

_LIST_KEYS = {"rho", "target_NB", "estimators"}
_CONVERT = {
    "N": int,
    "n_A": int,
    "replicates": int,
    "seed": int,
    "rho": float,
    "target_NB": int,
    "estimators": str,
    "ratio": float,
    "variance": str,
    "level": float,
    "debug": lambda v: v.lower() in ("1", "true", "yes", "on"),
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]") and "=" not in line):
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONVERT:
            raise ValidationError(f"config line {lineno}: unknown key {key!r}")
        items = [v.strip().strip("'\"").replace("_", "") if key != "estimators" else v.strip().strip("'\"")
                 for v in value.strip("[]").split(",") if v.strip()]
        try:
            conv = [_CONVERT[key](v) for v in items]
        except ValueError as exc:
            raise ValidationError(f"config line {lineno}: bad value for {key}") from exc
        if key in _LIST_KEYS:
            out[key] = tuple(conv)
        elif len(conv) != 1:
            raise ValidationError(f"config line {lineno}: {key} takes a single value")
        else:
            out[key] = conv[0]
    return out


def scenarios_from_config(values: dict) -> list[ScenarioConfig]:
    """Expand the rho x target_NB grid into scenario configs."""
    base = {k: v for k, v in values.items() if k not in ("rho", "target_NB")}
    rhos = values.get("rho", (0.3, 0.7))
    targets = values.get("target_NB", (2_000, 50_000, 140_000))
    return [ScenarioConfig(rho=rho, target_NB=nb, **base) for rho in rhos for nb in targets]


def load_config(path) -> list[ScenarioConfig]:
    return scenarios_from_config(parse_config_text(Path(path).read_text(encoding="utf-8")))


def run_study(configs: Sequence[ScenarioConfig], workers: int = 1) -> list[SimulationReport]:
    """Run every scenario, generating each distinct population once."""
    reports = []
    populations: dict = {}
    for cfg in configs:
        pkey = (cfg.N, cfg.seed, cfg.rho)
        if pkey not in populations:
            populations[pkey] = population_for(cfg)
        log.info("scenario rho=%s N_B=%s R=%s", cfg.rho, cfg.target_NB, cfg.replicates)
        reports.append(run_scenario(populations[pkey], cfg, workers))
    return reports


# --- output ----------------------------------------------------------------------

CSV_FIELDS = [
    "rho", "target_NB", "n_A", "N", "replicates", "estimator", "pct_rb", "pct_rrmse",
    "mc_se_rb", "coverage", "mean_NB", "n_used", "failures", "valid", "seed",
]


def report_rows(reports: Sequence[SimulationReport]) -> list[dict]:
    rows = []
    for rep in reports:
        c = rep.config
        for name in c.estimators:
            s = rep.summaries.get(name)
            rows.append({
                "rho": c.rho, "target_NB": c.target_NB, "n_A": c.n_A, "N": c.N,
                "replicates": c.replicates, "estimator": name,
                "pct_rb": "" if s is None else f"{s.pct_rb:.6f}",
                "pct_rrmse": "" if s is None else f"{s.pct_rrmse:.6f}",
                "mc_se_rb": "" if s is None else f"{s.mc_se_rb:.6f}",
                "coverage": "" if s is None or s.coverage is None else f"{s.coverage:.6f}",
                "mean_NB": f"{rep.mean_NB:.3f}", "n_used": rep.n_used, "failures": rep.failures,
                "valid": int(rep.valid), "seed": c.seed,
            })
    return rows


def write_report_csv(reports: Sequence[SimulationReport], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(report_rows(reports))


def format_table(reports: Sequence[SimulationReport]) -> str:
    """Human-readable layout: estimators by rows, N_B by column pairs, one block per rho."""
    buf = io.StringIO()
    by_rho: dict = {}
    for rep in reports:
        by_rho.setdefault(rep.config.rho, []).append(rep)
    for rho, reps in by_rho.items():
        reps = sorted(reps, key=lambda r: r.config.target_NB)
        head = "".join(f"{'N_B=' + format(r.config.target_NB, ','):>18s}" for r in reps)
        buf.write(f"rho(y, x'beta) = {rho}\n{'':8s}{head}\n")
        buf.write(f"{'':8s}" + "".join(f"{'%RB':>9s}{'%RRMSE':>9s}" for _ in reps) + "\n")
        names = list(dict.fromkeys(n for r in reps for n in r.config.estimators))
        for name in names:
            cells = []
            for r in reps:
                s = r.summaries.get(name)
                cells.append(f"{'-':>9s}{'-':>9s}" if s is None else f"{s.pct_rb:9.2f}{s.pct_rrmse:9.2f}")
            buf.write(f"{name:8s}" + "".join(cells) + "\n")
        cov = [r.summaries.get("OE") for r in reps]
        if any(s is not None and s.coverage is not None for s in cov):
            buf.write(f"{'OE cov':8s}" + "".join(
                f"{'':9s}{'-' if s is None or s.coverage is None else format(s.coverage, '.3f'):>9s}" for s in cov
            ) + "\n")
        buf.write("\n")
    return buf.getvalue()
