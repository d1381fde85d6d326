"""Experiment drivers: seeded instance generation, convergence-rate studies on
one shared instance, and phase-transition sweeps over the oversampling factor.

Seeding protocol: an instance seed feeds one generator that draws the ground
truth first and the sampling mask second. Phase cells derive their seed from
(base_seed, rho_index, trial) through a seed-sequence mix, so any single cell
can be regenerated in isolation with `gen --seed <cell seed>`.
"""

import concurrent.futures
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .measurements import (
    ProblemInstance,
    degrees_of_freedom,
    sample_completion_operator,
    sample_ground_truth,
)
from .solver import SolverConfig, Variant, solve

__all__ = [
    "ExperimentConfig",
    "PhaseCellResult",
    "measurement_count",
    "cell_seed",
    "make_instance",
    "adversarial_init",
    "run_convergence",
    "run_phase",
    "success_rates",
]


def measurement_count(d1: int, d2: int, r: int, rho: float) -> int:
    """m = floor(rho * r * (d1 + d2 - r))."""
    if rho <= 0:
        raise ParameterError("rho must be positive")
    return int(math.floor(rho * degrees_of_freedom(d1, d2, r)))


def cell_seed(base_seed: int, rho_index: int, trial: int) -> int:
    """Mix (base_seed, rho_index, trial) into one 64-bit instance seed."""
    ss = np.random.SeedSequence([base_seed, rho_index, trial])
    return int(ss.generate_state(1, np.uint64)[0])


def make_instance(d1, d2, r, m, seed) -> ProblemInstance:
    """Seeded completion instance: rank-r ground truth, then an m-cell mask
    with at least r samples per row and column, then y."""
    rng = np.random.default_rng(seed)
    X0 = sample_ground_truth(d1, d2, r, rng)
    op = sample_completion_operator(d1, d2, r, m, rng)
    return ProblemInstance(
        d1=d1, d2=d2, rank=r, operator=op, y=op.apply(X0),
        ground_truth=X0, seed=int(seed),
    )


def adversarial_init(instance: ProblemInstance, rng) -> np.ndarray:
    """A starting iterate whose singular spaces are orthogonal to the ground
    truth's on both sides, scaled to the truth's Frobenius norm."""
    X0 = instance.ground_truth
    if X0 is None or instance.rank is None:
        raise ParameterError("adversarial start needs ground truth and rank")
    r = instance.rank
    U, s, Vt = np.linalg.svd(X0, full_matrices=True)
    k = min(instance.d1, instance.d2) - r
    if k < 1:
        raise ParameterError("ground truth is full rank; no orthogonal complement")
    weights = np.abs(rng.standard_normal(k)) + 0.1
    X = (U[:, r:r + k] * weights) @ Vt[r:r + k, :]
    return X * (np.linalg.norm(X0) / np.linalg.norm(X))


@dataclass(frozen=True)
class ExperimentConfig:
    """Shared settings of the convergence and phase drivers.

    kind "convergence" uses the single rho; kind "phase" sweeps rho_values
    with `trials` instances per value. Solver overrides apply to every run.
    """

    kind: str
    d1: int
    d2: int
    r: int
    p_values: tuple = (0.5,)
    variants: tuple = (Variant.HM,)
    rho: float | None = None
    rho_values: tuple = ()
    trials: int = 1
    base_seed: int = 0
    tol_rel_change: float = 1e-10
    max_iters: int = 3000
    success_tol: float = 1e-3
    outdir: str = "."
    workers: int = 1

    def __post_init__(self):
        if self.kind not in ("convergence", "phase"):
            raise ParameterError(f"unknown experiment kind {self.kind!r}")
        if min(self.d1, self.d2) < 2 or not 1 <= self.r < min(self.d1, self.d2):
            raise ParameterError("need 1 <= r < min(d1, d2)")
        if not self.p_values:
            raise ParameterError("p_values must be non-empty")
        for p in self.p_values:
            if not 0.0 < p <= 1.0:
                raise ParameterError(f"p must lie in (0, 1], got {p}")
        if not self.variants:
            raise ParameterError("variants must be non-empty")
        object.__setattr__(
            self, "variants", tuple(Variant.parse(v) for v in self.variants)
        )
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))
        if self.kind == "convergence":
            if self.rho is None:
                raise ParameterError("convergence needs a rho value")
            self._check_rho(self.rho)
        else:
            if not self.rho_values:
                raise ParameterError("phase needs a non-empty rho_values list")
            for rho in self.rho_values:
                self._check_rho(rho)
            object.__setattr__(
                self, "rho_values", tuple(float(rho) for rho in self.rho_values)
            )
        if self.trials < 1:
            raise ParameterError("trials must be at least 1")
        if self.base_seed < 0:
            raise ParameterError("base_seed must be non-negative")
        if self.workers < 1:
            raise ParameterError("workers must be at least 1")
        if self.max_iters < 1 or self.tol_rel_change <= 0 or self.success_tol <= 0:
            raise ParameterError("solver overrides out of range")

    def _check_rho(self, rho):
        m = measurement_count(self.d1, self.d2, self.r, rho)
        if m < self.r * max(self.d1, self.d2):
            raise ParameterError(
                f"rho = {rho} gives m = {m}, too few for {self.r} samples "
                "per row and column"
            )
        if m > self.d1 * self.d2:
            raise ParameterError(f"rho = {rho} gives m = {m} > d1*d2")

    def solver_config(self, variant, p) -> SolverConfig:
        return SolverConfig(
            p=p, rank_estimate=self.r, variant=variant,
            tol_rel_change=self.tol_rel_change, max_iters=self.max_iters,
            success_tol=self.success_tol,
        )


@dataclass(frozen=True)
class PhaseCellResult:
    rho: float
    m: int
    variant: Variant
    p: float
    trial: int
    seed: int
    iterations: int
    rel_error: float
    success: bool
    status: str
    wall_time: float = field(compare=False, default=0.0)


def run_convergence(config: ExperimentConfig):
    """Solve every variant x p combination on one shared seeded instance.

    Returns (instance, results) where results maps (variant, p) to the solve
    trace. Solver failures are recorded in the trace status, never raised.
    """
    if config.kind != "convergence":
        raise ParameterError("config.kind must be 'convergence'")
    m = measurement_count(config.d1, config.d2, config.r, config.rho)
    instance = make_instance(config.d1, config.d2, config.r, m, config.base_seed)
    results = {}
    for variant in config.variants:
        for p in config.p_values:
            _, trace = solve(instance, config.solver_config(variant, p))
            results[(variant, p)] = trace
    return instance, results


def _run_phase_cell(config, rho_index, trial, keep_traces):
    rho = config.rho_values[rho_index]
    m = measurement_count(config.d1, config.d2, config.r, rho)
    seed = cell_seed(config.base_seed, rho_index, trial)
    instance = make_instance(config.d1, config.d2, config.r, m, seed)
    out, traces = [], []
    for variant in config.variants:
        for p in config.p_values:
            t0 = time.perf_counter()
            _, trace = solve(instance, config.solver_config(variant, p))
            wall = time.perf_counter() - t0
            err = trace.final_rel_error
            err = math.inf if err is None else err
            out.append(PhaseCellResult(
                rho=rho, m=m, variant=variant, p=p, trial=trial, seed=seed,
                iterations=trace.iterations, rel_error=err,
                success=bool(err < config.success_tol), status=trace.status,
                wall_time=wall,
            ))
            if keep_traces:
                traces.append(trace)
    return out, traces


def run_phase(config: ExperimentConfig, keep_traces: bool = False):
    """Sweep the rho grid with `trials` fresh instances per value.

    Cells run independently (optionally in a thread pool); the result list is
    sorted by (rho, trial, variant, p) so output never depends on scheduling.
    Returns (results, traces); traces is None unless keep_traces.
    """
    if config.kind != "phase":
        raise ParameterError("config.kind must be 'phase'")
    cells = [
        (ri, t) for ri in range(len(config.rho_values)) for t in range(config.trials)
    ]
    results, traces = [], []
    if config.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(config.workers) as pool:
            futs = [
                pool.submit(_run_phase_cell, config, ri, t, keep_traces)
                for ri, t in cells
            ]
            for fut in futs:
                out, tr = fut.result()
                results.extend(out)
                traces.extend(tr)
    else:
        for ri, t in cells:
            out, tr = _run_phase_cell(config, ri, t, keep_traces)
            results.extend(out)
            traces.extend(tr)
    order = np.argsort(
        np.array(
            [(res.rho, res.trial, res.variant.value, res.p) for res in results],
            dtype=[("rho", float), ("trial", int), ("variant", "U8"), ("p", float)],
        ),
        kind="stable",
    )
    results = [results[k] for k in order]
    if keep_traces:
        traces = [traces[k] for k in order]
    return results, (traces if keep_traces else None)


def success_rates(results):
    """Aggregate phase results into {(variant, p, rho): success fraction}."""
    totals, hits = {}, {}
    for res in results:
        key = (res.variant, res.p, res.rho)
        totals[key] = totals.get(key, 0) + 1
        hits[key] = hits.get(key, 0) + (1 if res.success else 0)
    return {key: hits[key] / totals[key] for key in totals}
