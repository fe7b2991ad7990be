"""Penalty convex-concave procedure, random restarts, the feasibility
baseline, and warm-started sweeps over memory size, threshold and horizon."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..evaluation import DivergentEntropy, DivergentReward, solve_values
from ..model import Pomdp, reduce_finite_horizon
from ..pmc import (
    InducedPmc, Instantiation, build_pmc, chain_memory_structure, instantiate, project_simplex,
)
from .nlp import CcpState, NlpProblem, SolverFailure, build_nlp, convexify, solve_subproblem

FEASIBILITY_TOL = 1e-6
DUST = 1e-6  # action probabilities below this are treated as solver noise
STATUSES = ("converged_feasible", "slack_positive", "iteration_limit", "solver_failure")


class AllRestartsFailed(RuntimeError):
    def __init__(self, results):
        self.results = list(results)
        super().__init__(f"no feasible controller in {len(self.results)} runs")


@dataclass(frozen=True)
class SynthesisConfig:
    beta: float = 0.9
    gamma_threshold: float = 0.0
    epsilon: float = 1e-4
    tau0: float = 1.0
    mu: float = 2.0
    tau_max: float = 1e4
    max_iterations: int = 200
    restarts: int = 10
    seed: int = 0
    slack_tolerance: float = 1e-6
    subproblem_tolerance: float = 1e-8
    reward_convention: str = "current"
    extrapolate: bool = True

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if self.epsilon <= 0 or self.tau0 <= 0 or self.mu <= 1 or self.tau_max < self.tau0:
            raise ValueError("need epsilon > 0, tau0 > 0, mu > 1 and tau_max >= tau0")
        if self.max_iterations < 1 or self.restarts < 1:
            raise ValueError("max_iterations and restarts must be positive")
        if not math.isfinite(self.gamma_threshold) and self.gamma_threshold != -math.inf:
            raise ValueError("gamma_threshold must be finite or -inf")


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    instantiation: Instantiation
    entropy: float
    reward: float
    slack_sum: float
    iterations: int
    status: str
    feasible: bool
    trace: tuple = ()
    gamma_threshold: float = 0.0
    beta: float = 1.0
    successor: tuple = (0,)
    restart: int = 0
    baseline: bool = False

    @property
    def k(self) -> int:
        return len(self.successor)


@dataclass(frozen=True)
class _Exact:
    entropy: float
    reward: float
    nu: np.ndarray
    eta: np.ndarray
    feasible: bool


def _exact(pmc: InducedPmc, gamma_flat: np.ndarray, beta: float, threshold: float) -> _Exact:
    chain = instantiate(pmc, Instantiation(gamma_flat.reshape(pmc.gamma_shape)), check=False)
    try:
        nu = solve_values(chain.P, chain.L, beta, chain.initial, DivergentEntropy)
        eta = solve_values(chain.P, chain.r, beta, chain.initial, DivergentReward)
    except ArithmeticError:
        n = chain.n
        return _Exact(math.nan, math.nan, np.zeros(n), np.zeros(n), False)
    r = float(eta[chain.initial])
    return _Exact(float(nu[chain.initial]), r, nu, eta, r >= threshold - FEASIBILITY_TOL)


def _result(pmc, config, gamma_flat, ex, slack, iters, status, trace, restart, baseline):
    return SynthesisResult(
        Instantiation(gamma_flat.reshape(pmc.gamma_shape)), ex.entropy, ex.reward, slack, iters,
        status, ex.feasible, tuple(trace), config.gamma_threshold, config.beta,
        pmc.structure.successor, restart, baseline)


def _better(a: _Exact, b: _Exact) -> bool:
    """Feasible beats infeasible; then entropy (feasible) or reward (infeasible)."""
    if a.feasible != b.feasible:
        return a.feasible
    if a.feasible:
        return a.entropy > b.entropy + 1e-12
    return (not math.isnan(a.reward)) and (math.isnan(b.reward) or a.reward > b.reward + 1e-12)


def _extrapolate(pmc, gamma, cand_gamma, cand, beta, thr, shape, max_doublings=6):
    """Move further along the step ``cand_gamma - gamma`` (projected onto the
    simplex) while the exact evaluation keeps improving."""
    step = cand_gamma - gamma
    best_g, best = cand_gamma, cand
    alpha = 1.0
    for _ in range(max_doublings):
        alpha *= 2.0
        g = project_simplex((gamma + alpha * step).reshape(shape)).reshape(-1)
        ex = _exact(pmc, g, beta, thr)
        if not _better(ex, best):
            break
        best_g, best = g, ex
    return best_g, best


def _polish(pmc, gamma, ex, beta, thr, shape):
    """Zero action probabilities below ``DUST`` and renormalize; kept only if
    the result stays feasible and loses at most 1e-4 bits."""
    g = gamma.reshape(shape)
    small = (g < DUST) & (g > 0)
    if not small.any():
        return gamma, ex
    g = np.where(small, 0.0, g)
    g = (g / g.sum(axis=1, keepdims=True)).reshape(-1)
    cand = _exact(pmc, g, beta, thr)
    if cand.feasible and cand.entropy >= ex.entropy - 1e-4:
        return g, cand
    return gamma, ex


def penalty_ccp(pmc: InducedPmc, config: SynthesisConfig, initial: Instantiation,
                nlp: NlpProblem | None = None, baseline: bool = False,
                restart: int = 0) -> SynthesisResult:
    """Run the penalty CCP from ``initial``.

    Each iteration expands around the current controller with value
    estimates from exact policy evaluation, so a feasible expansion point is
    feasible for the subproblem with zero slack. Once the current controller
    meets the threshold, candidates that lose entropy or feasibility are
    rejected (the penalty still grows). The best exactly feasible iterate is
    returned, the initial point included, after zeroing probabilities small
    enough to be solver noise. With ``baseline`` the entropy
    constraints are dropped and the last feasible iterate is returned.
    """
    if nlp is None:
        nlp = build_nlp(pmc, config.beta)
    beta, thr = config.beta, config.gamma_threshold
    k, Z, A = pmc.gamma_shape
    gamma = project_simplex(np.asarray(initial.gamma, dtype=float).reshape(k * Z, A)).reshape(-1)
    cur = _exact(pmc, gamma, beta, thr)
    best_gamma, best = (gamma, cur) if cur.feasible else (None, None)
    trace = [dict(iteration=0, tau=None, val=None, slack=None, entropy=cur.entropy,
                  reward=cur.reward, feasible=cur.feasible, accepted=True)]
    prev_val = (0.0 if baseline else cur.entropy) if cur.feasible else None
    tau = config.tau0
    status = "iteration_limit"
    slack = math.nan
    it = 0
    for it in range(1, config.max_iterations + 1):
        state = CcpState(it, cur.nu[nlp.nu_states], cur.eta[nlp.eta_states], gamma, tau, thr,
                         prev_val)
        sub = convexify(nlp, state, baseline)
        try:
            sol = solve_subproblem(sub, config.subproblem_tolerance)
        except SolverFailure:
            if best is None:
                raise
            status = "solver_failure"
            break
        cand_gamma = sol.gamma
        cand = _exact(pmc, cand_gamma, beta, thr)
        if config.extrapolate and not baseline:
            cand_gamma, cand = _extrapolate(pmc, gamma, cand_gamma, cand, beta, thr, (k * Z, A))
        slack = sol.slack_sum
        accept = True
        if not baseline and cur.feasible:
            accept = cand.feasible and cand.entropy >= cur.entropy - 1e-9
        trace.append(dict(iteration=it, tau=tau, val=sol.val, slack=slack, entropy=cand.entropy,
                          reward=cand.reward, feasible=cand.feasible, accepted=accept))
        if accept:
            gamma, cur = cand_gamma, cand
            if cur.feasible and (baseline or best is None or cur.entropy > best.entropy):
                best_gamma, best = gamma, cur
        small_step = prev_val is not None and abs(sol.val - prev_val) < config.epsilon
        prev_val = sol.val
        if small_step and slack <= config.slack_tolerance:
            status = "converged_feasible" if best is not None else "slack_positive"
            break
        if small_step and tau >= config.tau_max:
            status = "slack_positive"
            break
        tau = min(config.mu * tau, config.tau_max)
    if best is None:
        return _result(pmc, config, gamma, cur, slack, it, status, trace, restart, baseline)
    if not baseline:
        best_gamma, best = _polish(pmc, best_gamma, best, beta, thr, (k * Z, A))
    if status == "converged_feasible" and slack > config.slack_tolerance:
        status = "slack_positive"
    return _result(pmc, config, best_gamma, best, slack, it, status, trace, restart, baseline)


def restart_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def random_initial(pmc: InducedPmc, seed: int, index: int) -> Instantiation:
    k, Z, A = pmc.gamma_shape
    return Instantiation.random(k, Z, A, restart_rng(seed, index))


def _worker(args):
    pmc, config, initial, baseline, index = args
    try:
        return penalty_ccp(pmc, config, initial, baseline=baseline, restart=index)
    except SolverFailure as exc:
        return exc


def _run_all(pmc, config, initials, nlp, baseline, jobs):
    if jobs > 1 and len(initials) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_worker, [(pmc, config, u, baseline, i)
                                           for i, u in enumerate(initials)]))
    out = []
    for i, u in enumerate(initials):
        try:
            out.append(penalty_ccp(pmc, config, u, nlp=nlp, baseline=baseline, restart=i))
        except SolverFailure as exc:
            out.append(exc)
    return out


def synth_with_restarts(pmc: InducedPmc, config: SynthesisConfig, initial_points=(),
                        nlp: NlpProblem | None = None, jobs: int = 1,
                        baseline: bool = False) -> SynthesisResult:
    """Best feasible result over ``config.restarts`` random starts.

    Random start i draws from ``SeedSequence(config.seed, spawn_key=(i,))``;
    any ``initial_points`` run after them with the following indices. Ties
    go to the lowest index.
    """
    if nlp is None:
        nlp = build_nlp(pmc, config.beta)
    initials = [random_initial(pmc, config.seed, i) for i in range(config.restarts)]
    initials += list(initial_points)
    results = _run_all(pmc, config, initials, nlp, baseline, jobs)
    best = None
    for res in results:
        if isinstance(res, SynthesisResult) and res.feasible:
            if best is None or (not baseline and res.entropy > best.entropy):
                best = res
    if best is None:
        raise AllRestartsFailed(results)
    return best


def synth_feasibility(pmc: InducedPmc, config: SynthesisConfig, initial_points=(),
                      nlp: NlpProblem | None = None, jobs: int = 1) -> SynthesisResult:
    """Feasibility baseline: constant objective, entropy reported post hoc.

    Returns the first feasible run (lowest index), not the most entropic one.
    """
    return synth_with_restarts(pmc, config, initial_points, nlp, jobs, baseline=True)


def embed_controller(u: Instantiation, k: int) -> Instantiation:
    """Lift a chain-memory controller to ``k`` memory states by repeating its
    last memory state; the induced process is unchanged."""
    g = np.asarray(u.gamma)
    if k < g.shape[0]:
        raise ValueError("cannot embed into fewer memory states")
    extra = np.repeat(g[-1:], k - g.shape[0], axis=0)
    return Instantiation(np.concatenate([g, extra], axis=0))


def memory_sweep(model: Pomdp, k_values, config: SynthesisConfig, stop_percent: float = 0.0,
                 jobs: int = 1) -> list[SynthesisResult]:
    """Chain-memory synthesis for increasing k with warm starts.

    Run k starts from the embedding of the best (k-1)-controller plus the
    configured random restarts. The embedding's value is kept unless beaten,
    so entropies never decrease. Stops once the relative improvement falls
    below ``stop_percent`` percent.
    """
    k_values = list(k_values)
    if k_values != sorted(k_values) or not k_values or k_values[0] < 1:
        raise ValueError("k values must be ascending and positive")
    out: list[SynthesisResult] = []
    for k in k_values:
        pmc = build_pmc(model, chain_memory_structure(k), config.reward_convention)
        warm = [embed_controller(out[-1].instantiation, k)] if out else []
        try:
            res = synth_with_restarts(pmc, config, warm, jobs=jobs)
        except AllRestartsFailed:
            if not out:
                raise
            res = None
        if out:
            prev = out[-1]
            if res is None or not res.entropy > prev.entropy + 1e-12:
                ex = _exact(pmc, warm[0].gamma.reshape(-1), config.beta, config.gamma_threshold)
                res = replace(prev, instantiation=warm[0], successor=pmc.structure.successor,
                              entropy=max(ex.entropy, prev.entropy), iterations=0, trace=())
        out.append(res)
        if len(out) > 1:
            old, new = out[-2].entropy, out[-1].entropy
            gain = math.inf if old <= 0 and new > old else (
                0.0 if old <= 0 else 100.0 * (new - old) / old)
            if gain < stop_percent:
                break
    return out


@dataclass(frozen=True, eq=False)
class SweepPoint:
    x: float
    result: SynthesisResult | None
    status: str
    seed: int

    @property
    def entropy(self) -> float:
        return self.result.entropy if self.result is not None else math.nan

    @property
    def reward(self) -> float:
        return self.result.reward if self.result is not None else math.nan


def gamma_sweep(pmc: InducedPmc, config: SynthesisConfig, thresholds, jobs: int = 1,
                baseline: bool = False) -> list[SweepPoint]:
    """Synthesize for each threshold, from the largest down.

    Every point after the first also starts from the previous point's
    controller, which stays feasible for a smaller threshold. Points are
    returned in the input order.
    """
    nlp = build_nlp(pmc, config.beta)
    order = sorted(range(len(thresholds)), key=lambda i: -thresholds[i])
    points: dict = {}
    warm = []
    for i in order:
        cfg = replace(config, gamma_threshold=float(thresholds[i]))
        try:
            res = synth_with_restarts(pmc, cfg, warm, nlp=nlp, jobs=jobs, baseline=baseline)
            warm = [res.instantiation]
            points[i] = SweepPoint(thresholds[i], res, res.status, cfg.seed)
        except AllRestartsFailed:
            points[i] = SweepPoint(thresholds[i], None, "infeasible", cfg.seed)
        except SolverFailure:
            points[i] = SweepPoint(thresholds[i], None, "solver_failure", cfg.seed)
    return [points[i] for i in range(len(thresholds))]


def horizon_sweep(model: Pomdp, horizons, config: SynthesisConfig, k: int = 1,
                  jobs: int = 1) -> list[SweepPoint]:
    """Finite-horizon synthesis (beta = 1 on the reduction) for ascending
    horizons; each point also starts from the previous horizon's controller."""
    horizons = list(horizons)
    if horizons != sorted(horizons):
        raise ValueError("horizons must be ascending")
    cfg = replace(config, beta=1.0)
    warm = []
    out = []
    for n in horizons:
        pmc = build_pmc(reduce_finite_horizon(model, n), chain_memory_structure(k),
                        cfg.reward_convention)
        try:
            res = synth_with_restarts(pmc, cfg, warm, jobs=jobs)
            warm = [res.instantiation]
            out.append(SweepPoint(n, res, res.status, cfg.seed))
        except AllRestartsFailed:
            out.append(SweepPoint(n, None, "infeasible", cfg.seed))
        except SolverFailure:
            out.append(SweepPoint(n, None, "solver_failure", cfg.seed))
    return out
