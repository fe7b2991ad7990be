import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entromax.benchmarks import gen_fig5, gen_fig7
from entromax.evaluation import evaluate
from entromax.model import reduce_finite_horizon
from entromax.pmc import Instantiation, build_pmc, chain_memory_structure, instantiate
from entromax.synthesis import (
    AllRestartsFailed, SynthesisConfig, build_nlp, controller_from_dict, convexified_rhs,
    dc_replacement, embed_controller, exact_rhs, format_gamma, gamma_sweep, horizon_sweep,
    inner_maximize, max_entropy_mdp, max_entropy_mdp_constrained, max_entropy_occupancy,
    memory_sweep, parse_gamma, penalty_ccp, random_initial, result_to_dict, result_to_json,
    synth_feasibility, synth_with_restarts,
)

from conftest import random_pomdp

def fig5_pmc(k=1):
    return build_pmc(gen_fig5(), chain_memory_structure(k))


@settings(max_examples=200, deadline=None)
@given(c=st.floats(0, 10), v=st.floats(-20, 20), u=st.floats(0, 1),
       vh=st.floats(-20, 20), uh=st.floats(0, 1))
def test_dc_replacement_underestimates_and_is_tight(c, v, u, vh, uh):
    assert dc_replacement(c, v, u, vh, uh) <= c * v * u + 1e-9 * (1 + abs(c * v))
    assert dc_replacement(c, vh, uh, vh, uh) == pytest.approx(c * vh * uh, abs=1e-9)


def test_nlp_counts_fig5():
    nlp = build_nlp(fig5_pmc(), 1.0)
    assert nlp.active.size == 6
    assert nlp.nu_states.tolist() == [0, 1, 2]
    assert nlp.eta_states.tolist() == [0, 1, 2]
    n = nlp.n_variables
    assert n["gamma"] == 2 and n["full"] == 14
    # sI has two bilinear terms per successor in nu (s2, s3), s2/s3 none (absorbing successors)
    assert n["slack_nu"] == 2


def test_nlp_prunes_unreachable_memory():
    nlp = build_nlp(fig5_pmc(3), 0.9)
    # sI with memory 1, s2/s3 with memory 2, the absorbing states with memory 3
    assert nlp.active.size == 6
    assert nlp.n_variables["gamma"] == 6


def test_beta_one_rejects_cycles():
    m = random_pomdp(np.random.default_rng(1), sparsity=0.0)
    with pytest.raises(ValueError):
        build_nlp(build_pmc(m, chain_memory_structure(1)), 1.0)
    with pytest.raises(ValueError):
        build_nlp(fig5_pmc(), 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 2))
def test_exact_values_satisfy_constraints(seed, k):
    rng = np.random.default_rng(seed)
    m = random_pomdp(rng)
    pmc = build_pmc(m, chain_memory_structure(k))
    nlp = build_nlp(pmc, 0.9)
    u = Instantiation.random(k, m.n_observations, m.n_actions, rng)
    res = evaluate(instantiate(pmc, u), 0.9)
    g = u.gamma.reshape(-1)
    nu, eta = res.nu[nlp.nu_states], res.eta[nlp.eta_states]
    rhs_nu, rhs_eta = exact_rhs(nlp, nu, eta, g)
    assert np.allclose(rhs_nu, nu, atol=1e-9) and np.allclose(rhs_eta, eta, atol=1e-9)
    # convexification is tight at the expansion point and below it elsewhere
    cn, ce = convexified_rhs(nlp, nu, eta, g, nu, eta, g)
    assert np.allclose(cn, rhs_nu, atol=1e-9) and np.allclose(ce, rhs_eta, atol=1e-9)
    g2 = Instantiation.random(k, m.n_observations, m.n_actions, rng).gamma.reshape(-1)
    nu2, eta2 = nu + rng.normal(size=nu.size), eta + rng.normal(size=eta.size)
    en, ee = exact_rhs(nlp, nu2, eta2, g2)
    cn, ce = convexified_rhs(nlp, nu2, eta2, g2, nu, eta, g)
    assert np.all(cn <= en + 1e-9) and np.all(ce <= ee + 1e-9)


# one observation: memoryless controllers use the same distribution in sI and s2/s3
@pytest.mark.parametrize("k, threshold, expected", [
    (1, 0.0, 2.0), (1, 0.8, 2 * 0.7219281), (2, 0.8, 1.7219281), (2, 1.0, 1.0)])
def test_ccp_fig5(k, threshold, expected):
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=threshold, restarts=3)
    res = synth_with_restarts(fig5_pmc(k), cfg)
    assert res.feasible and res.reward >= threshold - 1e-6
    assert res.entropy == pytest.approx(expected, abs=2e-3)
    assert res.status in ("converged_feasible", "iteration_limit", "slack_positive")


def test_ccp_trace_and_initial_feasibility():
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=0.5)
    res = penalty_ccp(fig5_pmc(), cfg, Instantiation(np.array([[[0.9, 0.1]]])))
    assert res.trace[0]["iteration"] == 0 and res.trace[0]["feasible"]
    ent = [row["entropy"] for row in res.trace if row["accepted"]]
    assert all(b >= a - 1e-9 for a, b in zip(ent, ent[1:]))
    assert res.entropy >= ent[0]


def test_restarts_are_deterministic():
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=0.8, restarts=3, seed=11)
    a = synth_with_restarts(fig5_pmc(), cfg)
    b = synth_with_restarts(fig5_pmc(), cfg)
    assert np.array_equal(a.instantiation.gamma, b.instantiation.gamma)
    assert a.restart == b.restart
    g0 = random_initial(fig5_pmc(), 11, 0).gamma
    assert np.array_equal(g0, random_initial(fig5_pmc(), 11, 0).gamma)
    assert not np.array_equal(g0, random_initial(fig5_pmc(), 11, 1).gamma)


def test_parallel_restarts_match_serial():
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=0.8, restarts=2, seed=3)
    a = synth_with_restarts(fig5_pmc(), cfg, jobs=1)
    b = synth_with_restarts(fig5_pmc(), cfg, jobs=2)
    assert np.array_equal(a.instantiation.gamma, b.instantiation.gamma)


def test_infeasible_threshold():
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=1.5, restarts=2, max_iterations=30)
    with pytest.raises(AllRestartsFailed):
        synth_with_restarts(fig5_pmc(), cfg)


def test_feasibility_baseline_is_dominated():
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=0.6, restarts=2)
    base = synth_feasibility(fig5_pmc(), cfg)
    best = synth_with_restarts(fig5_pmc(), cfg)
    assert base.baseline and base.feasible
    assert best.entropy >= base.entropy - 1e-6


def test_gamma_sweep_is_monotone():
    cfg = SynthesisConfig(beta=1.0, restarts=2)
    pts = gamma_sweep(fig5_pmc(), cfg, [0.0, 0.5, 1.0, 1.2])
    assert [p.x for p in pts] == [0.0, 0.5, 1.0, 1.2]
    assert pts[-1].status == "infeasible" and math.isnan(pts[-1].entropy)
    ents = [p.entropy for p in pts[:-1]]
    assert ents[0] >= ents[1] >= ents[2] - 1e-9


def test_embedding_preserves_values():
    pmc1 = fig5_pmc(1)
    u = Instantiation(np.array([[[0.3, 0.7]]]))
    up = embed_controller(u, 3)
    a = evaluate(instantiate(pmc1, u), 1.0)
    b = evaluate(instantiate(fig5_pmc(3), up), 1.0)
    assert a.total_entropy == pytest.approx(b.total_entropy)
    with pytest.raises(ValueError):
        embed_controller(up, 2)


def test_memory_sweep_fig7():
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=1.0, restarts=2)
    res = memory_sweep(reduce_finite_horizon(gen_fig7(), 5), [1, 2, 3], cfg)
    ents = [r.entropy for r in res]
    assert ents[0] == pytest.approx(0.0, abs=1e-3)
    assert ents[1] >= 1.55
    assert all(b >= a - 1e-9 for a, b in zip(ents, ents[1:]))
    assert [r.k for r in res] == [1, 2, 3]


def test_horizon_sweep_fig5():
    cfg = SynthesisConfig(restarts=2)
    pts = horizon_sweep(gen_fig5(), [1, 2, 3], cfg)
    assert [p.entropy for p in pts] == pytest.approx([0.0, 1.0, 2.0], abs=2e-3)


def test_inner_maximize_matches_grid():
    rng = np.random.default_rng(4)
    for _ in range(20):
        P_s = rng.dirichlet(np.ones(4), size=2)
        w = rng.normal(size=4)
        val, p = inner_maximize(P_s, w)
        grid = np.linspace(0, 1, 2001)
        best = -np.inf
        for t in grid:
            m = t * P_s[0] + (1 - t) * P_s[1]
            h = -np.sum(m[m > 0] * np.log2(m[m > 0]))
            best = max(best, h + m @ w)
        assert val >= best - 1e-9 and val <= best + 1e-5


@pytest.mark.parametrize("beta", [0.5, 0.9, 1.0])
def test_mdp_bound_closed_form(beta):
    # deterministic distinct successors: nu(s) = log2 sum_a 2^(beta nu(s_a))
    b = max_entropy_mdp(gen_fig5(), beta)
    assert b.value == pytest.approx(math.log2(2 * 2 ** (beta * 1.0)), abs=1e-6)
    assert np.allclose(b.policy[0], 0.5, atol=1e-4)


def test_mdp_bound_rejects_divergent_beta_one():
    m = random_pomdp(np.random.default_rng(1), sparsity=0.0)
    with pytest.raises(ArithmeticError):
        max_entropy_mdp(m, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_occupancy_bound_matches_value_iteration(seed):
    m = random_pomdp(np.random.default_rng(seed), max_states=5)
    vi = max_entropy_mdp(m, 0.9)
    occ = max_entropy_occupancy(m, 0.9)
    assert occ.value == pytest.approx(vi.value, abs=1e-5)


def test_constrained_bound_fig5():
    r = max_entropy_mdp_constrained(gen_fig5(), 1.0, 0.8)
    assert r.entropy == pytest.approx(1.7219, abs=1e-3) and r.feasible
    c = max_entropy_mdp_constrained(gen_fig5(), 1.0, 0.8, SynthesisConfig(restarts=3),
                                    method="ccp")
    assert c.entropy == pytest.approx(r.entropy, abs=2e-3)
    with pytest.raises(AllRestartsFailed):
        max_entropy_mdp_constrained(gen_fig5(), 1.0, 1.5)
    with pytest.raises(ValueError):
        max_entropy_mdp_constrained(gen_fig5(), 1.0, 0.5, method="magic")


@pytest.mark.parametrize("seed", range(5))
def test_pomdp_synthesis_below_bound(seed):
    m = random_pomdp(np.random.default_rng(100 + seed))
    cfg = SynthesisConfig(beta=0.9, restarts=2, max_iterations=60)
    res = synth_with_restarts(build_pmc(m, chain_memory_structure(2)), cfg)
    bound = max_entropy_occupancy(m, 0.9).value
    assert res.entropy <= bound + 1e-5


def test_controller_text_round_trip():
    u = Instantiation(np.array([[[0.25, 0.75]], [[1.0, 0.0]]]))
    text = format_gamma(u, (1, 1), ("a1", "a2"), ("z1",))
    assert "GAMMA: 1 : z1 0.25 0.75" in text and "successor: 2 2" in text
    u2, s, acts, obs = parse_gamma(text)
    assert np.array_equal(u2.gamma, u.gamma) and s.successor == (1, 1)
    assert acts == ("a1", "a2") or list(acts) == ["a1", "a2"]
    with pytest.raises(ValueError):
        format_gamma(u, (1,), ("a1", "a2"), ("z1",))


def test_result_json_round_trip():
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=0.5, restarts=1)
    res = synth_with_restarts(fig5_pmc(), cfg)
    m = gen_fig5()
    d = json.loads(result_to_json(res, m.actions, m.observations))
    assert d == result_to_dict(res, m.actions, m.observations) or d["schema"] == "v1"
    u, s = controller_from_dict(d)
    assert np.array_equal(u.gamma, res.instantiation.gamma) and s.successor == res.successor
    with pytest.raises(ValueError):
        controller_from_dict({**d, "schema": "v0"})
