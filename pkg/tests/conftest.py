import math
import numpy as np
import pytest

from entromax.model import Pomdp


HEADER = "states: s1 s2\nactions: a\nobservations: z\nstart: s1\n"

# (body appended to HEADER, line, column, subset of expected tokens)
ERROR_FIXTURES = [
    ("T: a : s1 : s3 1\n", 5, 13, {"s1", "s2"}),     # undeclared state
    ("T: b : s1 : s1 1\n", 5, 4, {"a"}),             # undeclared action
    ("T: a : s1 s1 1\n", 5, 11, {":"}),              # missing separator
    ("T: a : s1 : s1 x\n", 5, 16, {"<number>"}),     # malformed number
    ("T: a : s1 : s1 1 2\n", 5, 18, {"<end of line>"}),
    ("T: a : s1 : s1 -0.5\n", 5, 16, set()),         # negative probability
    ("Q: a\n", 5, 1, {"T", "O", "R"}),               # unknown entry kind
    ("O: s1 : z 1\nO: s1 : z 1\n", 6, 1, set()),      # duplicate entry
    ("T: a : s1 : s1\n", 5, 15, {"<number>"}),       # truncated line
]


def random_pomdp(rng, max_states=4, max_actions=3, max_obs=3, sparsity=0.3,
                 min_states=2, reward_low=0.0) -> Pomdp:
    """Random valid POMDP; some transition entries are zeroed for sparsity."""
    S = int(rng.integers(min_states, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    Z = int(rng.integers(1, max_obs + 1))
    P = rng.dirichlet(np.ones(S), size=(S, A))
    mask = rng.random((S, A, S)) < sparsity
    P = np.where(mask, 0.0, P)
    for s in range(S):
        for a in range(A):
            if P[s, a].sum() == 0:
                P[s, a, rng.integers(S)] = 1.0
    P /= P.sum(axis=2, keepdims=True)
    O = rng.dirichlet(np.ones(Z), size=S)
    R = rng.uniform(reward_low, 1.0, size=(S, A))
    return Pomdp(tuple(f"s{i}" for i in range(S)), "s0", tuple(f"a{i}" for i in range(A)), P,
                 tuple(f"z{i}" for i in range(Z)), O, R)


def history_distribution(model: Pomdp, gamma: np.ndarray, successor, horizon: int):
    """Brute-force distribution of state sequences (S_1..S_N) and expected
    reward, marginalizing observations and actions at every step.

    Memory is deterministic, so the memory state at stage t is the t-1 fold
    successor of the first memory state. Reward R(S_t, A_t) is collected at
    stages 1..N.
    """
    P, O, R = model.transition, model.observation, model.reward
    paths = {}
    reward = 0.0
    stack = [((model.initial_index,), 1.0, 0)]
    while stack:
        seq, prob, q = stack.pop()
        s = seq[-1]
        # pa[a] = sum_z O(z|s) gamma(a|q, z)
        pa = np.array([sum(O[s, z] * gamma[q, z, a] for z in range(O.shape[1]))
                       for a in range(P.shape[1])])
        reward += prob * sum(pa[a] * R[s, a] for a in range(P.shape[1]))
        if len(seq) == horizon:
            paths[seq] = paths.get(seq, 0.0) + prob
            continue
        for s2 in range(P.shape[0]):
            p2 = prob * sum(pa[a] * P[s, a, s2] for a in range(P.shape[1]))
            if p2 > 0:
                stack.append((seq + (s2,), p2, successor[q]))
    return paths, reward


def joint_entropy_bits(dist) -> float:
    return -math.fsum(p * math.log2(p) for p in dist.values() if p > 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion
_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """``criterion(name, detail)`` labels the current acceptance test."""
    def record(name, detail=""):
        request.node.user_properties.append(("criterion", name))
        request.node.user_properties.append(("detail", detail))
    return record


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        props = dict(report.user_properties)
        _ACCEPTANCE.append((props.get("criterion", report.nodeid.split("::")[-1]),
                            report.outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{mark}  {name}" + (f"  [{detail}]" if detail else ""))
