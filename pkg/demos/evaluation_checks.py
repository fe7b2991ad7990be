"""Three ways to compute the entropy of a controlled POMDP.

A random controller on a random model is evaluated by a linear solve,
by a truncated power series, and by Monte Carlo simulation of the
surprisal of sampled trajectories.
"""

import numpy as np

from entromax import Instantiation, build_pmc, chain_memory_structure, instantiate, make_pomdp
from entromax.evaluation import evaluate, simulate


def random_model(rng, S=5, A=3, Z=2):
    P = rng.dirichlet(np.ones(S), size=(S, A))
    O = rng.dirichlet(np.ones(Z), size=S)
    R = rng.uniform(0, 1, size=(S, A))
    return make_pomdp([f"s{i}" for i in range(S)], "s0", [f"a{i}" for i in range(A)], P,
                      [f"z{i}" for i in range(Z)], O, R)


def main():
    rng = np.random.default_rng(0)
    model = random_model(rng)
    pmc = build_pmc(model, chain_memory_structure(2))
    chain = instantiate(pmc, Instantiation.random(2, 2, 3, rng))
    beta = 0.9

    exact = evaluate(chain, beta)
    series, disc, v = 0.0, 1.0, chain.L.copy()
    for _ in range(10_000):
        series += disc * v[chain.initial]
        v = chain.P @ v
        disc *= beta
    sim = simulate(chain, 250, 100_000, seed=1, beta=beta)
    print(f"linear solve : {exact.total_entropy:.10f} bits")
    print(f"power series : {series:.10f} bits")
    print(f"Monte Carlo  : {sim.entropy_mean:.4f} +/- {sim.entropy_se:.4f} bits")


if __name__ == "__main__":
    main()
