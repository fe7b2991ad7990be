"""Threshold sweep on the six-state example.

The agent picks a1 or a2 twice; a1 on the second step earns reward 1.
With two memory states the first choice can stay uniform (1 bit) while
the second trades entropy for reward, so the maximum entropy falls from
2 bits to 1 bit as the reward threshold rises from 0.5 to 1.
"""

import numpy as np

from entromax import (
    build_pmc, chain_memory_structure, evaluate, gen_fig5, instantiate, reduce_finite_horizon,
)
from entromax.synthesis import SynthesisConfig, gamma_sweep, max_entropy_mdp_constrained


def main():
    model = gen_fig5()
    # three decision stages, then an absorbing sink; beta = 1 on the reduction
    reduced = reduce_finite_horizon(model, 3)
    pmc = build_pmc(reduced, chain_memory_structure(2))

    thresholds = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    points = gamma_sweep(pmc, SynthesisConfig(beta=1.0, restarts=10), thresholds)
    print("threshold  entropy  reward  bound")
    for p in points:
        bound = max_entropy_mdp_constrained(reduced, 1.0, p.x).entropy
        print(f"{p.x:9.2f}  {p.entropy:7.4f}  {p.reward:6.4f}  {bound:6.4f}")

    # the controller at threshold 0.8 randomizes only at the second step
    best = points[3].result
    print("\ncontroller at threshold 0.8 (memory x observation x action):")
    print(np.round(best.instantiation.gamma[:, 0, :], 4))
    res = evaluate(instantiate(pmc, best.instantiation), 1.0)
    print(f"re-evaluated entropy {res.total_entropy:.4f}, reward {res.total_reward:.4f}")


if __name__ == "__main__":
    main()
