"""Unpredictable routes in the four-room world.

The agent starts in the top-left room and must reach the bottom-right
room with discounted reward at least 0.9^12. The entropy-maximizing
controller splits its traffic between the two routes; the feasibility
baseline settles on one of them.
"""

import numpy as np

from entromax import build_pmc, chain_memory_structure, gen_fourroom10, instantiate
from entromax.benchmarks import cell_id, fourroom10_spec
from entromax.evaluation import occupancy, transition_flow
from entromax.synthesis import (
    SynthesisConfig, max_entropy_occupancy, synth_feasibility, synth_with_restarts,
)


def door_flows(pmc, result):
    chain = instantiate(pmc, result.instantiation)
    occ = occupancy(chain, beta=0.9)
    return [transition_flow(chain, occ, cell_id(a), cell_id(b))
            for a, b in fourroom10_spec().doors]


def occupancy_grid(pmc, result):
    table = occupancy(instantiate(pmc, result.instantiation), beta=0.9).as_dict()
    return np.array([[table[cell_id((c, r))] for c in range(1, 11)] for r in range(10, 0, -1)])


def main():
    model = gen_fourroom10()
    pmc = build_pmc(model, chain_memory_structure(1))
    cfg = SynthesisConfig(beta=0.9, gamma_threshold=0.9 ** 12, restarts=3)
    best = synth_with_restarts(pmc, cfg)
    base = synth_feasibility(pmc, cfg)
    bound = max_entropy_occupancy(model, 0.9, 0.9 ** 12).value
    print(f"entropy-max: {best.entropy:.3f} bits, reward {best.reward:.4f}")
    print(f"baseline:    {base.entropy:.3f} bits, reward {base.reward:.4f}")
    print(f"fully observable bound: {bound:.3f} bits\n")
    for name, res in (("entropy-max", best), ("baseline", base)):
        flows = ", ".join(f"door{i} {f:.3f}" for i, f in enumerate(door_flows(pmc, res), 1))
        print(f"{name:12s} {flows}")
    print("\ndiscounted occupancy, entropy-max controller (top row = north wall):")
    with np.printoptions(precision=2, suppress=True, linewidth=120):
        print(occupancy_grid(pmc, best))


if __name__ == "__main__":
    main()
