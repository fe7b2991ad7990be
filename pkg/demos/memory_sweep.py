"""More memory never hurts.

On the 15-state single-observation example every reward-1 path must take
a2 in the fourth column. A memoryless controller has to do the same in
every column, so its entropy is 0. Each extra memory state frees one more
column to randomize over three actions, adding log2(3) bits until the
reward constraint binds.
"""

import math

from entromax import gen_fig7
from entromax.synthesis import SynthesisConfig, max_entropy_mdp, memory_sweep


def main():
    model = gen_fig7()
    cfg = SynthesisConfig(beta=1.0, gamma_threshold=1.0, restarts=5)
    results = memory_sweep(model, range(1, 7), cfg)
    print(" k  entropy  multiples of log2(3)")
    for r in results:
        print(f"{r.k:2d}  {r.entropy:7.4f}  {r.entropy / math.log2(3):5.2f}")
    # the fully observable bound ignores the reward constraint
    print(f"\nunconstrained fully observable bound: {max_entropy_mdp(model, 1.0).value:.4f}")


if __name__ == "__main__":
    main()
