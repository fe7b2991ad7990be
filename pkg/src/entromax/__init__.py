"""Maximum-entropy finite-state controllers for POMDPs."""

from .model import (
    PROB_TOL, Pomdp, ValidationError, ValidationReport, make_pomdp, reduce_finite_horizon,
    to_fully_observable, validate_pomdp,
)
from .pomdp_io import ParseError, load_pomdp, parse_pomdp, save_pomdp, serialize_pomdp
from .benchmarks import (
    GridSpec, builtin, gen_fig5, gen_fig7, gen_fourroom10, gen_grid4, gen_gridworld,
)
from .pmc import (
    FscStructure, Instantiation, InducedPmc, MarkovChain, build_pmc, chain_memory_structure,
    check_well_defined, instantiate,
)
from .evaluation import (
    DivergentEntropy, DivergentReward, EvaluationResult, OccupancyTable, discounted_entropy,
    discounted_reward, evaluate, finite_horizon_entropy, finite_horizon_reward, local_entropy,
    occupancy, simulate,
)

__version__ = "0.1.0"
