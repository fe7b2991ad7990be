"""Controller synthesis: convexified bilinear program, penalty CCP, bounds."""

from .nlp import (
    BilinearTerms, CcpState, ConvexSubproblem, NlpProblem, SolverFailure, SubproblemSolution,
    build_nlp, convexified_rhs, convexify, dc_replacement, exact_rhs, solve_subproblem,
)
from .ccp import (
    AllRestartsFailed, SweepPoint, SynthesisConfig, SynthesisResult, embed_controller,
    gamma_sweep, horizon_sweep, memory_sweep, penalty_ccp, random_initial, restart_rng,
    synth_feasibility, synth_with_restarts,
)
from .mdp import (
    MdpBound, inner_maximize, max_entropy_mdp, max_entropy_mdp_constrained,
    max_entropy_occupancy,
)
from .controller_io import (
    controller_from_dict, format_gamma, parse_gamma, result_to_dict, result_to_json,
)
