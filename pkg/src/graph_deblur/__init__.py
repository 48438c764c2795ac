"""Blind deconvolution of sparse sources diffused over a graph."""
from .graphs import (
    Graph,
    GraphConstructionError,
    SpectralDecomposition,
    build_community_graph,
    build_random_sensor_graph,
    load_graph,
    save_graph,
    spectral_decompose,
)
from .lifting import (
    LiftedOperator,
    Measurement,
    apply_graph_filter,
    build_lifted_operator,
    diffuse_and_measure,
    vandermonde,
)
from .proximal import (
    FidelitySet,
    InfeasibleProblemError,
    project_fidelity,
    project_l20,
    prox_l21,
    row_support,
    svt,
)
from .solvers import (
    DeconvResult,
    SolverConfig,
    default_epsilon,
    rank1_factor,
    solve_convex,
    solve_convex_multi,
    solve_ssparse,
    solve_ssparse_multi,
)

__version__ = "0.1.0"
