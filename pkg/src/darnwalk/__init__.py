"""Darned lattices, the random walks that live on them, and the
measure/energy/kernel checks used to compare those walks against the
collapsed diffusion they approximate."""

from .dynamics import (
    WalkConfig,
    WalkPath,
    hitting_stats,
    level_rate,
    marginal,
    oscillation_exceeds,
    oscillation_grid,
    oscillation_modulus,
    path_statistics,
    sample_path,
    simulate_ensemble,
)
from .experiments import (
    ConfigError,
    RunConfig,
    bmd_comparison,
    ks_critical,
    ks_distance,
    level_consistency,
    null_calibration,
    run,
    star_occupation,
    tightness_probe,
)
from .geometry import (
    AxisBox,
    Ball,
    GeometryError,
    HalfspacePolytope,
    Polygon2D,
    region_from_config,
)
from .graphio import load_graph, save_graph
from .isoperimetry import (
    IsoRecord,
    IsoReport,
    ball_minima,
    connected_minima,
    cut_weight,
    enumerate_family,
    iso_ratio,
    isoperimetry_report,
    random_connected_minima,
    set_measure,
    star_neighborhood_records,
)
from .lattice import (
    DarnedLattice,
    LatticeBuildError,
    build_lattice,
    build_plain_lattice,
    graph_distance,
    interior_set,
    lattice_points_in_region,
    quotient_metric,
    quotient_metric_table,
    star_degree_scaling,
)
from .rng import derive_seed
from .spectral import (
    Monomial,
    RadialBump,
    SquaredNorm,
    dirichlet_energy,
    duality_gap,
    full_transition,
    generator_apply,
    generator_gap,
    generator_matrix,
    kernel_conservation_error,
    kernel_symmetry_error,
    nash_ratio,
    offdiag_constant,
    ondiag_profile,
    semigroup_apply,
    transition_densities,
    transition_rows,
)

__version__ = "0.1.0"
