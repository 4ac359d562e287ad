"""Elastic body dynamics by parallel per-vertex block coordinate descent.

Implicit Euler steps are solved as an unconstrained minimization of
G(x) = 1/(2h^2) ||x - y||_M^2 + E(x); each vertex takes an exact 3x3 Newton
step on its local energy, vertices of one graph color run in parallel, and
whole sweeps can be Chebyshev accelerated. Penalty contact with smoothed
Coulomb friction, Rayleigh-type damping, hard vertex constraints, and
whole-system baseline solvers (Newton, block Jacobi, preconditioned gradient
descent) are included for comparison studies.
"""

from ._backend import backend_name, default_threads
from ._system import (
    Body,
    FixedConstraint,
    SubspaceConstraint,
    System,
    WorldBoxConstraint,
    build_system,
    compile_constraints,
)
from .baselines import (
    GlobalSystem,
    SolverTrace,
    block_jacobi_step,
    descend,
    gd_step,
    global_gradient_hessian,
    minimize_newton,
    newton_step,
    relative_loss,
)
from .contact import (
    Contact,
    ContactSet,
    FrictionParams,
    broad_phase,
    ccd_edge_edge,
    ccd_vertex_triangle,
    contact_derivatives,
    dcd_vertex_triangle,
    friction_derivatives,
    recompute_dcd_anchor,
)
from .errors import (
    DegenerateTet,
    EmptyDescentRange,
    IndexOutOfRange,
    NonFiniteState,
    SchemaError,
    VbdError,
)
from .harness import (
    SceneConfig,
    export_frame,
    generate_beam,
    generate_chain,
    generate_cube,
    load_frame,
    parse_scene,
    run_convergence,
    run_simulation,
    scene_build,
    serialize_scene,
)
from .materials import (
    MaterialParams,
    damping_terms,
    deformation_gradient,
    snh_derivatives,
    spring_derivatives,
)
from .mesh import (
    ColorPartition,
    SpringNet,
    TetMesh,
    VertexAdjacency,
    build_spring_net,
    build_tet_mesh,
    greedy_color,
    incidence,
    load_node_ele,
)
from .solver import (
    ContactParams,
    SimState,
    SolverParams,
    accelerate,
    chebyshev_omega,
    color_pass,
    inertia_target,
    initialize,
    local_solve,
    make_state,
    step,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
