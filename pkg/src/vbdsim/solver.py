"""Implicit-Euler stepping by per-vertex block coordinate descent.

One step minimizes

    G(x) = 1/(2 h^2) ||x - y||_M^2 + E(x),     y = x_t + h v_t + h^2 a_ext

by sweeping the vertex colors in order; all vertices of one color are solved
concurrently (each takes one 3x3 Newton step on its local energy G_i) and
merged through a scratch buffer, so a sweep is deterministic for any thread
count. Discrete collision detection runs once per step at x_t, continuous
detection every n_col-th iteration against the current iterate. Optional
Chebyshev semi-iterative weights accelerate whole sweeps; vertices flagged as
colliding are exempt from the blend until the step ends.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import _numpy_core
from ._backend import default_threads, get_backend
from ._system import FIXED, SUBSPACE, System, compile_constraints, compile_contacts
from .contact import ContactSet, broad_phase, ccd_edge_edge, ccd_vertex_triangle, \
    dcd_vertex_triangle
from .errors import NonFiniteState

INIT_MODES = ("prev_pos", "inertia", "inertia_accel", "adaptive")


@dataclass(frozen=True)
class ContactParams:
    """Penalty contact configuration; absence means collisions are off."""

    k_c: float
    mu_c: float = 0.0
    eps_v: float = 1e-2
    dcd_radius: float = 1e-3
    max_depth: float = None

    def __post_init__(self):
        if self.k_c <= 0.0:
            raise ValueError("k_c must be positive")
        if self.mu_c < 0.0:
            raise ValueError("mu_c must be >= 0")
        if self.eps_v <= 0.0:
            raise ValueError("eps_v must be positive")
        if self.dcd_radius < 0.0:
            raise ValueError("dcd_radius must be >= 0")


@dataclass(frozen=True)
class SolverParams:
    h: float
    substeps: int = 1
    n_max: int = 10
    n_col: int = 4
    rho: float = 0.0
    eps_det: float = 1e-10
    line_search: bool = False
    init_mode: str = "adaptive"
    a_ext: tuple = (0.0, 0.0, 0.0)
    threads: int = 0              # 0 = backend default (VBD_THREADS / cores)
    contact: ContactParams = None

    def __post_init__(self):
        if self.h <= 0.0:
            raise ValueError("h must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.n_col < 1:
            raise ValueError("n_col must be >= 1")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must be in [0, 1)")
        if self.eps_det < 0.0:
            raise ValueError("eps_det must be >= 0")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}")
        object.__setattr__(self, "a_ext",
                           tuple(float(v) for v in np.reshape(self.a_ext, 3)))

    @property
    def a_ext_vec(self) -> np.ndarray:
        return np.asarray(self.a_ext)


@dataclass
class SimState:
    """Mutable per-simulation state. x_t/v_t are the committed step-start
    position/velocity, x the current iterate, v_prev the velocity one step
    further back (for the adaptive warm start)."""

    system: System
    x_t: np.ndarray
    v_t: np.ndarray
    v_prev: np.ndarray
    x: np.ndarray
    y: np.ndarray
    step_index: int = 0
    contact_set: ContactSet = None
    carr: object = None
    _x_prev1: np.ndarray = field(default=None, repr=False)
    _x_pp: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.carr is None:
            self.carr = self.system.empty_contacts()


def make_state(system: System, x0=None, v0=None) -> SimState:
    x = np.array(system.rest_positions if x0 is None else x0, dtype=np.float64)
    v = np.zeros_like(x) if v0 is None else np.array(v0, dtype=np.float64)
    if x.shape != (system.num_vertices, 3) or v.shape != x.shape:
        raise ValueError("state arrays must be (N,3)")
    return SimState(system=system, x_t=x.copy(), v_t=v.copy(),
                    v_prev=v.copy(), x=x.copy(), y=x.copy())


def inertia_target(x_t, v_t, a_ext, h: float) -> np.ndarray:
    """y = x_t + h v_t + h^2 a_ext."""
    return np.asarray(x_t) + h * np.asarray(v_t) + h * h * np.asarray(a_ext)


def initialize(state: SimState, params: SolverParams) -> np.ndarray:
    """Warm start the iterate and store it in state.x.

    adaptive blends the external-acceleration term per vertex by
    a_tilde = clamp(a_t . a_ext / |a_ext|^2, 0, 1) with a_t the measured
    acceleration of the previous step, so free fall starts ballistic and
    supported vertices start inertial.
    """
    sys_ = state.system
    h = params.h
    a_ext = params.a_ext_vec
    state.y = inertia_target(state.x_t, state.v_t, a_ext, h)

    mode = params.init_mode
    if mode == "prev_pos":
        x = state.x_t.copy()
    elif mode == "inertia":
        x = state.x_t + h * state.v_t
    elif mode == "inertia_accel":
        x = state.y.copy()
    else:
        norm = float(np.linalg.norm(a_ext))
        if norm == 0.0:
            x = state.x_t + h * state.v_t
        else:
            a_t = (state.v_t - state.v_prev) / h
            comp = a_t @ (a_ext / norm)
            a_tilde = np.clip(comp / norm, 0.0, 1.0)
            x = state.x_t + h * state.v_t + (h * h) * a_tilde[:, None] * a_ext

    kind = sys_.cons.kind
    fixed = kind == FIXED
    x[fixed] = state.x_t[fixed]
    for i in np.flatnonzero(kind == SUBSPACE):
        dim = sys_.cons.sub_dim[i]
        b = sys_.cons.sub_basis[i][:, :dim]
        anchor = sys_.cons.sub_anchor[i]
        x[i] = anchor + b @ (b.T @ (x[i] - anchor))
    state.x = np.ascontiguousarray(x)
    return state.x


def chebyshev_omega(rho: float, n: int) -> float:
    """Semi-iterative weight: omega_1 = 1, omega_2 = 2/(2 - rho^2),
    omega_n = 4 / (4 - rho^2 omega_{n-1})."""
    if n < 1:
        raise ValueError("iteration index must be >= 1")
    if rho == 0.0 or n == 1:
        return 1.0
    omega = 2.0 / (2.0 - rho * rho)
    for _ in range(3, n + 1):
        omega = 4.0 / (4.0 - rho * rho * omega)
    return omega


def _kernel_args(params: SolverParams) -> dict:
    c = params.contact
    return dict(
        line_search=params.line_search,
        eps_det=params.eps_det,
        mu_c=c.mu_c if c is not None else 0.0,
        eps_v=c.eps_v if c is not None else 1e-2,
        n_threads=params.threads if params.threads > 0 else default_threads(),
    )


def color_pass(state: SimState, color_group, params: SolverParams,
               mode: int = 0) -> None:
    """Solve every vertex of the group against the current buffer and merge.

    mode 0 takes full block-Newton steps, mode 1 diagonal-preconditioned
    gradient steps.
    """
    group = np.asarray(color_group, dtype=np.int64)
    get_backend().color_pass(state.system, state.carr, state.x, state.x_t,
                             state.y, params.h, group, mode,
                             **_kernel_args(params))


def local_solve(i: int, state: SimState, params: SolverParams,
                constraints=None):
    """Displacement of the single-vertex solve at vertex i (the main state
    is not modified). `constraints`, when given, overrides the compiled
    constraint set (a list of constraint objects or ConstraintArrays)."""
    sys_ = state.system
    if constraints is not None:
        if not hasattr(constraints, "kind"):
            constraints = compile_constraints(constraints, sys_.num_vertices)
        sys_ = replace(sys_, cons=constraints)
    xc = state.x.copy()
    _numpy_core.color_pass(sys_, state.carr, xc, state.x_t, state.y,
                           params.h, np.array([i], dtype=np.int64), 0,
                           **_kernel_args(params))
    return xc[i] - state.x[i]


def accelerate(state: SimState, omega: float, contact_set=None) -> np.ndarray:
    """Chebyshev blend x <- omega (x - x_pp) + x_pp against the iterate two
    sweeps back. A no-op for omega == 1 and before two sweeps exist;
    flagged colliding vertices keep their unblended position."""
    if omega == 1.0 or state._x_pp is None:
        return state.x
    cs = contact_set if contact_set is not None else state.contact_set
    blended = omega * (state.x - state._x_pp) + state._x_pp
    if cs is not None and cs.colliding_flag.any():
        blended[cs.colliding_flag] = state.x[cs.colliding_flag]
    state.x[...] = blended
    return state.x


def _contacts_on(state: SimState, params: SolverParams) -> bool:
    return (params.contact is not None
            and state.system.collision_mesh is not None
            and len(state.system.collision_mesh.surface_tris) > 0)


def _detect_dcd(state: SimState, params: SolverParams) -> None:
    sys_ = state.system
    state.contact_set = ContactSet(sys_.num_vertices)
    if not _contacts_on(state, params):
        state.carr = sys_.empty_contacts()
        return
    c = params.contact
    mesh = sys_.collision_mesh
    cmap = sys_.collision_map
    xl = state.x_t[cmap]
    vt_pairs, _ = broad_phase(xl, xl, mesh, margin=c.dcd_radius,
                              active=sys_.cons.kind[cmap] != FIXED)
    found = dcd_vertex_triangle(xl, vt_pairs, c.dcd_radius, mesh=mesh,
                                k_c=c.k_c, max_depth=c.max_depth)
    for ct in found:
        ct.indices = cmap[ct.indices]
    state.contact_set.dcd = found
    state.contact_set.mark_flags(state.x_t)
    state.carr = compile_contacts(state.contact_set.contacts, sys_.num_vertices)


def _detect_ccd(state: SimState, params: SolverParams) -> None:
    if not _contacts_on(state, params):
        return
    sys_ = state.system
    c = params.contact
    mesh = sys_.collision_mesh
    cmap = sys_.collision_map
    xs = state.x_t[cmap]
    xe = state.x[cmap]
    vt_pairs, ee_pairs = broad_phase(xs, xe, mesh,
                                     active=sys_.cons.kind[cmap] != FIXED)
    found = ccd_vertex_triangle(xs, xe, vt_pairs, mesh=mesh, k_c=c.k_c)
    found += ccd_edge_edge(xs, xe, ee_pairs, mesh=mesh, k_c=c.k_c)
    for ct in found:
        ct.indices = cmap[ct.indices]
    state.contact_set.update_ccd(found)
    state.contact_set.mark_flags(state.x)
    state.carr = compile_contacts(state.contact_set.contacts, sys_.num_vertices)


def _check_finite(state: SimState, iteration: int) -> None:
    if np.isfinite(state.x).all():
        return
    bad = np.flatnonzero(~np.isfinite(state.x).all(axis=1))
    raise NonFiniteState("non-finite vertex position",
                         step=state.step_index, iteration=iteration,
                         vertex=int(bad[0]))


def step(state: SimState, params: SolverParams, on_iteration=None) -> SimState:
    """Advance one step of size params.h.

    Order per step: inertia target, DCD at x_t, warm start, then n_max
    sweeps (CCD against the current iterate on iterations 1, 1+n_col, ...,
    one pass per color, Chebyshev blend), then the velocity update
    v = (x - x_t)/h.
    """
    sys_ = state.system
    state.y = inertia_target(state.x_t, state.v_t, params.a_ext_vec, params.h)
    _detect_dcd(state, params)
    initialize(state, params)
    state._x_prev1 = state.x.copy()
    state._x_pp = None

    off = sys_.color_off
    for n in range(1, params.n_max + 1):
        if (n - 1) % params.n_col == 0:
            _detect_ccd(state, params)
        for g in range(sys_.colors.num_colors):
            color_pass(state, sys_.color_verts[off[g]:off[g + 1]], params)
        accelerate(state, chebyshev_omega(params.rho, n))
        state._x_pp = state._x_prev1
        state._x_prev1 = state.x.copy()
        _check_finite(state, n)
        if on_iteration is not None:
            on_iteration(state, n)

    v = (state.x - state.x_t) / params.h
    state.v_prev = state.v_t
    state.v_t = v
    state.x_t = state.x.copy()
    state.step_index += 1
    return state


def max_penetration(state: SimState) -> float:
    """Largest positive contact gap d of the active contact set, else 0."""
    cs = state.contact_set
    if cs is None or len(cs) == 0:
        return 0.0
    return max((c.gap(state.x) for c in cs.contacts), default=0.0)
