"""Whole-system descent baselines and convergence instrumentation.

All methods minimize the same step objective G (inertia + elastic + contact
penalty + world box; friction and damping are force-level terms and are not
part of G). Newton assembles the PSD-projected global Hessian; block Jacobi
updates every vertex block simultaneously from the previous iterate; gd takes
diagonally preconditioned gradient steps. Jacobi and gd are wrapped every 8
iterations by a global backtracking line search toward the last accepted
checkpoint, which tames their characteristic overshoot divergence.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import spsolve

from ._assembly import assemble_hessian, variational_energy, variational_gradient
from .errors import EmptyDescentRange
from .solver import accelerate, chebyshev_omega, color_pass

_LS_PERIOD = 8
_MAX_HALVINGS = 16


@dataclass
class GlobalSystem:
    """One linearization of G: stacked gradient (3N,) and sparse Hessian."""

    gradient: np.ndarray
    hessian: object


@dataclass
class SolverTrace:
    method: str
    g: np.ndarray        # G at iterations 0..n
    wall_ms: np.ndarray  # cumulative wall clock, wall_ms[0] == 0
    x_final: np.ndarray


def energy(state, params) -> float:
    return variational_energy(state.system, state.x, state.y, params.h,
                              state.contact_set)


def gradient(state, params) -> np.ndarray:
    return variational_gradient(state.system, state.x, state.y, params.h,
                                state.contact_set, zero_fixed=True)


def global_gradient_hessian(state, params, psd_project: bool = True) -> GlobalSystem:
    grad = gradient(state, params).ravel()
    hess = assemble_hessian(state.system, state.x, state.contact_set,
                            psd_project=psd_project, h=params.h, y=state.y)
    return GlobalSystem(gradient=grad, hessian=hess)


def newton_step(state, params):
    """One globalized Newton iteration on G, updating state.x in place.

    Solves the PSD-projected system; on a failed or non-finite solve the
    direction falls back to steepest descent. Backtracks by halving until G
    does not increase; the step is dropped entirely if 16 halvings fail.
    """
    sys_ = state.system
    gs = global_gradient_hessian(state, params, psd_project=True)
    delta = None
    try:
        delta = spsolve(gs.hessian.tocsc(), -gs.gradient)
        if not np.isfinite(delta).all():
            delta = None
    except Exception:
        delta = None
    if delta is None:
        delta = -gs.gradient
    delta = delta.reshape(-1, 3)
    delta[sys_.cons.kind == 1] = 0.0

    g0 = energy(state, params)
    x0 = state.x.copy()
    alpha = 1.0
    for _ in range(_MAX_HALVINGS + 1):
        state.x = x0 + alpha * delta
        if energy(state, params) <= g0:
            return state
        alpha *= 0.5
    state.x = x0
    return state


def block_jacobi_step(state, params):
    """One simultaneous pass of per-vertex block solves (all vertices read
    the previous iterate)."""
    group = np.arange(state.system.num_vertices, dtype=np.int64)
    color_pass(state, group, params, mode=0)
    return state


def gd_step(state, params):
    """One simultaneous pass of diagonally preconditioned gradient steps."""
    group = np.arange(state.system.num_vertices, dtype=np.int64)
    color_pass(state, group, params, mode=1)
    return state


def relative_loss(g_values, g_star: float) -> np.ndarray:
    """(G - G*) / (G_0 - G*) for a recorded trace; raises when the trace
    starts at (or below) the optimum and no descent range exists."""
    g = np.asarray(g_values, dtype=np.float64)
    denom = float(g[0]) - g_star
    if not denom > 0.0:
        raise EmptyDescentRange(
            f"G_0 - G* = {denom:.3e} leaves no descent range")
    return (g - g_star) / denom


def minimize_newton(state, params, tol: float = 1e-10, max_iters: int = 200):
    """Drive Newton until the infinity norm of dG/dx drops below tol.

    Also stops once G stops changing for three consecutive iterations, the
    machine-precision floor on problems whose force scale puts tol out of
    reach. Returns (G, iterations used). Used to produce the reference
    optimum G* for relative-loss reporting."""
    g_prev = energy(state, params)
    stalled = 0
    for k in range(1, max_iters + 1):
        newton_step(state, params)
        g_cur = energy(state, params)
        if np.abs(gradient(state, params)).max() < tol:
            return g_cur, k
        stalled = stalled + 1 if g_cur == g_prev else 0
        if stalled >= 3:
            return g_cur, k
        g_prev = g_cur
    return energy(state, params), max_iters


def _global_line_search(state, params, checkpoint, g_check):
    """Backtrack the accumulated displacement since `checkpoint` until G is
    no worse than the checkpoint energy."""
    direction = state.x - checkpoint
    alpha = 1.0
    for _ in range(_MAX_HALVINGS + 1):
        state.x = checkpoint + alpha * direction
        if energy(state, params) <= g_check:
            return
        alpha *= 0.5
    state.x = checkpoint.copy()


def descend(state, params, method: str, n_iters: int) -> SolverTrace:
    """Run `n_iters` iterations of one solver on the frozen objective of the
    current step (no detection updates) and record G per iteration.

    Methods: vbd, vbd-cheb (Chebyshev-blended sweeps at params.rho), jacobi,
    gd, newton.
    """
    sys_ = state.system
    g_hist = [energy(state, params)]
    wall = [0.0]
    state._x_prev1 = state.x.copy()
    state._x_pp = None
    checkpoint = state.x.copy()
    g_check = g_hist[0]
    off = sys_.color_off
    t0 = time.perf_counter()
    for n in range(1, n_iters + 1):
        if method == "newton":
            newton_step(state, params)
        elif method in ("vbd", "vbd-cheb"):
            for g in range(sys_.colors.num_colors):
                color_pass(state, sys_.color_verts[off[g]:off[g + 1]], params)
            if method == "vbd-cheb":
                accelerate(state, chebyshev_omega(params.rho, n))
            state._x_pp = state._x_prev1
            state._x_prev1 = state.x.copy()
        elif method in ("jacobi", "gd"):
            (block_jacobi_step if method == "jacobi" else gd_step)(state, params)
            if n % _LS_PERIOD == 0:
                _global_line_search(state, params, checkpoint, g_check)
                checkpoint = state.x.copy()
                g_check = energy(state, params)
        else:
            raise ValueError(f"unknown solver {method!r}")
        g_hist.append(energy(state, params))
        wall.append((time.perf_counter() - t0) * 1e3)
    return SolverTrace(method, np.asarray(g_hist), np.asarray(wall),
                       state.x.copy())
