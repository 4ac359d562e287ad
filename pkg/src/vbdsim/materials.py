"""Per-element energies with exact per-vertex gradients and Hessian blocks.

The hyperelastic model is the stable Neo-Hookean variant without the
logarithmic term,

    Psi = (mu/2)(I_C - 3) + (lambda/2)(J - gamma)^2,  gamma = 1 + mu/lambda,

whose first Piola-Kirchhoff stress is P = mu F + lambda (J - gamma) C with C
the cofactor matrix of F. gamma makes the rest state force-free. Because
det(F) is affine in any single vertex position, the (J - gamma) term
contributes nothing to the per-vertex 3x3 Hessian block, which comes out
exactly as V (mu |w_s|^2 I + lambda (C w_s)(C w_s)^T), symmetric positive
semidefinite with no projection needed.

These are the reference implementations; the compiled solver core repeats the
same arithmetic element by element.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class MaterialParams:
    mu: float          # first Lame coefficient, Pa
    lam: float         # second Lame coefficient, Pa
    k_d: float = 0.0   # Rayleigh-style damping coefficient, seconds

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        if self.lam <= 0.0:
            raise ValueError("lambda must be positive")
        if self.k_d < 0.0:
            raise ValueError("k_d must be >= 0")

    @property
    def gamma(self) -> float:
        return 1.0 + self.mu / self.lam


class ElementDerivatives(NamedTuple):
    """Energy of one element plus force and Hessian block of one vertex."""

    energy: float
    force: np.ndarray    # (3,)
    hessian: np.ndarray  # (3,3), symmetric


class Tet(NamedTuple):
    """One tetrahedral element viewed on its own."""

    indices: np.ndarray         # (4,) vertex ids
    inv_rest_shape: np.ndarray  # (3,3)
    volume: float


class Spring(NamedTuple):
    i: int
    j: int
    rest_length: float
    stiffness: float


def mesh_tet(mesh, t: int) -> Tet:
    return Tet(mesh.tets[t], mesh.inv_rest_shape[t], float(mesh.rest_volumes[t]))


def net_spring(net, s: int) -> Spring:
    i, j = net.indices[s]
    return Spring(int(i), int(j), float(net.rest_length[s]), float(net.stiffness[s]))


def slot_weights(inv_rest_shape: np.ndarray) -> np.ndarray:
    """(4,3) matrix W whose rows w_s satisfy F = sum_s x_s w_s^T.

    Rows 1..3 are the rows of D_m^{-1}; row 0 is their negated sum. The force
    on vertex slot s is then -V P w_s.
    """
    w = np.empty((4, 3))
    w[1:] = inv_rest_shape
    w[0] = -inv_rest_shape.sum(axis=0)
    return w


def deformation_gradient(tet, positions, inv_rest_shape) -> np.ndarray:
    """F = D_s D_m^{-1} for one tet; `tet` is its 4 vertex indices."""
    idx = np.asarray(tet).reshape(4)
    x = np.asarray(positions)[idx]
    d_s = (x[1:] - x[0]).T
    return d_s @ inv_rest_shape


def cofactor(f: np.ndarray) -> np.ndarray:
    """Cofactor matrix of F: columns f2 x f3, f3 x f1, f1 x f2."""
    c = np.empty((3, 3))
    c[:, 0] = np.cross(f[:, 1], f[:, 2])
    c[:, 1] = np.cross(f[:, 2], f[:, 0])
    c[:, 2] = np.cross(f[:, 0], f[:, 1])
    return c


def snh_energy_density(f: np.ndarray, params: MaterialParams) -> float:
    i_c = float(np.sum(f * f))
    j = float(np.linalg.det(f))
    return 0.5 * params.mu * (i_c - 3.0) + 0.5 * params.lam * (j - params.gamma) ** 2


def snh_derivatives(tet: Tet, positions, params: MaterialParams,
                    vertex_slot: int) -> ElementDerivatives:
    """Energy V*Psi plus the exact force and 3x3 Hessian block at one slot."""
    if not 0 <= vertex_slot <= 3:
        raise ValueError("vertex_slot must be in 0..3")
    f = deformation_gradient(tet.indices, positions, tet.inv_rest_shape)
    v = tet.volume
    c = cofactor(f)
    j = float(np.linalg.det(f))
    w = slot_weights(tet.inv_rest_shape)[vertex_slot]

    energy = v * snh_energy_density(f, params)
    p = params.mu * f + params.lam * (j - params.gamma) * c
    force = -v * (p @ w)
    cw = c @ w
    hessian = v * (params.mu * float(w @ w) * np.eye(3)
                   + params.lam * np.outer(cw, cw))
    return ElementDerivatives(energy, force, hessian)


def spring_derivatives(spring: Spring, positions,
                       endpoint_slot: int) -> ElementDerivatives:
    """E = (k/2)(|x_i - x_j| - l0)^2 with exact endpoint derivatives.

    Near-coincident endpoints (length < 1e-12 l0) have no defined direction:
    the force is zeroed and the Hessian falls back to k I.
    """
    if endpoint_slot not in (0, 1):
        raise ValueError("endpoint_slot must be 0 or 1")
    x = np.asarray(positions)
    d = x[spring.i] - x[spring.j]
    length = float(np.linalg.norm(d))
    k, l0 = spring.stiffness, spring.rest_length
    if length < 1e-12 * l0:
        return ElementDerivatives(0.5 * k * l0 * l0, np.zeros(3), k * np.eye(3))

    energy = 0.5 * k * (length - l0) ** 2
    u = d / length
    force_i = -k * (length - l0) * u
    outer = np.outer(u, u)
    hessian = k * (outer + (1.0 - l0 / length) * (np.eye(3) - outer))
    force = force_i if endpoint_slot == 0 else -force_i
    return ElementDerivatives(energy, force, hessian)


def damping_terms(element_hessian, x_i, x_i_prev_step, k_d: float,
                  h: float) -> tuple:
    """Per-element damping: adds (k_d/h) K to the Hessian and
    -(k_d/h) K (x_i - x_i^t) to the force, K being the element's elastic
    Hessian block at the current iterate."""
    if h <= 0.0:
        raise ValueError("h must be positive")
    scale = k_d / h
    k = np.asarray(element_hessian)
    hessian_add = scale * k
    force_add = -scale * (k @ (np.asarray(x_i) - np.asarray(x_i_prev_step)))
    return force_add, hessian_add
