"""Compilation of bodies, constraints and contacts into flat solver arrays.

The solver kernels (compiled or NumPy) work on plain arrays: per-tet slot
weights, per-vertex CSR incidence, per-color vertex lists, per-vertex
constraint data and per-contact geometry. Everything static is compiled once
here; contacts are recompiled whenever the detection passes change the set.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .materials import MaterialParams
from .mesh import (ColorPartition, SpringNet, TetMesh, VertexAdjacency,
                   build_tet_mesh, greedy_color, incidence_from_elements)

FIXED, SUBSPACE = 1, 2


@dataclass(frozen=True)
class Body:
    """One simulated object: a tet mesh with its material, or a spring net.

    For spring nets the stiffness lives on the springs; `material` may be
    None and `k_d` supplies the damping coefficient.
    """

    geometry: object
    material: Optional[MaterialParams] = None
    k_d: float = 0.0


@dataclass(frozen=True)
class FixedConstraint:
    vertex: int


@dataclass(frozen=True)
class SubspaceConstraint:
    """Restrict a vertex to anchor + span(basis), basis 3xL orthonormal."""

    vertex: int
    basis: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=np.float64).reshape(3, -1)
        if b.shape[1] not in (1, 2):
            raise ValueError("subspace dimension must be 1 or 2")
        if np.abs(b.T @ b - np.eye(b.shape[1])).max() > 1e-9:
            raise ValueError("subspace basis columns must be orthonormal")
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "anchor",
                           np.asarray(self.anchor, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class WorldBoxConstraint:
    """Quadratic penalty keeping a vertex inside an axis-aligned box."""

    vertex: int
    lo: np.ndarray
    hi: np.ndarray
    k_b: float

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64).reshape(3))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64).reshape(3))
        if np.any(self.lo >= self.hi):
            raise ValueError("world box must have lo < hi")
        if self.k_b <= 0.0:
            raise ValueError("world box stiffness must be positive")


class ConstraintArrays(NamedTuple):
    kind: np.ndarray        # (N,) uint8: 0 free, 1 fixed, 2 subspace
    sub_dim: np.ndarray     # (N,) int64
    sub_basis: np.ndarray   # (N,3,2)
    sub_anchor: np.ndarray  # (N,3)
    box_k: np.ndarray       # (N,) 0 when inactive
    box_lo: np.ndarray      # (N,3)
    box_hi: np.ndarray      # (N,3)


class ContactArrays(NamedTuple):
    count: int
    idx: np.ndarray       # (C,4) int64
    gamma: np.ndarray     # (C,4) signed weights at detection
    refresh: np.ndarray   # (C,) uint8, 1 = DCD vertex-triangle (refresh bary)
    normal: np.ndarray    # (C,3)
    tangent: np.ndarray   # (C,3,2)
    k_c: np.ndarray       # (C,)
    cv_off: np.ndarray    # (N+1,)
    cv_cid: np.ndarray
    cv_slot: np.ndarray


@dataclass
class System:
    """Static compiled scene: merged vertices, elements, colors, constraints."""

    num_vertices: int
    masses: np.ndarray
    rest_positions: np.ndarray

    tets: np.ndarray            # (T,4)
    tet_w: np.ndarray           # (T,4,3) slot weight rows
    tet_vol: np.ndarray
    tet_mu: np.ndarray
    tet_lam: np.ndarray
    tet_kd: np.ndarray
    t_off: np.ndarray           # vertex->tet CSR
    t_id: np.ndarray
    t_slot: np.ndarray

    springs: np.ndarray         # (S,2)
    sp_l0: np.ndarray
    sp_k: np.ndarray
    sp_kd: np.ndarray
    s_off: np.ndarray           # vertex->spring CSR
    s_id: np.ndarray
    s_slot: np.ndarray

    colors: ColorPartition
    color_off: np.ndarray       # (num_colors+1,)
    color_verts: np.ndarray     # concatenated groups

    cons: ConstraintArrays
    collision_mesh: Optional[TetMesh]
    collision_map: Optional[np.ndarray] = None  # mesh-local -> global vertex id
    bodies: tuple = ()
    body_slices: tuple = ()

    def empty_contacts(self) -> ContactArrays:
        return compile_contacts([], self.num_vertices)


def _slot_weight_rows(inv_rest_shape: np.ndarray) -> np.ndarray:
    t = len(inv_rest_shape)
    w = np.empty((t, 4, 3))
    w[:, 1:, :] = inv_rest_shape
    w[:, 0, :] = -inv_rest_shape.sum(axis=1)
    return w


def _merged_adjacency(num_vertices: int, element_arrays) -> VertexAdjacency:
    """Neighbor CSR over the union of element vertex pairs (for coloring)."""
    pairs = []
    for elements in element_arrays:
        if len(elements) == 0:
            continue
        arity = elements.shape[1]
        pa, pb = np.triu_indices(arity, k=1)
        u = elements[:, pa].ravel()
        v = elements[:, pb].ravel()
        pairs.append(np.stack([np.concatenate([u, v]),
                               np.concatenate([v, u])], axis=1))
    if pairs:
        uniq = np.unique(np.concatenate(pairs), axis=0)
    else:
        uniq = np.zeros((0, 2), dtype=np.int64)
    counts = np.bincount(uniq[:, 0], minlength=num_vertices)
    off = np.zeros(num_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=off[1:])
    empty = np.zeros(0, dtype=np.int64)
    zoff = np.zeros(num_vertices + 1, dtype=np.int64)
    return VertexAdjacency(num_vertices, zoff, empty, empty.copy(),
                           off, np.ascontiguousarray(uniq[:, 1]))


def compile_constraints(constraints, num_vertices: int) -> ConstraintArrays:
    kind = np.zeros(num_vertices, dtype=np.uint8)
    sub_dim = np.zeros(num_vertices, dtype=np.int64)
    sub_basis = np.zeros((num_vertices, 3, 2))
    sub_anchor = np.zeros((num_vertices, 3))
    box_k = np.zeros(num_vertices)
    box_lo = np.zeros((num_vertices, 3))
    box_hi = np.zeros((num_vertices, 3))
    for c in constraints:
        v = int(c.vertex)
        if not 0 <= v < num_vertices:
            raise ValueError(f"constraint vertex {v} out of range")
        if isinstance(c, FixedConstraint):
            kind[v] = FIXED
        elif isinstance(c, SubspaceConstraint):
            if kind[v] == FIXED:
                continue
            kind[v] = SUBSPACE
            dim = c.basis.shape[1]
            sub_dim[v] = dim
            sub_basis[v, :, :dim] = c.basis
            sub_anchor[v] = c.anchor
        elif isinstance(c, WorldBoxConstraint):
            box_k[v] = c.k_b
            box_lo[v] = c.lo
            box_hi[v] = c.hi
        else:
            raise TypeError(f"unknown constraint {type(c)!r}")
    return ConstraintArrays(kind, sub_dim, sub_basis, sub_anchor,
                            box_k, box_lo, box_hi)


def build_system(bodies, constraints=()) -> System:
    """Merge bodies into one flat vertex numbering and compile solver arrays."""
    bodies = tuple(b if isinstance(b, Body) else Body(*b) for b in bodies)
    if not bodies:
        raise ValueError("at least one body required")

    offset = 0
    slices = []
    pos_parts, mass_parts = [], []
    tet_parts, tw_parts, tv_parts = [], [], []
    tmu, tlam, tkd = [], [], []
    sp_parts, sl0, sk, skd = [], [], [], []
    coll_pos, coll_tets, coll_ids = [], [], []
    coll_offset = 0

    for body in bodies:
        g = body.geometry
        n = g.num_vertices
        slices.append(slice(offset, offset + n))
        if isinstance(g, TetMesh):
            if body.material is None:
                raise ValueError("tet mesh bodies need a material")
            pos_parts.append(g.rest_positions)
            mass_parts.append(g.masses)
            tet_parts.append(g.tets + offset)
            tw_parts.append(_slot_weight_rows(g.inv_rest_shape))
            tv_parts.append(g.rest_volumes)
            m = body.material
            tmu.append(np.full(g.num_tets, m.mu))
            tlam.append(np.full(g.num_tets, m.lam))
            tkd.append(np.full(g.num_tets, m.k_d))
            coll_pos.append(g.rest_positions)
            coll_tets.append(g.tets + coll_offset)
            coll_ids.append(np.arange(offset, offset + n, dtype=np.int64))
            coll_offset += n
        elif isinstance(g, SpringNet):
            pos_parts.append(g.particles)
            mass_parts.append(g.masses)
            sp_parts.append(g.indices + offset)
            sl0.append(g.rest_length)
            sk.append(g.stiffness)
            kd = body.material.k_d if body.material is not None else body.k_d
            skd.append(np.full(g.num_springs, kd))
        else:
            raise TypeError(f"unsupported body geometry {type(g)!r}")
        offset += n

    num_vertices = offset
    rest_positions = np.ascontiguousarray(np.concatenate(pos_parts))
    masses = np.ascontiguousarray(np.concatenate(mass_parts))

    def cat(parts, shape, dtype=np.float64):
        if parts:
            return np.ascontiguousarray(np.concatenate(parts).astype(dtype))
        return np.zeros(shape, dtype=dtype)

    tets = cat(tet_parts, (0, 4), np.int64)
    tet_w = cat(tw_parts, (0, 4, 3))
    tet_vol = cat(tv_parts, (0,))
    tet_mu = cat(tmu, (0,))
    tet_lam = cat(tlam, (0,))
    tet_kd = cat(tkd, (0,))
    springs = cat(sp_parts, (0, 2), np.int64)
    sp_l0 = cat(sl0, (0,))
    sp_k = cat(sk, (0,))
    sp_kd = cat(skd, (0,))

    tadj = incidence_from_elements(tets, num_vertices)
    sadj = incidence_from_elements(springs, num_vertices)

    colors = greedy_color(_merged_adjacency(num_vertices, [tets, springs]))
    color_off = np.zeros(colors.num_colors + 1, dtype=np.int64)
    lens = [len(g) for g in colors.groups]
    np.cumsum(lens, out=color_off[1:])
    color_verts = (np.concatenate(colors.groups) if colors.num_colors
                   else np.zeros(0, dtype=np.int64))

    collision_mesh = None
    collision_map = None
    if coll_tets:
        merged_pos = np.concatenate(coll_pos)
        merged_tets = np.concatenate(coll_tets)
        collision_mesh = build_tet_mesh(merged_pos, merged_tets, density=1.0)
        collision_map = np.concatenate(coll_ids)

    cons = compile_constraints(constraints, num_vertices)

    return System(
        num_vertices=num_vertices,
        masses=masses,
        rest_positions=rest_positions,
        tets=tets, tet_w=tet_w, tet_vol=tet_vol,
        tet_mu=tet_mu, tet_lam=tet_lam, tet_kd=tet_kd,
        t_off=tadj.elem_offsets, t_id=tadj.elem_ids, t_slot=tadj.elem_slots,
        springs=springs, sp_l0=sp_l0, sp_k=sp_k, sp_kd=sp_kd,
        s_off=sadj.elem_offsets, s_id=sadj.elem_ids, s_slot=sadj.elem_slots,
        colors=colors, color_off=color_off, color_verts=color_verts,
        cons=cons, collision_mesh=collision_mesh, collision_map=collision_map,
        bodies=bodies, body_slices=tuple(slices),
    )


def compile_contacts(contacts, num_vertices: int) -> ContactArrays:
    c = len(contacts)
    idx = np.zeros((c, 4), dtype=np.int64)
    gamma = np.zeros((c, 4))
    refresh = np.zeros(c, dtype=np.uint8)
    normal = np.zeros((c, 3))
    tangent = np.zeros((c, 3, 2))
    k_c = np.zeros(c)
    for k, ct in enumerate(contacts):
        idx[k] = ct.indices
        gamma[k] = ct.gammas()
        refresh[k] = 1 if (ct.kind == "vt" and ct.source == "dcd") else 0
        normal[k] = ct.normal
        tangent[k] = ct.tangent
        k_c[k] = ct.k_c

    verts = idx.ravel()
    cids = np.repeat(np.arange(c, dtype=np.int64), 4)
    slots = np.tile(np.arange(4, dtype=np.int64), c)
    order = np.lexsort((cids, verts))
    counts = np.bincount(verts, minlength=num_vertices) if c else np.zeros(num_vertices, dtype=np.int64)
    cv_off = np.zeros(num_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=cv_off[1:])
    cv_cid = np.ascontiguousarray(cids[order])
    cv_slot = np.ascontiguousarray(slots[order])
    return ContactArrays(c, idx, gamma, refresh, normal,
                         np.ascontiguousarray(tangent), k_c,
                         cv_off, cv_cid, cv_slot)
