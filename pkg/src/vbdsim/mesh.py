"""Geometry, topology, mass lumping, incidence structures and vertex coloring.

Tet meshes store everything the solver needs precomputed: signed rest volumes,
inverted rest-shape matrices, lumped vertex masses and the oriented boundary
surface. Spring networks are the 1D analogue used for chain scenes. Both are
immutable after construction and safe to share across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTet, IndexOutOfRange

# Faces of a positively oriented tet (v0,v1,v2,v3), wound counterclockwise
# seen from outside the tet.
_TET_FACES = ((0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 3, 2))


@dataclass(frozen=True)
class TetMesh:
    """A tetrahedral mesh with precomputed solver data.

    Fields
    ------
    rest_positions : (N,3) float64, meters
    tets           : (T,4) int64, positively oriented
    surface_tris   : (S,3) int64, outward-oriented boundary faces
    surface_edges  : (E,2) int64, unique edges of the boundary
    rest_volumes   : (T,) float64, all > 0
    inv_rest_shape : (T,3,3) float64, inverse of the rest edge matrix D_m
    masses         : (N,) float64, lumped as density * sum(incident volumes)/4
    density        : float, kg/m^3
    """

    rest_positions: np.ndarray
    tets: np.ndarray
    surface_tris: np.ndarray
    surface_edges: np.ndarray
    rest_volumes: np.ndarray
    inv_rest_shape: np.ndarray
    masses: np.ndarray
    density: float

    @property
    def num_vertices(self) -> int:
        return len(self.rest_positions)

    @property
    def num_tets(self) -> int:
        return len(self.tets)

    def bbox_diagonal(self) -> float:
        lo = self.rest_positions.min(axis=0)
        hi = self.rest_positions.max(axis=0)
        return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class SpringNet:
    """Particles joined by linear springs.

    springs row s is (indices[s], rest_length[s], stiffness[s]) with
    indices[s] = (i, j), i != j, rest_length > 0, stiffness >= 0.
    """

    particles: np.ndarray      # (P,3) rest positions
    indices: np.ndarray        # (S,2) int64
    rest_length: np.ndarray    # (S,) float64
    stiffness: np.ndarray      # (S,) float64
    masses: np.ndarray         # (P,) float64

    @property
    def num_vertices(self) -> int:
        return len(self.particles)

    @property
    def num_springs(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class VertexAdjacency:
    """Per-vertex incidence in CSR form.

    For vertex i, elem_ids[elem_offsets[i]:elem_offsets[i+1]] are the force
    elements touching i (the set F_i) and elem_slots holds i's slot inside
    each element. neighbor_ids lists the distinct vertices sharing an element
    with i, ascending.
    """

    num_vertices: int
    elem_offsets: np.ndarray
    elem_ids: np.ndarray
    elem_slots: np.ndarray
    neighbor_offsets: np.ndarray
    neighbor_ids: np.ndarray

    def elements_of(self, i: int) -> np.ndarray:
        return self.elem_ids[self.elem_offsets[i]:self.elem_offsets[i + 1]]

    def neighbors_of(self, i: int) -> np.ndarray:
        return self.neighbor_ids[self.neighbor_offsets[i]:self.neighbor_offsets[i + 1]]

    def degree(self, i: int) -> int:
        return int(self.neighbor_offsets[i + 1] - self.neighbor_offsets[i])


@dataclass(frozen=True)
class ColorPartition:
    """Vertex coloring.  No static force element may use two vertices of the
    same color, so each group can be updated in parallel."""

    color_of: np.ndarray          # (N,) int64
    groups: tuple                 # per-color int64 arrays, ascending inside
    num_colors: int

    def group(self, c: int) -> np.ndarray:
        return self.groups[c]


def _tet_volumes(positions: np.ndarray, tets: np.ndarray) -> np.ndarray:
    d = positions[tets[:, 1:]] - positions[tets[:, :1]]
    # signed volume = det([e1 e2 e3]) / 6 with edges as columns
    return np.linalg.det(np.swapaxes(d, 1, 2)) / 6.0


def build_tet_mesh(rest_positions, tets, density: float) -> TetMesh:
    """Assemble a TetMesh from raw vertices and connectivity.

    Negatively oriented tets are fixed up by swapping two indices. Raises
    DegenerateTet when any tet's |volume| <= 1e-12 * diag^3 and
    IndexOutOfRange for invalid connectivity.
    """
    pos = np.ascontiguousarray(rest_positions, dtype=np.float64)
    tets = np.ascontiguousarray(tets, dtype=np.int64)
    if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) < 4:
        raise ValueError("rest_positions must be (N,3) with N >= 4")
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise ValueError("tets must be (T,4)")
    if density <= 0.0:
        raise ValueError("density must be positive")
    n = len(pos)
    if tets.size and (tets.min() < 0 or tets.max() >= n):
        raise IndexOutOfRange(f"tet index outside [0,{n})")

    vol = _tet_volumes(pos, tets)
    flip = vol < 0.0
    if np.any(flip):
        tets = tets.copy()
        tets[flip] = tets[flip][:, [0, 2, 1, 3]]
        vol = np.abs(vol)
    diag = float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))
    if np.any(vol <= 1e-12 * diag**3):
        bad = int(np.argmin(vol))
        raise DegenerateTet(f"tet {bad} has volume {vol[bad]:.3e}")

    d_m = np.swapaxes(pos[tets[:, 1:]] - pos[tets[:, :1]], 1, 2)
    inv_rest_shape = np.linalg.inv(d_m)

    masses = np.zeros(n)
    np.add.at(masses, tets.ravel(), np.repeat(density * vol / 4.0, 4))

    surface_tris = _extract_surface(tets)
    surface_edges = _surface_edges(surface_tris)

    for a in (pos, tets, surface_tris, surface_edges, vol, inv_rest_shape, masses):
        a.setflags(write=False)
    return TetMesh(pos, tets, surface_tris, surface_edges, vol,
                   inv_rest_shape, masses, float(density))


def _extract_surface(tets: np.ndarray) -> np.ndarray:
    """Boundary faces: those belonging to exactly one tet, outward-wound."""
    faces = np.concatenate([tets[:, f] for f in _TET_FACES])
    key = np.sort(faces, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    boundary = faces[first[counts == 1]]
    # stable order: sort rows lexicographically for reproducible output
    order = np.lexsort((boundary[:, 2], boundary[:, 1], boundary[:, 0]))
    return np.ascontiguousarray(boundary[order])


def _surface_edges(surface_tris: np.ndarray) -> np.ndarray:
    if len(surface_tris) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([surface_tris[:, [0, 1]], surface_tris[:, [1, 2]],
                        surface_tris[:, [2, 0]]])
    e = np.unique(np.sort(e, axis=1), axis=0)
    return np.ascontiguousarray(e)


def build_spring_net(particles, springs, masses) -> SpringNet:
    """springs rows are (i, j, rest_length, stiffness)."""
    particles = np.ascontiguousarray(particles, dtype=np.float64)
    masses = np.ascontiguousarray(masses, dtype=np.float64)
    springs = np.asarray(springs, dtype=np.float64).reshape(-1, 4)
    idx = springs[:, :2].astype(np.int64)
    l0 = np.ascontiguousarray(springs[:, 2])
    k = np.ascontiguousarray(springs[:, 3])
    n = len(particles)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexOutOfRange(f"spring index outside [0,{n})")
    if np.any(idx[:, 0] == idx[:, 1]):
        raise ValueError("spring endpoints must be distinct")
    if np.any(l0 <= 0.0):
        raise ValueError("rest lengths must be positive")
    if np.any(k < 0.0):
        raise ValueError("stiffness must be >= 0")
    if np.any(masses <= 0.0):
        raise ValueError("masses must be positive")
    idx = np.ascontiguousarray(idx)
    for a in (particles, idx, l0, k, masses):
        a.setflags(write=False)
    return SpringNet(particles, idx, l0, k, masses)


def _element_array(mesh_or_net) -> tuple:
    if isinstance(mesh_or_net, TetMesh):
        return mesh_or_net.tets, mesh_or_net.num_vertices
    if isinstance(mesh_or_net, SpringNet):
        return mesh_or_net.indices, mesh_or_net.num_vertices
    raise TypeError(f"unsupported mesh type {type(mesh_or_net)!r}")


def incidence(mesh_or_net) -> VertexAdjacency:
    """Build the F_i lists (incident elements) and vertex neighbor lists."""
    elements, n = _element_array(mesh_or_net)
    return incidence_from_elements(elements, n)


def incidence_from_elements(elements: np.ndarray, num_vertices: int) -> VertexAdjacency:
    elements = np.asarray(elements, dtype=np.int64)
    n = num_vertices
    if elements.size == 0:
        z = np.zeros(n + 1, dtype=np.int64)
        e = np.zeros(0, dtype=np.int64)
        return VertexAdjacency(n, z, e, e.copy(), z.copy(), e.copy())
    num_elems, arity = elements.shape

    verts = elements.ravel()
    eids = np.repeat(np.arange(num_elems, dtype=np.int64), arity)
    slots = np.tile(np.arange(arity, dtype=np.int64), num_elems)
    # CSR by vertex; secondary key element id keeps per-vertex order stable
    order = np.lexsort((eids, verts))
    counts = np.bincount(verts, minlength=n)
    elem_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=elem_offsets[1:])
    elem_ids = np.ascontiguousarray(eids[order])
    elem_slots = np.ascontiguousarray(slots[order])

    # neighbors: all ordered pairs within an element, deduplicated
    pa, pb = np.triu_indices(arity, k=1)
    u = elements[:, pa].ravel()
    v = elements[:, pb].ravel()
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
    ncounts = np.bincount(pairs[:, 0], minlength=n)
    neighbor_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(ncounts, out=neighbor_offsets[1:])
    neighbor_ids = np.ascontiguousarray(pairs[:, 1])

    for a in (elem_offsets, elem_ids, elem_slots, neighbor_offsets, neighbor_ids):
        a.setflags(write=False)
    return VertexAdjacency(n, elem_offsets, elem_ids, elem_slots,
                           neighbor_offsets, neighbor_ids)


def greedy_color(adjacency: VertexAdjacency, order=None) -> ColorPartition:
    """Greedy vertex coloring; no element may repeat a color.

    order defaults to descending degree with ties by index, which keeps the
    color count small on tet meshes. Pure function of (adjacency, order).
    """
    n = adjacency.num_vertices
    if order is None:
        deg = np.diff(adjacency.neighbor_offsets)
        order = np.lexsort((np.arange(n), -deg))
    else:
        order = np.asarray(order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(n)):
            raise ValueError("order must be a permutation of all vertices")

    color_of = np.full(n, -1, dtype=np.int64)
    noff, nids = adjacency.neighbor_offsets, adjacency.neighbor_ids
    for i in order:
        used = color_of[nids[noff[i]:noff[i + 1]]]
        used = used[used >= 0]
        c = 0
        if used.size:
            taken = np.zeros(used.max() + 2, dtype=bool)
            taken[used] = True
            c = int(np.argmin(taken))
        color_of[i] = c

    num_colors = int(color_of.max()) + 1 if n else 0
    groups = tuple(np.flatnonzero(color_of == c) for c in range(num_colors))
    color_of.setflags(write=False)
    for g in groups:
        g.setflags(write=False)
    return ColorPartition(color_of, groups, num_colors)


def load_node_ele(node_path, ele_path) -> tuple:
    """Read `.node`/`.ele` style text files with 0-based indices.

    Each node line is `index x y z`; each ele line is `index v0 v1 v2 v3`.
    Blank lines and lines starting with `#` are skipped. Returns
    (positions, tets) ready for build_tet_mesh.
    """
    def rows(path, width):
        out = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                parts = s.split()
                if len(parts) < width:
                    raise ValueError(f"{path}:{lineno}: expected {width} columns")
                out.append(parts[:width])
        return out

    node_rows = rows(node_path, 4)
    positions = np.array([[float(c) for c in r[1:]] for r in node_rows])
    index = np.array([int(float(r[0])) for r in node_rows])
    if not np.array_equal(index, np.arange(len(index))):
        raise ValueError(f"{node_path}: node indices must be 0..N-1 in order")

    ele_rows = rows(ele_path, 5)
    tets = np.array([[int(float(c)) for c in r[1:]] for r in ele_rows], dtype=np.int64)
    return positions, tets.reshape(-1, 4)
