"""Collision detection and contact/friction force elements.

Detection is two-phase. The broad phase hashes swept AABBs of surface
primitives into a uniform grid and reports vertex-triangle and edge-edge
candidates that do not share a vertex. Narrow phases build Contact records:
DCD finds vertices within a radius of (or behind) a surface triangle, CCD
finds the earliest coplanarity root of linear trajectories and validates it
by containment.

A contact stores a frozen unit normal n_hat, a frozen orthonormal tangent
basis T, barycentric weights locating the two contact points x_a, x_b on
their primitives, and step-start anchors. The penalty energy is
E_c = 1/2 k_c d^2 with d = max(0, (x_b - x_a) . n_hat), differentiated with
n_hat and the weights held fixed. Friction follows the smoothed Coulomb
model: the tangential displacement relative to the step start is projected
into the contact plane and resisted up to mu_c times the current normal
force, with a quadratic ramp f1 blending static into dynamic friction below
the slip threshold eps_v * h.
"""

from dataclasses import dataclass, field

import numpy as np

from .materials import ElementDerivatives

# sign pattern turning per-primitive weights into d(x_a - x_b)/dx_v factors
_GAMMA_SIGN = {"vt": np.array([1.0, -1.0, -1.0, -1.0]),
               "ee": np.array([1.0, 1.0, -1.0, -1.0])}


@dataclass(frozen=True)
class FrictionParams:
    mu_c: float   # Coulomb friction coefficient, >= 0
    eps_v: float  # slip-speed threshold, m/s, > 0

    def __post_init__(self):
        if self.mu_c < 0.0:
            raise ValueError("mu_c must be >= 0")
        if self.eps_v <= 0.0:
            raise ValueError("eps_v must be positive")


@dataclass
class Contact:
    """One vertex-triangle or edge-edge contact pair.

    indices lists 4 vertex ids: (vertex, tri0, tri1, tri2) for "vt",
    (a0, a1, b0, b1) for "ee". bary holds the per-primitive weights
    (1, b0, b1, b2) resp. (1-s, s, 1-t, t); normal and tangent are frozen at
    detection; anchors are the contact points at step start. source is
    "dcd" or "ccd" (DCD contacts refresh their weights during the step).
    """

    kind: str
    indices: np.ndarray
    bary: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    k_c: float
    anchor_a: np.ndarray
    anchor_b: np.ndarray
    source: str = "dcd"
    toi: float | None = None

    def gammas(self) -> np.ndarray:
        """Signed weights g_v with d(x_a - x_b)/dx_v = g_v I."""
        return self.bary * _GAMMA_SIGN[self.kind]

    def gap(self, positions) -> float:
        """Current d = max(0, (x_b - x_a) . n_hat)."""
        x = np.asarray(positions)
        sep = -(self.gammas()[:, None] * x[self.indices]).sum(axis=0)
        return max(0.0, float(sep @ self.normal))

    def key(self) -> tuple:
        return (self.kind, tuple(int(i) for i in self.indices))


@dataclass
class ContactSet:
    """All active contacts of one time step.

    The DCD sublist is built once at step start; the CCD sublist is rebuilt
    at every CCD pass. colliding_flag is sticky: once a vertex is marked it
    stays marked until the step ends (it is exempted from the acceleration
    blend for the rest of the step).
    """

    num_vertices: int
    dcd: list = field(default_factory=list)
    ccd: list = field(default_factory=list)
    colliding_flag: np.ndarray = None

    def __post_init__(self):
        if self.colliding_flag is None:
            self.colliding_flag = np.zeros(self.num_vertices, dtype=bool)

    @property
    def contacts(self) -> list:
        return self.dcd + self.ccd

    def __len__(self):
        return len(self.dcd) + len(self.ccd)

    def update_ccd(self, contacts) -> None:
        """Replace the CCD sublist, dropping pairs already tracked by DCD."""
        seen = {c.key() for c in self.dcd}
        self.ccd = [c for c in contacts if c.key() not in seen]

    def mark_flags(self, positions) -> None:
        """Flag vertices of contacts that currently push (d > 0) and of all
        CCD contacts (their crossing is inside the step)."""
        for c in self.dcd:
            if c.gap(positions) > 0.0:
                self.colliding_flag[c.indices] = True
        for c in self.ccd:
            self.colliding_flag[c.indices] = True

    def incidence_of(self, i: int) -> list:
        out = []
        for cid, c in enumerate(self.contacts):
            for slot in range(4):
                if c.indices[slot] == i:
                    out.append((cid, slot))
        return out


def tangent_basis(normal: np.ndarray) -> np.ndarray:
    """3x2 orthonormal basis of the plane orthogonal to `normal`.

    Pivot-free: crosses the normal with the coordinate axis of its
    smallest-magnitude component.
    """
    n = np.asarray(normal, dtype=np.float64)
    axis = np.zeros(3)
    axis[np.argmin(np.abs(n))] = 1.0
    t1 = np.cross(n, axis)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    t2 /= np.linalg.norm(t2)
    return np.stack([t1, t2], axis=1)


def closest_point_triangle(p, a, b, c) -> tuple:
    """Closest point on triangle abc to p and its barycentric weights.

    Standard Voronoi-region walk: test the three vertex regions, the three
    edge regions, then fall through to the face interior.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a.copy(), np.array([1.0, 0.0, 0.0])
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b.copy(), np.array([0.0, 1.0, 0.0])
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab, np.array([1.0 - v, v, 0.0])
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c.copy(), np.array([0.0, 0.0, 1.0])
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac, np.array([1.0 - w, 0.0, w])
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b), np.array([0.0, 1.0 - w, w])
    denom = 1.0 / (va + vb + vc)
    v, w = vb * denom, vc * denom
    return a + ab * v + ac * w, np.array([1.0 - v - w, v, w])


def closest_params_edge_edge(p1, q1, p2, q2) -> tuple:
    """Closest-point parameters (s, t) of segments p1q1, p2q2, clamped."""
    d1, d2 = q1 - p1, q2 - p2
    r = p1 - p2
    a, e = d1 @ d1, d2 @ d2
    b, c, f = d1 @ d2, d1 @ r, d2 @ r
    denom = a * e - b * b
    s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0)) if denom > 1e-30 else 0.0
    t = (b * s + f) / e if e > 1e-30 else 0.0
    if t < 0.0:
        t = 0.0
        s = float(np.clip(-c / a, 0.0, 1.0)) if a > 1e-30 else 0.0
    elif t > 1.0:
        t = 1.0
        s = float(np.clip((b - c) / a, 0.0, 1.0)) if a > 1e-30 else 0.0
    return s, float(t)


def mean_surface_edge_length(mesh) -> float:
    if len(mesh.surface_edges) == 0:
        return float(mesh.bbox_diagonal()) or 1.0
    e = mesh.rest_positions[mesh.surface_edges]
    return float(np.linalg.norm(e[:, 1] - e[:, 0], axis=1).mean())


def _grid_cell_size(mesh) -> float:
    """Hash cell size: 1.5x the median rest surface edge length.

    The median resists a handful of very long boundary edges (e.g. a large
    flat ground slab) that would otherwise blow up the cell size and pile
    every primitive of a finely meshed body into one cell.
    """
    if len(mesh.surface_edges) == 0:
        return float(mesh.bbox_diagonal()) or 1.0
    e = mesh.rest_positions[mesh.surface_edges]
    return 1.5 * float(np.median(np.linalg.norm(e[:, 1] - e[:, 0], axis=1)))


def _cell_range(lo, hi, cell):
    return (np.floor(lo / cell).astype(np.int64),
            np.floor(hi / cell).astype(np.int64))


_CELL_BITS = 21
_CELL_MASK = (1 << _CELL_BITS) - 1


def _expand_cells(lo, hi):
    """Flatten integer cell ranges into (packed key, owner) arrays.

    Keys pack the three cell coordinates into 21-bit fields of one int64;
    wraparound collisions only widen the candidate set, never lose a pair.
    """
    cnt = hi - lo + 1
    per = cnt.prod(axis=1)
    total = int(per.sum())
    owner = np.repeat(np.arange(len(lo), dtype=np.int64), per)
    base = np.repeat(np.cumsum(per) - per, per)
    j = np.arange(total, dtype=np.int64) - base
    nyz = np.repeat(cnt[:, 1] * cnt[:, 2], per)
    nz = np.repeat(cnt[:, 2], per)
    jx = j // nyz
    rem = j - jx * nyz
    jy = rem // nz
    jz = rem - jy * nz
    ix = np.repeat(lo[:, 0], per) + jx
    iy = np.repeat(lo[:, 1], per) + jy
    iz = np.repeat(lo[:, 2], per) + jz
    keys = (((ix & _CELL_MASK) << (2 * _CELL_BITS))
            | ((iy & _CELL_MASK) << _CELL_BITS) | (iz & _CELL_MASK))
    return keys, owner


def _grid_join(qkeys, qowner, tkeys, towner):
    """All (query, target) owner pairs whose cells coincide."""
    order = np.argsort(tkeys, kind="stable")
    tk, to = tkeys[order], towner[order]
    uk, start = np.unique(tk, return_index=True)
    counts = np.diff(np.append(start, len(tk)))
    if len(uk) == 0 or len(qkeys) == 0:
        return (np.zeros(0, dtype=np.int64),) * 2
    pos = np.clip(np.searchsorted(uk, qkeys), 0, len(uk) - 1)
    hit = uk[pos] == qkeys
    q, g = qowner[hit], pos[hit]
    c, s = counts[g], start[g]
    total = int(c.sum())
    base = np.repeat(np.cumsum(c) - c, c)
    flat = np.arange(total, dtype=np.int64) - base + np.repeat(s, c)
    return np.repeat(q, c), to[flat]


def _dedupe_pairs(a, b, width):
    """Unique ascending (a, b) rows via packed codes; width > max(b)."""
    code = np.unique(a * width + b)
    return np.stack([code // width, code % width], axis=1)


def broad_phase(positions_start, positions_end, mesh, margin: float = 0.0,
                active=None) -> tuple:
    """Candidate (vertex, triangle) and (edge, edge) pairs from swept AABBs.

    Uniform spatial hash keyed on the median rest surface edge length;
    every primitive AABB covers its motion from start to end plus
    `margin`. Pairs sharing a vertex are excluded, as are pairs none of
    whose vertices appear in the optional `active` mask (contacts between
    fully constrained primitives exert no force on any degree of freedom).
    Output is sorted for deterministic downstream processing.
    """
    xs = np.asarray(positions_start)
    xe = np.asarray(positions_end)
    tris = mesh.surface_tris
    edges = mesh.surface_edges
    if len(tris) == 0:
        return (np.zeros((0, 2), dtype=np.int64),) * 2

    cell = _grid_cell_size(mesh)
    pad = margin + 1e-12 * cell

    tri_lo = np.minimum(xs[tris].min(axis=1), xe[tris].min(axis=1)) - pad
    tri_hi = np.maximum(xs[tris].max(axis=1), xe[tris].max(axis=1)) + pad
    t_keys, t_own = _expand_cells(*_cell_range(tri_lo, tri_hi, cell))

    surf_verts = np.unique(tris)
    v_lo = np.minimum(xs[surf_verts], xe[surf_verts]) - pad
    v_hi = np.maximum(xs[surf_verts], xe[surf_verts]) + pad
    v_keys, v_own = _expand_cells(*_cell_range(v_lo, v_hi, cell))

    k, t = _grid_join(v_keys, v_own, t_keys, t_own)
    if len(k):
        pairs = _dedupe_pairs(k, t, len(tris))
        k, t = pairs[:, 0], pairs[:, 1]
        v = surf_verts[k]
        keep = ((tris[t] != v[:, None]).all(axis=1)
                & (tri_lo[t] <= v_hi[k]).all(axis=1)
                & (v_lo[k] <= tri_hi[t]).all(axis=1))
        if active is not None:
            act = np.asarray(active, dtype=bool)
            keep &= act[v] | act[tris[t]].any(axis=1)
        vt = np.stack([v[keep], t[keep]], axis=1)
    else:
        vt = np.zeros((0, 2), dtype=np.int64)

    if len(edges) == 0:
        return vt, np.zeros((0, 2), dtype=np.int64)
    edge_lo = np.minimum(xs[edges].min(axis=1), xe[edges].min(axis=1)) - pad
    edge_hi = np.maximum(xs[edges].max(axis=1), xe[edges].max(axis=1)) + pad
    e_keys, e_own = _expand_cells(*_cell_range(edge_lo, edge_hi, cell))
    e, o = _grid_join(e_keys, e_own, e_keys, e_own)
    asc = e < o
    e, o = e[asc], o[asc]
    if len(e):
        pairs = _dedupe_pairs(e, o, len(edges))
        e, o = pairs[:, 0], pairs[:, 1]
        shared = (edges[e][:, :, None] == edges[o][:, None, :]).any(axis=(1, 2))
        keep = (~shared
                & (edge_lo[o] <= edge_hi[e]).all(axis=1)
                & (edge_lo[e] <= edge_hi[o]).all(axis=1))
        if active is not None:
            act = np.asarray(active, dtype=bool)
            keep &= act[edges[e]].any(axis=1) | act[edges[o]].any(axis=1)
        ee = np.stack([e[keep], o[keep]], axis=1)
    else:
        ee = np.zeros((0, 2), dtype=np.int64)
    return vt, ee


def _closest_point_triangle_batch(p, a, b, c):
    """Vectorized closest_point_triangle over row-aligned point arrays.

    Same Voronoi-region walk; np.select takes the first matching region so
    the branch order (and hence every tie break) matches the scalar code.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = (ab * ap).sum(-1), (ac * ap).sum(-1)
    bp = p - b
    d3, d4 = (ab * bp).sum(-1), (ac * bp).sum(-1)
    cp = p - c
    d5, d6 = (ab * cp).sum(-1), (ac * cp).sum(-1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
    v_in, w_in = vb * denom, vc * denom
    conds = [(d1 <= 0.0) & (d2 <= 0.0),
             (d3 >= 0.0) & (d4 <= d3),
             (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0),
             (d6 >= 0.0) & (d5 <= d6),
             (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0),
             (va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0)]
    zero = np.zeros_like(d1)
    one = np.ones_like(d1)
    bary_choices = [
        (one, zero, zero), (zero, one, zero), (1.0 - v_ab, v_ab, zero),
        (zero, zero, one), (1.0 - w_ac, zero, w_ac), (zero, 1.0 - w_bc, w_bc)]
    bary_default = (1.0 - v_in - w_in, v_in, w_in)
    bary = np.stack([np.select(conds, ch, df)
                     for ch, df in zip(zip(*bary_choices), bary_default)], axis=-1)
    q_choices = [a, b, a + v_ab[..., None] * ab, c, a + w_ac[..., None] * ac,
                 b + w_bc[..., None] * (c - b)]
    q_default = a + ab * v_in[..., None] + ac * w_in[..., None]
    q = np.select([cd[..., None] for cd in conds], q_choices, q_default)
    return q, bary


def dcd_vertex_triangle(positions, pairs, radius: float, mesh=None, k_c: float = 1.0,
                        max_depth: float = None) -> list:
    """Discrete vertex-triangle contacts.

    A pair becomes a contact when the vertex is within `radius` of the
    triangle or behind its (outward) plane with the in-plane projection
    inside the triangle. n_hat is the triangle's current outward normal,
    x_b the closest point. `max_depth`, when set, discards behind-plane
    hits deeper than that bound (they are almost surely the far side of the
    object, not a real contact). pairs are (vertex_id, surface_tri_id) and
    need `mesh` for the triangle connectivity, or (vertex, t0, t1, t2) rows.
    """
    x = np.asarray(positions, dtype=np.float64)
    out = []
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.size == 0:
        return out
    if pairs.shape[1] == 2:
        tri_ids = mesh.surface_tris[pairs[:, 1]]
        rows = np.concatenate([pairs[:, :1], tri_ids], axis=1)
    else:
        rows = pairs
    a, b, c, p = x[rows[:, 1]], x[rows[:, 2]], x[rows[:, 3]], x[rows[:, 0]]
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n, axis=-1)
    scale = np.maximum(np.maximum(np.linalg.norm(b - a, axis=-1),
                                  np.linalg.norm(c - a, axis=-1)), 1e-30)
    good = nn >= 1e-12 * scale * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        n = n / nn[:, None]
    q, bary = _closest_point_triangle_batch(p, a, b, c)
    dist = np.linalg.norm(p - q, axis=-1)
    signed = ((p - a) * n).sum(-1)
    # behind the plane with the projection inside <=> the closest point
    # is the orthogonal projection, i.e. dist == |signed|
    behind = (signed < 0.0) & (dist <= np.abs(signed) * (1.0 + 1e-9) + 1e-15)
    accept = good & ((dist <= radius) | behind)
    if max_depth is not None:
        accept &= ~(behind & (-signed > max_depth))
    for i in np.flatnonzero(accept):
        out.append(Contact(
            kind="vt",
            indices=rows[i].copy(),
            bary=np.array([1.0, *bary[i]]),
            normal=n[i],
            tangent=tangent_basis(n[i]),
            k_c=k_c,
            anchor_a=p[i].copy(),
            anchor_b=q[i].copy(),
            source="dcd",
        ))
    return out


def _cubic_coeffs_coplanar(u0, u1, v0, v1, w0, w1):
    """Coefficients c0..c3 of ((u0+t u1) x (v0+t v1)) . (w0+t w1)."""
    q0 = np.cross(u0, v0)
    q1 = np.cross(u0, v1) + np.cross(u1, v0)
    q2 = np.cross(u1, v1)
    return (q0 @ w0,
            q0 @ w1 + q1 @ w0,
            q1 @ w1 + q2 @ w0,
            q2 @ w1)


def _real_roots_unit(c0, c1, c2, c3, slack=1e-10):
    """Real roots of the cubic inside [0,1] (small slack), ascending."""
    coeffs = np.array([c3, c2, c1, c0])
    lead = np.abs(coeffs).max()
    if lead == 0.0:
        return []
    coeffs = coeffs / lead
    nz = np.flatnonzero(np.abs(coeffs) > 1e-14)
    if len(nz) == 0 or nz[0] == 3:
        return []
    roots = np.roots(coeffs[nz[0]:])
    real = roots[np.abs(roots.imag) < 1e-8].real
    real = real[(real > -slack) & (real < 1.0 + slack)]
    return sorted(np.clip(real, 0.0, 1.0).tolist())


def _bisect_root(f, t, width=1e-3, iters=20):
    """Refine an analytic root by bisection when a sign change brackets it."""
    lo, hi = max(0.0, t - width), min(1.0, t + width)
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0 or np.sign(flo) == np.sign(fhi):
        return t
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _coeffs_batch(u0, u1, v0, v1, w0, w1):
    """Row-wise coefficients c0..c3 of ((u0+t u1) x (v0+t v1)) . (w0+t w1)."""
    q0 = np.cross(u0, v0)
    q1 = np.cross(u0, v1) + np.cross(u1, v0)
    q2 = np.cross(u1, v1)
    return ((q0 * w0).sum(-1),
            (q0 * w1).sum(-1) + (q1 * w0).sum(-1),
            (q1 * w1).sum(-1) + (q2 * w0).sum(-1),
            (q2 * w1).sum(-1))


def _coplanar_eval(u0, u1, v0, v1, w0, w1, t):
    """Coplanarity function at times t (rows x roots) for row-wise inputs."""
    tt = t[..., None]
    ut = u0[:, None, :] + tt * u1[:, None, :]
    vt = v0[:, None, :] + tt * v1[:, None, :]
    wt = w0[:, None, :] + tt * w1[:, None, :]
    return (np.cross(ut, vt) * wt).sum(-1)


def _roots_unit_batch(c0, c1, c2, c3, slack=1e-10):
    """Real roots in [0,1] per row, ascending, padded with inf.

    Mirrors _real_roots_unit: coefficients are max-normalized, near-zero
    leading terms drop the degree, remaining roots come from companion
    matrix eigenvalues (batched for the cubic and quadratic groups).
    """
    coeffs = np.stack([c3, c2, c1, c0], axis=1)
    n = len(coeffs)
    lead = np.abs(coeffs).max(axis=1)
    ok = lead > 0.0
    cn = np.zeros_like(coeffs)
    cn[ok] = coeffs[ok] / lead[ok, None]
    big = np.abs(cn) > 1e-14
    nz0 = np.where(big.any(axis=1), big.argmax(axis=1), 3)
    raw = np.full((n, 3), np.inf, dtype=np.complex128)
    deg3 = ok & (nz0 == 0)
    if deg3.any():
        cc = cn[deg3]
        comp = np.zeros((len(cc), 3, 3))
        comp[:, 0, :] = -cc[:, 1:] / cc[:, :1]
        comp[:, 1, 0] = comp[:, 2, 1] = 1.0
        raw[deg3] = np.linalg.eigvals(comp)
    deg2 = ok & (nz0 == 1)
    if deg2.any():
        cc = cn[deg2]
        comp = np.zeros((len(cc), 2, 2))
        comp[:, 0, :] = -cc[:, 2:] / cc[:, 1:2]
        comp[:, 1, 0] = 1.0
        raw[deg2, :2] = np.linalg.eigvals(comp)
    deg1 = ok & (nz0 == 2)
    if deg1.any():
        raw[deg1, 0] = -cn[deg1, 3] / cn[deg1, 2]
    real = np.where(np.abs(raw.imag) < 1e-8, raw.real, np.inf)
    keep = (real > -slack) & (real < 1.0 + slack)
    real = np.where(keep, np.clip(real, 0.0, 1.0), np.inf)
    real.sort(axis=1)
    return real


def _bisect_batch(feval, t, valid, width=1e-3, iters=20):
    """Vectorized _bisect_root over a (rows x roots) time array."""
    tq = np.where(valid, t, 0.0)
    lo = np.maximum(0.0, tq - width)
    hi = np.minimum(1.0, tq + width)
    flo, fhi = feval(lo), feval(hi)
    out = tq.copy()
    done = flo == 0.0
    out = np.where(done, lo, out)
    refine = valid & ~done & (fhi != 0.0) & (np.sign(flo) != np.sign(fhi))
    slo = np.sign(flo)
    for _ in range(iters):
        if not refine.any():
            break
        mid = 0.5 * (lo + hi)
        fm = feval(mid)
        hit = refine & (fm == 0.0)
        out = np.where(hit, mid, out)
        refine &= ~hit
        same = np.sign(fm) == slo
        lo = np.where(refine & same, mid, lo)
        hi = np.where(refine & ~same, mid, hi)
    return np.where(refine, 0.5 * (lo + hi), out)


def ccd_vertex_triangle(x_start, x_end, pairs, mesh=None, k_c: float = 1.0,
                        bary_tol: float = 1e-8) -> list:
    """Earliest vertex-triangle crossings along linear trajectories.

    The coplanarity condition is a cubic in t solved analytically, each
    candidate refined by 20 bisection iterations, then validated by
    barycentric containment (tolerance 1e-8). n_hat is the triangle normal
    at impact, oriented toward the side the vertex started on, so that
    post-crossing penetration has positive depth.
    """
    xs, xe = np.asarray(x_start, dtype=np.float64), np.asarray(x_end, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64)
    out = []
    if pairs.size == 0:
        return out
    if pairs.shape[1] == 2:
        rows = np.concatenate([pairs[:, :1], mesh.surface_tris[pairs[:, 1]]], axis=1)
    else:
        rows = pairs
    v, t0, t1, t2 = rows.T
    u0 = xs[t1] - xs[t0]
    u1 = (xe[t1] - xe[t0]) - u0
    v0 = xs[t2] - xs[t0]
    v1 = (xe[t2] - xe[t0]) - v0
    w0 = xs[v] - xs[t0]
    w1 = (xe[v] - xe[t0]) - w0
    roots = _roots_unit_batch(*_coeffs_batch(u0, u1, v0, v1, w0, w1))
    valid = np.isfinite(roots)
    if not valid.any():
        return out
    toi = _bisect_batch(lambda t: _coplanar_eval(u0, u1, v0, v1, w0, w1, t),
                        roots, valid)
    toi = np.where(valid, toi, 0.0)

    def lerp(idx):
        return xs[idx][:, None, :] + toi[..., None] * (xe[idx] - xs[idx])[:, None, :]

    a, b, c, p = lerp(t0), lerp(t1), lerp(t2), lerp(v)
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n, axis=-1)
    ok = valid & (nn >= 1e-30)
    # unclamped barycentrics of the in-plane point; at a coplanar
    # crossing these decide containment (clamped weights would not)
    e1, e2 = b - a, c - a
    m00, m01, m11 = (e1 * e1).sum(-1), (e1 * e2).sum(-1), (e2 * e2).sum(-1)
    det = m00 * m11 - m01 * m01
    ok &= det > 0.0
    r0, r1 = (e1 * (p - a)).sum(-1), (e2 * (p - a)).sum(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        wb = (m11 * r0 - m01 * r1) / det
        wc = (m00 * r1 - m01 * r0) / det
    wa = 1.0 - wb - wc
    ok &= np.minimum(np.minimum(wa, wb), wc) >= -bary_tol
    first = np.where(ok.any(axis=1), ok.argmax(axis=1), -1)
    for i in np.flatnonzero(first >= 0):
        r = first[i]
        ni = n[i, r] / nn[i, r]
        bary = np.array([wa[i, r], wb[i, r], wc[i, r]])
        # orient toward the vertex's start side; fall back to the
        # approach direction when the vertex began on the plane
        side = (xs[v[i]] - xs[t0[i]]) @ ni
        if side == 0.0:
            side = -((xe[v[i]] - xs[v[i]]) - (xe[t0[i]] - xs[t0[i]])) @ ni
        if side < 0.0:
            ni = -ni
        out.append(Contact(
            kind="vt",
            indices=rows[i].copy(),
            bary=np.array([1.0, *np.clip(bary, 0.0, 1.0)]),
            normal=ni,
            tangent=tangent_basis(ni),
            k_c=k_c,
            anchor_a=xs[v[i]].copy(),
            anchor_b=bary @ xs[[t0[i], t1[i], t2[i]]],
            source="ccd",
            toi=float(toi[i, r]),
        ))
    return out


def ccd_edge_edge(x_start, x_end, pairs, mesh=None, k_c: float = 1.0,
                  param_tol: float = 1e-8, parallel_tol: float = 1e-9) -> list:
    """Earliest edge-edge crossings along linear trajectories.

    Same cubic-plus-bisection scheme as the vertex-triangle case; a root
    counts only when both closest-point parameters lie inside [0,1]. Edges
    near-parallel at impact (unit cross norm < 1e-9) are skipped. n_hat is
    the inter-edge direction oriented so the post-crossing gap is positive.
    """
    xs, xe = np.asarray(x_start, dtype=np.float64), np.asarray(x_end, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64)
    out = []
    if pairs.size == 0:
        return out
    if pairs.shape[1] == 2:
        rows = np.concatenate([mesh.surface_edges[pairs[:, 0]],
                               mesh.surface_edges[pairs[:, 1]]], axis=1)
    else:
        rows = pairs
    a0, a1, b0, b1 = rows.T
    u0 = xs[a1] - xs[a0]
    u1 = (xe[a1] - xe[a0]) - u0
    v0 = xs[b1] - xs[b0]
    v1 = (xe[b1] - xe[b0]) - v0
    w0 = xs[b0] - xs[a0]
    w1 = (xe[b0] - xe[a0]) - w0
    roots = _roots_unit_batch(*_coeffs_batch(u0, u1, v0, v1, w0, w1))
    valid = np.isfinite(roots)
    if not valid.any():
        return out
    toi = _bisect_batch(lambda t: _coplanar_eval(u0, u1, v0, v1, w0, w1, t),
                        roots, valid)
    toi = np.where(valid, toi, 0.0)

    def lerp(idx):
        return xs[idx][:, None, :] + toi[..., None] * (xe[idx] - xs[idx])[:, None, :]

    pa0, pa1, pb0, pb1 = lerp(a0), lerp(a1), lerp(b0), lerp(b1)
    da, db = pa1 - pa0, pb1 - pb0
    la = np.linalg.norm(da, axis=-1)
    lb = np.linalg.norm(db, axis=-1)
    ok = valid & (la >= 1e-30) & (lb >= 1e-30)
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = np.cross(da / la[..., None], db / lb[..., None])
    cn = np.linalg.norm(cross, axis=-1)
    ok &= cn >= parallel_tol
    # unclamped mutual closest-point parameters; at a coplanar
    # crossing these are the intersection parameters
    r = pb0 - pa0
    aa, ee_, bb = (da * da).sum(-1), (db * db).sum(-1), (da * db).sum(-1)
    denom = aa * ee_ - bb * bb
    ok &= denom > 1e-30
    dbr, dar = (db * r).sum(-1), (da * r).sum(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (bb * (-dbr) + ee_ * dar) / denom
        t = (bb * s - dbr) / ee_
    ok &= np.minimum(np.minimum(s, 1.0 - s), np.minimum(t, 1.0 - t)) >= -param_tol
    first = np.where(ok.any(axis=1), ok.argmax(axis=1), -1)
    for i in np.flatnonzero(first >= 0):
        rr = first[i]
        si = float(np.clip(s[i, rr], 0.0, 1.0))
        ti = float(np.clip(t[i, rr], 0.0, 1.0))
        n = cross[i, rr] / cn[i, rr]
        # the pre-impact gap must be negative along n so that crossing
        # turns it positive; measure the side at the step start
        side = ((1 - ti) * xs[b0[i]] + ti * xs[b1[i]]
                - (1 - si) * xs[a0[i]] - si * xs[a1[i]]) @ n
        if side == 0.0:
            side = (xs[b0[i]] - xs[a0[i]]) @ n
        if side > 0.0:
            n = -n
        out.append(Contact(
            kind="ee",
            indices=rows[i].copy(),
            bary=np.array([1.0 - si, si, 1.0 - ti, ti]),
            normal=n,
            tangent=tangent_basis(n),
            k_c=k_c,
            anchor_a=(1 - si) * xs[a0[i]] + si * xs[a1[i]],
            anchor_b=(1 - ti) * xs[b0[i]] + ti * xs[b1[i]],
            source="ccd",
            toi=float(toi[i, rr]),
        ))
    return out


def recompute_dcd_anchor(contact: Contact, positions) -> None:
    """Refresh a DCD vertex-triangle contact's weights to the current
    closest point. The normal, tangent basis and step-start anchors stay
    frozen. Degenerate triangles leave the weights unchanged."""
    if contact.kind != "vt" or contact.source != "dcd":
        return
    x = np.asarray(positions)
    v, t0, t1, t2 = contact.indices
    a, b, c = x[t0], x[t1], x[t2]
    n = np.cross(b - a, c - a)
    scale = max(np.linalg.norm(b - a), np.linalg.norm(c - a), 1e-30)
    if np.linalg.norm(n) < 1e-12 * scale * scale:
        return
    _, bary = closest_point_triangle(x[v], a, b, c)
    contact.bary = np.array([1.0, *bary])


def contact_derivatives(contact: Contact, positions, vertex_id: int) -> ElementDerivatives:
    """Penalty energy, force and Hessian block for one vertex of a contact.

    With gamma_v the signed weight of the vertex, the force is
    k_c d gamma_v n_hat and the Hessian k_c gamma_v^2 n_hat n_hat^T; both
    vanish (with the energy) when the pair is separated.
    """
    x = np.asarray(positions)
    slot = int(np.flatnonzero(contact.indices == vertex_id)[0])
    g = contact.gammas()
    sep = -(g[:, None] * x[contact.indices]).sum(axis=0)
    d = float(sep @ contact.normal)
    if d <= 0.0:
        return ElementDerivatives(0.0, np.zeros(3), np.zeros((3, 3)))
    k = contact.k_c
    energy = 0.5 * k * d * d
    force = k * d * g[slot] * contact.normal
    hessian = k * g[slot] ** 2 * np.outer(contact.normal, contact.normal)
    return ElementDerivatives(energy, force, hessian)


def friction_f1(u: float, eps_u: float) -> float:
    """Quadratic static-to-dynamic ramp: f1 = 2r - r^2 below the threshold
    (r = u/eps_u), 1 above it."""
    if u >= eps_u:
        return 1.0
    r = u / eps_u
    return 2.0 * r - r * r


def friction_derivatives(contact: Contact, positions, step_start_positions,
                         fric: FrictionParams, h: float,
                         vertex_id: int) -> ElementDerivatives:
    """Smoothed Coulomb friction force and Hessian block for one vertex.

    The relative tangential slip of the current iterate against the step
    start is u = T^T sum_v gamma_v (x_v - x_v^t); the force on vertex v is
    -mu_c lambda_c gamma_v T f1(|u|) u/|u| with lambda_c = k_c d >= 0 the
    current normal force, so it opposes the slip on the vertex side and
    reacts on the other side. The Hessian keeps |u| fixed
    (mu_c lambda_c gamma_v^2 T (f1/|u|) T^T, positive semidefinite); at
    |u| < 1e-14 the analytic limit f1/|u| -> 2/(eps_v h) is used with zero
    force. Friction is not a potential, so energy is reported as 0.
    """
    x = np.asarray(positions)
    xt = np.asarray(step_start_positions)
    slot = int(np.flatnonzero(contact.indices == vertex_id)[0])
    g = contact.gammas()
    d = contact.gap(positions)
    if d <= 0.0 or fric.mu_c == 0.0:
        return ElementDerivatives(0.0, np.zeros(3), np.zeros((3, 3)))
    lam = contact.k_c * d

    delta = (g[:, None] * (x[contact.indices] - xt[contact.indices])).sum(axis=0)
    u = contact.tangent.T @ delta
    unorm = float(np.linalg.norm(u))
    eps_u = fric.eps_v * h
    tt = contact.tangent @ contact.tangent.T
    if unorm < 1e-14:
        ratio = 2.0 / eps_u
        return ElementDerivatives(0.0, np.zeros(3),
                                  fric.mu_c * lam * g[slot] ** 2 * ratio * tt)
    ratio = friction_f1(unorm, eps_u) / unorm
    force = -fric.mu_c * lam * g[slot] * ratio * (contact.tangent @ u)
    hessian = fric.mu_c * lam * g[slot] ** 2 * ratio * tt
    return ElementDerivatives(0.0, force, hessian)
