"""Vectorized whole-mesh energy, gradient and Hessian assembly.

Used for metrics (the variational energy G), for the baseline solvers and
for convergence checks. The VBD iteration itself does not go through here;
its per-vertex assembly lives in the kernel backends.
"""

import numpy as np
import scipy.sparse as sp

from ._system import System


def tet_deformation(system: System, x: np.ndarray) -> np.ndarray:
    """Batched F = sum_s x_s w_s^T over all tets."""
    if len(system.tets) == 0:
        return np.zeros((0, 3, 3))
    return np.einsum("tsa,tsb->tab", x[system.tets], system.tet_w)


def batched_cofactor(f: np.ndarray) -> np.ndarray:
    c = np.empty_like(f)
    c[:, :, 0] = np.cross(f[:, :, 1], f[:, :, 2])
    c[:, :, 1] = np.cross(f[:, :, 2], f[:, :, 0])
    c[:, :, 2] = np.cross(f[:, :, 0], f[:, :, 1])
    return c


def tet_energies(system: System, x: np.ndarray) -> np.ndarray:
    f = tet_deformation(system, x)
    if len(f) == 0:
        return np.zeros(0)
    i_c = np.einsum("tab,tab->t", f, f)
    j = np.linalg.det(f)
    gamma = 1.0 + system.tet_mu / system.tet_lam
    psi = (0.5 * system.tet_mu * (i_c - 3.0)
           + 0.5 * system.tet_lam * (j - gamma) ** 2)
    return system.tet_vol * psi


def spring_energies(system: System, x: np.ndarray) -> np.ndarray:
    if len(system.springs) == 0:
        return np.zeros(0)
    d = x[system.springs[:, 0]] - x[system.springs[:, 1]]
    length = np.linalg.norm(d, axis=1)
    return 0.5 * system.sp_k * (length - system.sp_l0) ** 2


def contact_energy(contact_set, x: np.ndarray) -> float:
    if contact_set is None:
        return 0.0
    total = 0.0
    for c in contact_set.contacts:
        d = c.gap(x)
        total += 0.5 * c.k_c * d * d
    return total


def box_energy(system: System, x: np.ndarray) -> float:
    k = system.cons.box_k
    active = k > 0.0
    if not active.any():
        return 0.0
    xa = x[active]
    below = np.maximum(system.cons.box_lo[active] - xa, 0.0)
    above = np.maximum(xa - system.cons.box_hi[active], 0.0)
    return float(0.5 * (k[active][:, None] * (below**2 + above**2)).sum())


def potential_energy(system: System, x: np.ndarray, contact_set=None) -> float:
    """Total E(x): elastic + spring + contact penalty + box penalty."""
    return (float(tet_energies(system, x).sum())
            + float(spring_energies(system, x).sum())
            + contact_energy(contact_set, x)
            + box_energy(system, x))


def variational_energy(system: System, x, y, h: float, contact_set=None) -> float:
    """G(x) = 1/(2 h^2) |x - y|_M^2 + E(x)."""
    dx = np.asarray(x) - np.asarray(y)
    inertia = 0.5 / (h * h) * float((system.masses[:, None] * dx * dx).sum())
    return inertia + potential_energy(system, x, contact_set)


def elastic_gradient(system: System, x: np.ndarray) -> np.ndarray:
    """dE/dx of the tet and spring terms, (N,3)."""
    grad = np.zeros_like(x)
    if len(system.tets):
        f = tet_deformation(system, x)
        c = batched_cofactor(f)
        j = np.linalg.det(f)
        gamma = 1.0 + system.tet_mu / system.tet_lam
        p = (system.tet_mu[:, None, None] * f
             + (system.tet_lam * (j - gamma))[:, None, None] * c)
        per_slot = np.einsum("t,tab,tsb->tsa", system.tet_vol, p, system.tet_w)
        np.add.at(grad, system.tets.ravel(), per_slot.reshape(-1, 3))
    if len(system.springs):
        d = x[system.springs[:, 0]] - x[system.springs[:, 1]]
        length = np.linalg.norm(d, axis=1)
        safe = length >= 1e-12 * system.sp_l0
        coef = np.where(safe, system.sp_k * (length - system.sp_l0)
                        / np.where(length > 0, length, 1.0), 0.0)
        g = coef[:, None] * d
        np.add.at(grad, system.springs[:, 0], g)
        np.add.at(grad, system.springs[:, 1], -g)
    return grad


def contact_gradient(contact_set, x: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    if contact_set is None:
        return grad
    for c in contact_set.contacts:
        d = c.gap(x)
        if d <= 0.0:
            continue
        g = c.gammas()
        grad[c.indices] += (-c.k_c * d) * g[:, None] * c.normal
    return grad


def box_gradient(system: System, x: np.ndarray) -> np.ndarray:
    grad = np.zeros_like(x)
    k = system.cons.box_k
    active = k > 0.0
    if active.any():
        xa = x[active]
        below = np.minimum(xa - system.cons.box_lo[active], 0.0)
        above = np.maximum(xa - system.cons.box_hi[active], 0.0)
        grad[active] = k[active][:, None] * (below + above)
    return grad


def variational_gradient(system: System, x, y, h: float, contact_set=None,
                         zero_fixed: bool = True) -> np.ndarray:
    """dG/dx, (N,3). Fixed vertices get zero rows when zero_fixed."""
    x = np.asarray(x)
    grad = (system.masses[:, None] / (h * h)) * (x - np.asarray(y))
    grad += elastic_gradient(system, x)
    grad += contact_gradient(contact_set, x)
    grad += box_gradient(system, x)
    if zero_fixed:
        grad[system.cons.kind == 1] = 0.0
    return grad


def _hat(v: np.ndarray) -> np.ndarray:
    """Batched cross-product matrices, (T,3) -> (T,3,3)."""
    t = len(v)
    m = np.zeros((t, 3, 3))
    m[:, 0, 1] = -v[:, 2]
    m[:, 0, 2] = v[:, 1]
    m[:, 1, 0] = v[:, 2]
    m[:, 1, 2] = -v[:, 0]
    m[:, 2, 0] = -v[:, 1]
    m[:, 2, 1] = v[:, 0]
    return m


def tet_hessian_blocks(system: System, x: np.ndarray,
                       psd_project: bool) -> np.ndarray:
    """Exact per-tet 12x12 Hessians of V*Psi, optionally eigen-clamped PSD.

    d2Psi/dF2 = mu I9 + lambda vec(C) vec(C)^T + lambda (J - gamma) HJ with
    HJ the second derivative of the determinant (block-skew cross-product
    structure over columns), then mapped through dF/dx.
    """
    t = len(system.tets)
    if t == 0:
        return np.zeros((0, 12, 12))
    f = tet_deformation(system, x)
    c = batched_cofactor(f)
    j = np.linalg.det(f)
    gamma = 1.0 + system.tet_mu / system.tet_lam

    # h4[t, b, a, d, cp] = d2Psi / dF_{ab} dF_{cp,d}
    h4 = np.zeros((t, 3, 3, 3, 3))
    eye = np.eye(3)
    h4 += system.tet_mu[:, None, None, None, None] * \
        np.einsum("bd,ac->badc", eye, eye)[None]
    h4 += system.tet_lam[:, None, None, None, None] * \
        np.einsum("tab,tcd->tbadc", c, c)
    f0, f1, f2 = f[:, :, 0], f[:, :, 1], f[:, :, 2]
    hj = np.zeros((t, 3, 3, 3, 3))
    hj[:, 0, :, 1, :] = -_hat(f2)
    hj[:, 1, :, 0, :] = _hat(f2)
    hj[:, 0, :, 2, :] = _hat(f1)
    hj[:, 2, :, 0, :] = -_hat(f1)
    hj[:, 1, :, 2, :] = -_hat(f0)
    hj[:, 2, :, 1, :] = _hat(f0)
    h4 += (system.tet_lam * (j - gamma))[:, None, None, None, None] * hj

    h12 = np.einsum("tsb,tbadc,tud->tsauc", system.tet_w, h4, system.tet_w)
    h12 = h12.reshape(t, 12, 12) * system.tet_vol[:, None, None]
    h12 = 0.5 * (h12 + np.swapaxes(h12, 1, 2))
    if psd_project:
        vals, vecs = np.linalg.eigh(h12)
        vals = np.maximum(vals, 0.0)
        h12 = np.einsum("tij,tj,tkj->tik", vecs, vals, vecs)
    return h12


def spring_hessian_blocks(system: System, x: np.ndarray) -> np.ndarray:
    """Per-spring 6x6 Hessians (exact; PSD except deep compression)."""
    s = len(system.springs)
    if s == 0:
        return np.zeros((0, 6, 6))
    d = x[system.springs[:, 0]] - x[system.springs[:, 1]]
    length = np.linalg.norm(d, axis=1)
    out = np.zeros((s, 6, 6))
    for k in range(s):
        l0, ks = system.sp_l0[k], system.sp_k[k]
        if length[k] < 1e-12 * l0:
            h = ks * np.eye(3)
        else:
            u = d[k] / length[k]
            outer = np.outer(u, u)
            h = ks * (outer + (1.0 - l0 / length[k]) * (np.eye(3) - outer))
        out[k, :3, :3] = h
        out[k, 3:, 3:] = h
        out[k, :3, 3:] = -h
        out[k, 3:, :3] = -h
    return out


def assemble_hessian(system: System, x: np.ndarray, contact_set=None,
                     psd_project: bool = True, h: float = None,
                     y=None) -> sp.csr_matrix:
    """Sparse 3N x 3N Hessian of G (inertia included when h given).

    Fixed vertices get identity rows/columns. Friction is not part of G and
    is not assembled.
    """
    n = system.num_vertices
    rows, cols, vals = [], [], []

    def add_block(p, q, block):
        r = (3 * p + np.arange(3))[:, None] * np.ones(3, dtype=np.int64)
        cix = np.ones(3, dtype=np.int64)[:, None] * (3 * q + np.arange(3))
        rows.append(r.ravel())
        cols.append(cix.ravel())
        vals.append(np.asarray(block).ravel())

    def add_element_blocks(indices, blocks, arity):
        # indices (E,arity), blocks (E, 3*arity, 3*arity)
        e = len(indices)
        if e == 0:
            return
        dof = (3 * indices)[:, :, None] + np.arange(3)  # (E,arity,3)
        dof = dof.reshape(e, 3 * arity)
        r = np.broadcast_to(dof[:, :, None], (e, 3 * arity, 3 * arity))
        cix = np.broadcast_to(dof[:, None, :], (e, 3 * arity, 3 * arity))
        rows.append(r.ravel())
        cols.append(cix.ravel())
        vals.append(blocks.ravel())

    add_element_blocks(system.tets, tet_hessian_blocks(system, x, psd_project), 4)
    add_element_blocks(system.springs, spring_hessian_blocks(system, x), 2)

    if contact_set is not None:
        for c in contact_set.contacts:
            d = c.gap(x)
            if d <= 0.0:
                continue
            g = c.gammas()
            nn = np.outer(c.normal, c.normal)
            for a in range(4):
                for b in range(4):
                    add_block(c.indices[a], c.indices[b],
                              c.k_c * g[a] * g[b] * nn)

    box_act = np.flatnonzero(system.cons.box_k > 0.0)
    for v in box_act:
        xa = x[v]
        diag = np.where((xa < system.cons.box_lo[v]) | (xa > system.cons.box_hi[v]),
                        system.cons.box_k[v], 0.0)
        add_block(v, v, np.diag(diag))

    if h is not None:
        scale = system.masses / (h * h)
        for v in range(n):
            add_block(v, v, scale[v] * np.eye(3))

    fixed = np.flatnonzero(system.cons.kind == 1)
    mat = sp.coo_matrix(
        (np.concatenate(vals) if vals else np.zeros(0),
         (np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
          np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64))),
        shape=(3 * n, 3 * n)).tocsr()
    if len(fixed):
        mask = np.ones(3 * n, dtype=bool)
        fixed_dofs = (3 * fixed[:, None] + np.arange(3)).ravel()
        mask[fixed_dofs] = False
        d = sp.diags(mask.astype(np.float64))
        mat = d @ mat @ d + sp.diags((~mask).astype(np.float64))
    return mat
