"""Pure-NumPy kernel backend.

Implements the same color-pass semantics as the compiled core: every vertex
of the group is solved against the main position buffer and written to a
scratch buffer, which is merged afterwards, so results are independent of
intra-group ordering. Selected at import time when the compiled extension is
unavailable (or forced via VBD_BACKEND=numpy).
"""

import numpy as np

from ._system import FIXED, SUBSPACE
from .contact import closest_point_triangle, friction_f1

NAME = "numpy"


def _gather_rows(off, verts):
    """Row bookkeeping for CSR slices of a vertex group.

    Returns (rv, flat_idx): rv maps each row to its position in `verts`,
    flat_idx indexes the CSR value arrays.
    """
    counts = off[verts + 1] - off[verts]
    total = int(counts.sum())
    if total == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e.copy()
    rv = np.repeat(np.arange(len(verts), dtype=np.int64), counts)
    starts = off[verts]
    shift = np.concatenate(([0], np.cumsum(counts)[:-1]))
    flat_idx = np.arange(total, dtype=np.int64) - np.repeat(shift, counts) \
        + np.repeat(starts, counts)
    return rv, flat_idx


def _batched_cof(f):
    c = np.empty_like(f)
    c[:, :, 0] = np.cross(f[:, :, 1], f[:, :, 2])
    c[:, :, 1] = np.cross(f[:, :, 2], f[:, :, 0])
    c[:, :, 2] = np.cross(f[:, :, 0], f[:, :, 1])
    return c


class _TetRows:
    """Per-(vertex, incident tet) row data for one group."""

    def __init__(self, system, x, g):
        rv, flat = _gather_rows(system.t_off, g)
        self.rv = rv
        tid = system.t_id[flat]
        self.slot = system.t_slot[flat]
        self.idx4 = system.tets[tid]
        self.w4 = system.tet_w[tid]
        self.w = self.w4[np.arange(len(flat)), self.slot]
        self.vol = system.tet_vol[tid]
        self.mu = system.tet_mu[tid]
        self.lam = system.tet_lam[tid]
        self.kd = system.tet_kd[tid]
        self.gamma = 1.0 + self.mu / self.lam
        self.f_base = np.einsum("rsa,rsb->rab", x[self.idx4], self.w4)

    def energies(self, delta):
        """Element energies with the row vertex displaced by delta[rv]."""
        f = self.f_base + np.einsum("ra,rb->rab", delta[self.rv], self.w)
        i_c = np.einsum("rab,rab->r", f, f)
        j = np.linalg.det(f)
        psi = 0.5 * self.mu * (i_c - 3.0) + 0.5 * self.lam * (j - self.gamma) ** 2
        return self.vol * psi

    def force_hessian(self, xg, xtg):
        f = self.f_base
        c = _batched_cof(f)
        j = np.linalg.det(f)
        p = (self.mu[:, None, None] * f
             + (self.lam * (j - self.gamma))[:, None, None] * c)
        fe = -self.vol[:, None] * np.einsum("rab,rb->ra", p, self.w)
        cw = np.einsum("rab,rb->ra", c, self.w)
        wsq = np.einsum("rb,rb->r", self.w, self.w)
        he = (self.vol * self.mu * wsq)[:, None, None] * np.eye(3) \
            + (self.vol * self.lam)[:, None, None] * np.einsum("ra,rb->rab", cw, cw)
        dsc = self.kd / self._h
        dx = xg[self.rv] - xtg[self.rv]
        fe = fe - dsc[:, None] * np.einsum("rab,rb->ra", he, dx)
        he = he * (1.0 + dsc)[:, None, None]
        return fe, he


class _SpringRows:
    def __init__(self, system, x, g):
        rv, flat = _gather_rows(system.s_off, g)
        self.rv = rv
        sid = system.s_id[flat]
        slot = system.s_slot[flat]
        other = system.springs[sid, 1 - slot]
        self.d_base = x[system.springs[sid, slot]] - x[other]
        self.l0 = system.sp_l0[sid]
        self.k = system.sp_k[sid]
        self.kd = system.sp_kd[sid]

    def energies(self, delta):
        d = self.d_base + delta[self.rv]
        length = np.linalg.norm(d, axis=1)
        return 0.5 * self.k * (length - self.l0) ** 2

    def force_hessian(self, xg, xtg):
        d = self.d_base
        length = np.linalg.norm(d, axis=1)
        degen = length < 1e-12 * self.l0
        safe_len = np.where(degen, 1.0, length)
        u = d / safe_len[:, None]
        fe = -(self.k * (length - self.l0))[:, None] * u
        fe[degen] = 0.0
        outer = np.einsum("ra,rb->rab", u, u)
        he = self.k[:, None, None] * (
            outer + (1.0 - self.l0 / safe_len)[:, None, None] * (np.eye(3) - outer))
        he[degen] = self.k[degen, None, None] * np.eye(3)
        dsc = self.kd / self._h
        dx = xg[self.rv] - xtg[self.rv]
        fe = fe - dsc[:, None] * np.einsum("rab,rb->ra", he, dx)
        he = he * (1.0 + dsc)[:, None, None]
        return fe, he


def _refreshed_gammas(carr, x):
    """Per-contact signed weights, DCD vertex-triangle weights refreshed to
    the current closest point (from the main buffer only)."""
    gam = carr.gamma.copy()
    for cid in np.flatnonzero(carr.refresh):
        v, t0, t1, t2 = carr.idx[cid]
        a, b, c = x[t0], x[t1], x[t2]
        n = np.cross(b - a, c - a)
        scale = max(np.linalg.norm(b - a), np.linalg.norm(c - a), 1e-30)
        if np.linalg.norm(n) < 1e-12 * scale * scale:
            continue
        _, bary = closest_point_triangle(x[v], a, b, c)
        gam[cid] = np.array([1.0, -bary[0], -bary[1], -bary[2]])
    return gam


class _ContactRows:
    def __init__(self, carr, gam, x, g):
        rv, flat = _gather_rows(carr.cv_off, g)
        self.rv = rv
        self.cid = carr.cv_cid[flat]
        self.slot = carr.cv_slot[flat]
        self.idx = carr.idx[self.cid]
        self.gam = gam[self.cid]
        self.gslot = self.gam[np.arange(len(flat)), self.slot]
        self.n = carr.normal[self.cid]
        self.t = carr.tangent[self.cid]
        self.kc = carr.k_c[self.cid]
        sep = np.einsum("rv,rva->ra", self.gam, x[self.idx])
        self.d_base = -np.einsum("ra,ra->r", sep, self.n)

    def gaps(self, delta):
        return self.d_base - self.gslot * np.einsum(
            "ra,ra->r", self.n, delta[self.rv])

    def energies(self, delta):
        d = np.maximum(self.gaps(delta), 0.0)
        return 0.5 * self.kc * d * d

    def force_hessian(self, x, x_t, mu_c, eps_u):
        r = len(self.rv)
        fe = np.zeros((r, 3))
        he = np.zeros((r, 3, 3))
        d = self.d_base
        act = d > 0.0
        if act.any():
            coef = np.where(act, self.kc * d * self.gslot, 0.0)
            fe += coef[:, None] * self.n
            hcoef = np.where(act, self.kc * self.gslot**2, 0.0)
            he += hcoef[:, None, None] * np.einsum("ra,rb->rab", self.n, self.n)
            if mu_c > 0.0:
                lam = np.where(act, self.kc * d, 0.0)
                delta = np.einsum("rv,rva->ra", self.gam,
                                  x[self.idx] - x_t[self.idx])
                u = np.einsum("rac,ra->rc", self.t, delta)
                unorm = np.linalg.norm(u, axis=1)
                tiny = unorm < 1e-14
                f1 = np.where(unorm >= eps_u, 1.0,
                              2.0 * (unorm / eps_u) - (unorm / eps_u) ** 2)
                ratio = np.where(tiny, 2.0 / eps_u,
                                 f1 / np.where(tiny, 1.0, unorm))
                fcoef = np.where(tiny, 0.0, -mu_c * lam * self.gslot * ratio)
                fe += fcoef[:, None] * np.einsum("rac,rc->ra", self.t, u)
                hcoef = mu_c * lam * self.gslot**2 * ratio
                he += hcoef[:, None, None] * np.einsum("rac,rbc->rab",
                                                       self.t, self.t)
        return fe, he


def _box_terms(system, x, g):
    k = system.cons.box_k[g]
    act = k > 0.0
    f = np.zeros((len(g), 3))
    hdiag = np.zeros((len(g), 3))
    if act.any():
        xa = x[g[act]]
        lo = system.cons.box_lo[g[act]]
        hi = system.cons.box_hi[g[act]]
        below = np.minimum(xa - lo, 0.0)
        above = np.maximum(xa - hi, 0.0)
        f[act] = -k[act][:, None] * (below + above)
        hdiag[act] = np.where((below < 0) | (above > 0), k[act][:, None], 0.0)
    return f, hdiag


def _box_energy_rows(system, xg, g):
    k = system.cons.box_k[g]
    lo = system.cons.box_lo[g]
    hi = system.cons.box_hi[g]
    below = np.maximum(lo - xg, 0.0)
    above = np.maximum(xg - hi, 0.0)
    return 0.5 * k * (below**2 + above**2).sum(axis=1)


def color_pass(system, carr, x, x_t, y, h, group, mode=0, line_search=False,
               eps_det=1e-10, mu_c=0.0, eps_v=1e-2, n_threads=0):
    """One auxiliary-buffer pass over `group`, updating x in place."""
    kind = system.cons.kind
    g = group[kind[group] != FIXED]
    if len(g) == 0:
        return
    ng = len(g)
    h2 = h * h
    m = system.masses[g]
    xg, yg, xtg = x[g], y[g], x_t[g]

    f = (m / h2)[:, None] * (yg - xg)
    hmat = np.zeros((ng, 3, 3))
    hmat[:, np.arange(3), np.arange(3)] = (m / h2)[:, None]

    trows = _TetRows(system, x, g)
    trows._h = h
    if len(trows.rv):
        fe, he = trows.force_hessian(xg, xtg)
        np.add.at(f, trows.rv, fe)
        np.add.at(hmat, trows.rv, he)

    srows = _SpringRows(system, x, g)
    srows._h = h
    if len(srows.rv):
        fe, he = srows.force_hessian(xg, xtg)
        np.add.at(f, srows.rv, fe)
        np.add.at(hmat, srows.rv, he)

    crows = None
    if carr is not None and carr.count:
        gam = _refreshed_gammas(carr, x)
        crows = _ContactRows(carr, gam, x, g)
        if len(crows.rv):
            fe, he = crows.force_hessian(x, x_t, mu_c, eps_v * h)
            np.add.at(f, crows.rv, fe)
            np.add.at(hmat, crows.rv, he)
        else:
            crows = None

    fb, hb = _box_terms(system, x, g)
    f += fb
    hmat[:, np.arange(3), np.arange(3)] += hb

    if mode == 1:
        diag = hmat[:, np.arange(3), np.arange(3)]
        delta = np.where(diag != 0.0, f / np.where(diag == 0.0, 1.0, diag), 0.0)
    else:
        tr = np.trace(hmat, axis1=1, axis2=2)
        det = np.linalg.det(hmat)
        skip = np.abs(det) <= eps_det * (tr / 3.0) ** 3
        delta = np.zeros((ng, 3))
        solvable = ~skip
        sub = system.cons.sub_dim[g] > 0
        plain = solvable & ~sub
        if plain.any():
            delta[plain] = np.linalg.solve(hmat[plain], f[plain][..., None])[..., 0]
        for kdx in np.flatnonzero(sub & solvable):
            dim = system.cons.sub_dim[g[kdx]]
            b = system.cons.sub_basis[g[kdx]][:, :dim]
            a = b.T @ hmat[kdx] @ b
            rhs = b.T @ f[kdx]
            deta = np.linalg.det(a) if dim == 2 else a[0, 0]
            if abs(deta) <= eps_det * (np.trace(a) / dim) ** dim:
                continue
            delta[kdx] = b @ np.linalg.solve(a, rhs)

    if line_search and mode == 0:
        def local_energy(dl):
            e = 0.5 * (m / h2) * ((xg + dl - yg) ** 2).sum(axis=1)
            if len(trows.rv):
                np.add.at(e, trows.rv, trows.energies(dl))
            if len(srows.rv):
                np.add.at(e, srows.rv, srows.energies(dl))
            if crows is not None:
                np.add.at(e, crows.rv, crows.energies(dl))
            e += _box_energy_rows(system, xg + dl, g)
            return e

        e0 = local_energy(np.zeros((ng, 3)))
        accepted = np.zeros(ng, dtype=bool)
        final = np.zeros((ng, 3))
        alpha = 1.0
        for _ in range(17):
            trial = np.where(accepted[:, None], 0.0, alpha * delta)
            et = local_energy(trial)
            take = ~accepted & (et <= e0)
            final[take] = alpha * delta[take]
            accepted |= take
            if accepted.all():
                break
            alpha *= 0.5
        delta = final

    x[g] = xg + delta
