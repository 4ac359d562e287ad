# Compiled kernel backend: per-vertex block solves over a color group,
# parallelized with OpenMP. Semantics match _numpy_core.color_pass exactly:
# every vertex reads the main buffer, results land in a scratch buffer that
# is merged after the loop, so output is independent of thread count and
# intra-group order.

import numpy as np

cimport numpy as cnp
cimport openmp
from cython.parallel cimport prange
from libc.math cimport fabs, sqrt

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64

NAME = "native"

cdef enum:
    KIND_FIXED = 1
    KIND_SUBSPACE = 2


cdef struct SysData:
    f64* x
    f64* xt
    f64* y
    f64* masses

    i64 n_tets
    i64* tets
    f64* tet_w
    f64* tet_vol
    f64* tet_mu
    f64* tet_lam
    f64* tet_kd
    i64* t_off
    i64* t_id
    i64* t_slot

    i64 n_springs
    i64* springs
    f64* sp_l0
    f64* sp_k
    f64* sp_kd
    i64* s_off
    i64* s_id
    i64* s_slot

    unsigned char* kind
    i64* sub_dim
    f64* sub_basis
    f64* sub_anchor
    f64* box_k
    f64* box_lo
    f64* box_hi

    i64 n_contacts
    i64* c_idx
    f64* c_gamma
    unsigned char* c_refresh
    f64* c_n
    f64* c_t
    f64* c_kc
    i64* cv_off
    i64* cv_cid
    i64* cv_slot

    f64 h
    f64 eps_det
    f64 mu_c
    f64 eps_u
    int line_search
    int mode


cdef inline void _closest_bary(const f64* p, const f64* a, const f64* b,
                               const f64* c, f64* bary) nogil:
    # Voronoi-region closest point on triangle abc, barycentric output.
    cdef f64 ab[3]
    cdef f64 ac[3]
    cdef f64 ap[3]
    cdef f64 bp[3]
    cdef f64 cp[3]
    cdef int k
    for k in range(3):
        ab[k] = b[k] - a[k]
        ac[k] = c[k] - a[k]
        ap[k] = p[k] - a[k]
    cdef f64 d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    cdef f64 d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        bary[0] = 1.0; bary[1] = 0.0; bary[2] = 0.0
        return
    for k in range(3):
        bp[k] = p[k] - b[k]
    cdef f64 d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    cdef f64 d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        bary[0] = 0.0; bary[1] = 1.0; bary[2] = 0.0
        return
    cdef f64 vc = d1 * d4 - d3 * d2
    cdef f64 v
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        bary[0] = 1.0 - v; bary[1] = v; bary[2] = 0.0
        return
    for k in range(3):
        cp[k] = p[k] - c[k]
    cdef f64 d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
    cdef f64 d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
    if d6 >= 0.0 and d5 <= d6:
        bary[0] = 0.0; bary[1] = 0.0; bary[2] = 1.0
        return
    cdef f64 vb = d5 * d2 - d1 * d6
    cdef f64 w
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        bary[0] = 1.0 - w; bary[1] = 0.0; bary[2] = w
        return
    cdef f64 va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        bary[0] = 0.0; bary[1] = 1.0 - w; bary[2] = w
        return
    cdef f64 denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    bary[0] = 1.0 - v - w; bary[1] = v; bary[2] = w


cdef inline void _contact_gamma(const SysData* s, i64 cid, f64* gam) nogil:
    # Signed weights; DCD vertex-triangle anchors track the current closest
    # point, evaluated from the main buffer only.
    cdef i64 v, t0, t1, t2
    cdef f64 e1[3]
    cdef f64 e2[3]
    cdef f64 nrm[3]
    cdef f64 bary[3]
    cdef f64 l1 = 0.0, l2 = 0.0, nn = 0.0, scale
    cdef int k
    gam[0] = s.c_gamma[cid * 4 + 0]
    gam[1] = s.c_gamma[cid * 4 + 1]
    gam[2] = s.c_gamma[cid * 4 + 2]
    gam[3] = s.c_gamma[cid * 4 + 3]
    if not s.c_refresh[cid]:
        return
    v = s.c_idx[cid * 4 + 0]
    t0 = s.c_idx[cid * 4 + 1]
    t1 = s.c_idx[cid * 4 + 2]
    t2 = s.c_idx[cid * 4 + 3]
    for k in range(3):
        e1[k] = s.x[t1 * 3 + k] - s.x[t0 * 3 + k]
        e2[k] = s.x[t2 * 3 + k] - s.x[t0 * 3 + k]
        l1 += e1[k] * e1[k]
        l2 += e2[k] * e2[k]
    nrm[0] = e1[1] * e2[2] - e1[2] * e2[1]
    nrm[1] = e1[2] * e2[0] - e1[0] * e2[2]
    nrm[2] = e1[0] * e2[1] - e1[1] * e2[0]
    nn = sqrt(nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2])
    scale = sqrt(l1) if l1 > l2 else sqrt(l2)
    if scale < 1e-30:
        scale = 1e-30
    if nn < 1e-12 * scale * scale:
        return
    _closest_bary(&s.x[v * 3], &s.x[t0 * 3], &s.x[t1 * 3], &s.x[t2 * 3], bary)
    gam[0] = 1.0
    gam[1] = -bary[0]
    gam[2] = -bary[1]
    gam[3] = -bary[2]


cdef inline void _tet_fc(const SysData* s, i64 t, i64 i, const f64* p,
                         f64* fmat, f64* cof, f64* jout) nogil:
    # Deformation gradient with vertex i at candidate p, plus cofactor and det.
    cdef int a, b, k
    cdef i64 vid
    cdef const f64* pos
    for k in range(9):
        fmat[k] = 0.0
    for k in range(4):
        vid = s.tets[t * 4 + k]
        pos = p if vid == i else &s.x[vid * 3]
        for a in range(3):
            for b in range(3):
                fmat[a * 3 + b] += pos[a] * s.tet_w[t * 12 + k * 3 + b]
    cof[0] = fmat[4] * fmat[8] - fmat[7] * fmat[5]
    cof[3] = fmat[7] * fmat[2] - fmat[1] * fmat[8]
    cof[6] = fmat[1] * fmat[5] - fmat[4] * fmat[2]
    cof[1] = fmat[5] * fmat[6] - fmat[8] * fmat[3]
    cof[4] = fmat[8] * fmat[0] - fmat[2] * fmat[6]
    cof[7] = fmat[2] * fmat[3] - fmat[5] * fmat[0]
    cof[2] = fmat[3] * fmat[7] - fmat[6] * fmat[4]
    cof[5] = fmat[6] * fmat[1] - fmat[0] * fmat[7]
    cof[8] = fmat[0] * fmat[4] - fmat[3] * fmat[1]
    jout[0] = fmat[0] * cof[0] + fmat[3] * cof[3] + fmat[6] * cof[6]


cdef f64 _local_energy(const SysData* s, i64 i, const f64* p) nogil:
    # G_i with vertex i at p; all other vertices read from the main buffer.
    cdef f64 e = 0.0, h2 = s.h * s.h
    cdef f64 fmat[9]
    cdef f64 cof[9]
    cdef f64 gam[4]
    cdef f64 jdet, psi, ic, gma, mu, lam
    cdef f64 dvec[3]
    cdef f64 length, d, tmp
    cdef i64 kk, t, sp, cid, oth
    cdef int a, k
    for a in range(3):
        tmp = p[a] - s.y[i * 3 + a]
        e += 0.5 * (s.masses[i] / h2) * tmp * tmp
    for kk in range(s.t_off[i], s.t_off[i + 1]):
        t = s.t_id[kk]
        _tet_fc(s, t, i, p, fmat, cof, &jdet)
        ic = 0.0
        for k in range(9):
            ic += fmat[k] * fmat[k]
        mu = s.tet_mu[t]
        lam = s.tet_lam[t]
        gma = 1.0 + mu / lam
        psi = 0.5 * mu * (ic - 3.0) + 0.5 * lam * (jdet - gma) * (jdet - gma)
        e += s.tet_vol[t] * psi
    for kk in range(s.s_off[i], s.s_off[i + 1]):
        sp = s.s_id[kk]
        oth = s.springs[sp * 2 + (1 - s.s_slot[kk])]
        length = 0.0
        for a in range(3):
            dvec[a] = p[a] - s.x[oth * 3 + a]
            length += dvec[a] * dvec[a]
        length = sqrt(length)
        if length < 1e-12 * s.sp_l0[sp]:
            e += 0.5 * s.sp_k[sp] * s.sp_l0[sp] * s.sp_l0[sp]
        else:
            tmp = length - s.sp_l0[sp]
            e += 0.5 * s.sp_k[sp] * tmp * tmp
    for kk in range(s.cv_off[i], s.cv_off[i + 1]):
        cid = s.cv_cid[kk]
        _contact_gamma(s, cid, gam)
        d = 0.0
        for k in range(4):
            oth = s.c_idx[cid * 4 + k]
            for a in range(3):
                tmp = p[a] if oth == i and k == s.cv_slot[kk] else s.x[oth * 3 + a]
                d -= gam[k] * s.c_n[cid * 3 + a] * tmp
        if d > 0.0:
            e += 0.5 * s.c_kc[cid] * d * d
    if s.box_k[i] > 0.0:
        for a in range(3):
            tmp = s.box_lo[i * 3 + a] - p[a]
            if tmp > 0.0:
                e += 0.5 * s.box_k[i] * tmp * tmp
            tmp = p[a] - s.box_hi[i * 3 + a]
            if tmp > 0.0:
                e += 0.5 * s.box_k[i] * tmp * tmp
    return e


cdef void _assemble(const SysData* s, i64 i, f64* f, f64* hm) nogil:
    # Force (negative G_i gradient) and 3x3 Hessian at the current x.
    cdef f64 h2 = s.h * s.h
    cdef f64 mih2 = s.masses[i] / h2
    cdef f64 fmat[9]
    cdef f64 cof[9]
    cdef f64 he[9]
    cdef f64 w[3]
    cdef f64 cw[3]
    cdef f64 gam[4]
    cdef f64 u[2]
    cdef f64 tvec[3]
    cdef f64 dvec[3]
    cdef f64 jdet, mu, lam, gma, vol, wsq, coef, dsc
    cdef f64 length, d, tmp, kc, lamc, unorm, ratio, f1, r
    cdef i64 kk, t, sp, cid, oth, slot
    cdef int a, b, k
    for a in range(3):
        f[a] = mih2 * (s.y[i * 3 + a] - s.x[i * 3 + a])
        for b in range(3):
            hm[a * 3 + b] = mih2 if a == b else 0.0

    for kk in range(s.t_off[i], s.t_off[i + 1]):
        t = s.t_id[kk]
        slot = s.t_slot[kk]
        _tet_fc(s, t, i, &s.x[i * 3], fmat, cof, &jdet)
        mu = s.tet_mu[t]
        lam = s.tet_lam[t]
        gma = 1.0 + mu / lam
        vol = s.tet_vol[t]
        wsq = 0.0
        for a in range(3):
            w[a] = s.tet_w[t * 12 + slot * 3 + a]
            wsq += w[a] * w[a]
        for a in range(3):
            cw[a] = 0.0
            for b in range(3):
                cw[a] += cof[a * 3 + b] * w[b]
        coef = lam * (jdet - gma)
        for a in range(3):
            tmp = 0.0
            for b in range(3):
                tmp += (mu * fmat[a * 3 + b] + coef * cof[a * 3 + b]) * w[b]
            f[a] -= vol * tmp
        for a in range(3):
            for b in range(3):
                he[a * 3 + b] = vol * (lam * cw[a] * cw[b]
                                       + (mu * wsq if a == b else 0.0))
        dsc = s.tet_kd[t] / s.h
        for a in range(3):
            tmp = 0.0
            for b in range(3):
                tmp += he[a * 3 + b] * (s.x[i * 3 + b] - s.xt[i * 3 + b])
            f[a] -= dsc * tmp
        for a in range(3):
            for b in range(3):
                hm[a * 3 + b] += (1.0 + dsc) * he[a * 3 + b]

    for kk in range(s.s_off[i], s.s_off[i + 1]):
        sp = s.s_id[kk]
        oth = s.springs[sp * 2 + (1 - s.s_slot[kk])]
        length = 0.0
        for a in range(3):
            dvec[a] = s.x[i * 3 + a] - s.x[oth * 3 + a]
            length += dvec[a] * dvec[a]
        length = sqrt(length)
        if length < 1e-12 * s.sp_l0[sp]:
            for a in range(3):
                for b in range(3):
                    he[a * 3 + b] = s.sp_k[sp] if a == b else 0.0
        else:
            for a in range(3):
                dvec[a] /= length
            coef = 1.0 - s.sp_l0[sp] / length
            for a in range(3):
                f[a] -= s.sp_k[sp] * (length - s.sp_l0[sp]) * dvec[a]
                for b in range(3):
                    he[a * 3 + b] = s.sp_k[sp] * (
                        dvec[a] * dvec[b]
                        + coef * ((1.0 if a == b else 0.0) - dvec[a] * dvec[b]))
        dsc = s.sp_kd[sp] / s.h
        for a in range(3):
            tmp = 0.0
            for b in range(3):
                tmp += he[a * 3 + b] * (s.x[i * 3 + b] - s.xt[i * 3 + b])
            f[a] -= dsc * tmp
        for a in range(3):
            for b in range(3):
                hm[a * 3 + b] += (1.0 + dsc) * he[a * 3 + b]

    for kk in range(s.cv_off[i], s.cv_off[i + 1]):
        cid = s.cv_cid[kk]
        slot = s.cv_slot[kk]
        _contact_gamma(s, cid, gam)
        d = 0.0
        for k in range(4):
            oth = s.c_idx[cid * 4 + k]
            for a in range(3):
                d -= gam[k] * s.c_n[cid * 3 + a] * s.x[oth * 3 + a]
        if d <= 0.0:
            continue
        kc = s.c_kc[cid]
        coef = kc * d * gam[slot]
        for a in range(3):
            f[a] += coef * s.c_n[cid * 3 + a]
        coef = kc * gam[slot] * gam[slot]
        for a in range(3):
            for b in range(3):
                hm[a * 3 + b] += coef * s.c_n[cid * 3 + a] * s.c_n[cid * 3 + b]
        if s.mu_c > 0.0:
            lamc = kc * d
            for a in range(3):
                dvec[a] = 0.0
            for k in range(4):
                oth = s.c_idx[cid * 4 + k]
                for a in range(3):
                    dvec[a] += gam[k] * (s.x[oth * 3 + a] - s.xt[oth * 3 + a])
            for k in range(2):
                u[k] = 0.0
                for a in range(3):
                    u[k] += s.c_t[cid * 6 + a * 2 + k] * dvec[a]
            unorm = sqrt(u[0] * u[0] + u[1] * u[1])
            if unorm < 1e-14:
                ratio = 2.0 / s.eps_u
            else:
                r = unorm / s.eps_u
                f1 = 1.0 if unorm >= s.eps_u else 2.0 * r - r * r
                ratio = f1 / unorm
                coef = -s.mu_c * lamc * gam[slot] * ratio
                for a in range(3):
                    tvec[a] = (s.c_t[cid * 6 + a * 2 + 0] * u[0]
                               + s.c_t[cid * 6 + a * 2 + 1] * u[1])
                    f[a] += coef * tvec[a]
            coef = s.mu_c * lamc * gam[slot] * gam[slot] * ratio
            for a in range(3):
                for b in range(3):
                    hm[a * 3 + b] += coef * (
                        s.c_t[cid * 6 + a * 2 + 0] * s.c_t[cid * 6 + b * 2 + 0]
                        + s.c_t[cid * 6 + a * 2 + 1] * s.c_t[cid * 6 + b * 2 + 1])

    if s.box_k[i] > 0.0:
        for a in range(3):
            tmp = s.x[i * 3 + a]
            if tmp < s.box_lo[i * 3 + a]:
                f[a] -= s.box_k[i] * (tmp - s.box_lo[i * 3 + a])
                hm[a * 3 + a] += s.box_k[i]
            elif tmp > s.box_hi[i * 3 + a]:
                f[a] -= s.box_k[i] * (tmp - s.box_hi[i * 3 + a])
                hm[a * 3 + a] += s.box_k[i]


cdef void _solve_vertex(const SysData* s, i64 i, f64* out) nogil:
    cdef f64 f[3]
    cdef f64 hm[9]
    cdef f64 delta[3]
    cdef f64 cand[3]
    cdef f64 adj[9]
    cdef f64 amat[4]
    cdef f64 rhs[2]
    cdef f64 det, tr, e0, alpha, q0, q1
    cdef i64 dim
    cdef int a, b, k, trial
    for a in range(3):
        out[a] = s.x[i * 3 + a]
    if s.kind[i] == KIND_FIXED:
        return
    _assemble(s, i, f, hm)
    for a in range(3):
        delta[a] = 0.0

    if s.mode == 1:
        for a in range(3):
            if hm[a * 3 + a] != 0.0:
                delta[a] = f[a] / hm[a * 3 + a]
    elif s.kind[i] == KIND_SUBSPACE:
        dim = s.sub_dim[i]
        for a in range(dim):
            rhs[a] = 0.0
            for k in range(3):
                rhs[a] += s.sub_basis[i * 6 + k * 2 + a] * f[k]
            for b in range(dim):
                amat[a * 2 + b] = 0.0
                for k in range(3):
                    q0 = 0.0
                    for trial in range(3):
                        q0 += hm[k * 3 + trial] * s.sub_basis[i * 6 + trial * 2 + b]
                    amat[a * 2 + b] += s.sub_basis[i * 6 + k * 2 + a] * q0
        if dim == 1:
            det = amat[0]
            tr = amat[0]
            if fabs(det) > s.eps_det * fabs(tr):
                q0 = rhs[0] / amat[0]
                for a in range(3):
                    delta[a] = s.sub_basis[i * 6 + a * 2] * q0
        else:
            det = amat[0] * amat[3] - amat[1] * amat[2]
            tr = 0.5 * (amat[0] + amat[3])
            if fabs(det) > s.eps_det * tr * tr:
                q0 = (amat[3] * rhs[0] - amat[1] * rhs[1]) / det
                q1 = (amat[0] * rhs[1] - amat[2] * rhs[0]) / det
                for a in range(3):
                    delta[a] = (s.sub_basis[i * 6 + a * 2] * q0
                                + s.sub_basis[i * 6 + a * 2 + 1] * q1)
    else:
        adj[0] = hm[4] * hm[8] - hm[5] * hm[7]
        adj[1] = hm[2] * hm[7] - hm[1] * hm[8]
        adj[2] = hm[1] * hm[5] - hm[2] * hm[4]
        adj[3] = hm[5] * hm[6] - hm[3] * hm[8]
        adj[4] = hm[0] * hm[8] - hm[2] * hm[6]
        adj[5] = hm[2] * hm[3] - hm[0] * hm[5]
        adj[6] = hm[3] * hm[7] - hm[4] * hm[6]
        adj[7] = hm[1] * hm[6] - hm[0] * hm[7]
        adj[8] = hm[0] * hm[4] - hm[1] * hm[3]
        det = hm[0] * adj[0] + hm[1] * adj[3] + hm[2] * adj[6]
        tr = (hm[0] + hm[4] + hm[8]) / 3.0
        if fabs(det) > s.eps_det * tr * tr * tr:
            for a in range(3):
                delta[a] = (adj[a * 3 + 0] * f[0] + adj[a * 3 + 1] * f[1]
                            + adj[a * 3 + 2] * f[2]) / det

    if s.line_search and s.mode == 0:
        e0 = _local_energy(s, i, &s.x[i * 3])
        alpha = 1.0
        for trial in range(17):
            for a in range(3):
                cand[a] = s.x[i * 3 + a] + alpha * delta[a]
            if _local_energy(s, i, cand) <= e0:
                for a in range(3):
                    out[a] = cand[a]
                return
            alpha *= 0.5
        return
    for a in range(3):
        out[a] = s.x[i * 3 + a] + delta[a]


cdef inline f64* _fp(object arr):
    return <f64*> cnp.PyArray_DATA(<cnp.ndarray> arr)


cdef inline i64* _ip(object arr):
    return <i64*> cnp.PyArray_DATA(<cnp.ndarray> arr)


cdef inline unsigned char* _bp(object arr):
    return <unsigned char*> cnp.PyArray_DATA(<cnp.ndarray> arr)


def max_threads():
    return openmp.omp_get_max_threads()


def color_pass(system, carr, x, x_t, y, double h, group, int mode=0,
               line_search=False, double eps_det=1e-10, double mu_c=0.0,
               double eps_v=1e-2, int n_threads=0):
    """One auxiliary-buffer pass over `group`, updating x in place."""
    cdef SysData s
    cdef cnp.ndarray g = np.ascontiguousarray(group, dtype=np.int64)
    cdef i64 ng = g.shape[0]
    if ng == 0:
        return
    if x.dtype != np.float64 or not x.flags["C_CONTIGUOUS"]:
        raise TypeError("x must be C-contiguous float64")

    s.x = _fp(x)
    s.xt = _fp(x_t)
    s.y = _fp(y)
    s.masses = _fp(system.masses)
    s.n_tets = system.tets.shape[0]
    s.tets = _ip(system.tets)
    s.tet_w = _fp(system.tet_w)
    s.tet_vol = _fp(system.tet_vol)
    s.tet_mu = _fp(system.tet_mu)
    s.tet_lam = _fp(system.tet_lam)
    s.tet_kd = _fp(system.tet_kd)
    s.t_off = _ip(system.t_off)
    s.t_id = _ip(system.t_id)
    s.t_slot = _ip(system.t_slot)
    s.n_springs = system.springs.shape[0]
    s.springs = _ip(system.springs)
    s.sp_l0 = _fp(system.sp_l0)
    s.sp_k = _fp(system.sp_k)
    s.sp_kd = _fp(system.sp_kd)
    s.s_off = _ip(system.s_off)
    s.s_id = _ip(system.s_id)
    s.s_slot = _ip(system.s_slot)
    cons = system.cons
    s.kind = _bp(cons.kind)
    s.sub_dim = _ip(cons.sub_dim)
    s.sub_basis = _fp(cons.sub_basis)
    s.sub_anchor = _fp(cons.sub_anchor)
    s.box_k = _fp(cons.box_k)
    s.box_lo = _fp(cons.box_lo)
    s.box_hi = _fp(cons.box_hi)
    empty = None
    if carr is None:
        from ._system import compile_contacts
        carr = compile_contacts([], system.num_vertices)
        empty = carr
    s.n_contacts = carr.count
    s.c_idx = _ip(carr.idx)
    s.c_gamma = _fp(carr.gamma)
    s.c_refresh = _bp(carr.refresh)
    s.c_n = _fp(carr.normal)
    s.c_t = _fp(carr.tangent)
    s.c_kc = _fp(carr.k_c)
    s.cv_off = _ip(carr.cv_off)
    s.cv_cid = _ip(carr.cv_cid)
    s.cv_slot = _ip(carr.cv_slot)
    s.h = h
    s.eps_det = eps_det
    s.mu_c = mu_c
    s.eps_u = eps_v * h
    s.line_search = 1 if line_search else 0
    s.mode = mode

    cdef cnp.ndarray out = np.empty((ng, 3), dtype=np.float64)
    cdef f64* op = _fp(out)
    cdef i64* gp = _ip(g)
    cdef i64 kk, vid
    cdef int nt = n_threads if n_threads > 0 else openmp.omp_get_max_threads()
    with nogil:
        for kk in prange(ng, num_threads=nt, schedule="static"):
            _solve_vertex(&s, gp[kk], &op[kk * 3])
        for kk in range(ng):
            vid = gp[kk]
            s.x[vid * 3 + 0] = op[kk * 3 + 0]
            s.x[vid * 3 + 1] = op[kk * 3 + 1]
            s.x[vid * 3 + 2] = op[kk * 3 + 2]
