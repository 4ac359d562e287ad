"""Independent reference computations used to validate the library.

Everything here is deliberately written by a different route than the package
code: finite differences instead of analytic derivatives, candidate
enumeration instead of region classification, dense time sampling instead of
cubic root finding, brute-force scans instead of CSR bookkeeping.
"""

import numpy as np


def fd_gradient(f, x, eps):
    """Central-difference gradient of scalar f at x (any array shape)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for k in range(flat.size):
        xp = flat.copy(); xp[k] += eps
        xm = flat.copy(); xm[k] -= eps
        gflat[k] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * eps)
    return g


def fd_jacobian(g, x, eps):
    """Central-difference Jacobian of vector-valued g at x."""
    x = np.asarray(x, dtype=np.float64)
    g0 = np.asarray(g(x), dtype=np.float64)
    jac = np.zeros((g0.size, x.size))
    flat = x.ravel()
    for k in range(flat.size):
        xp = flat.copy(); xp[k] += eps
        xm = flat.copy(); xm[k] -= eps
        jac[:, k] = (np.asarray(g(xp.reshape(x.shape))).ravel()
                     - np.asarray(g(xm.reshape(x.shape))).ravel()) / (2 * eps)
    return jac


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return np.abs(a - b).max(initial=0.0) / scale


def closest_point_triangle_oracle(p, a, b, c):
    """Closest point on triangle abc to p by candidate enumeration.

    Candidates: the unconstrained in-plane minimizer if its barycentrics are
    feasible, each edge's clamped projection, and each vertex. The nearest
    feasible candidate wins. Returns (point, (w_a, w_b, w_c)).
    """
    candidates = []
    e1, e2 = b - a, c - a
    m = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
    rhs = np.array([e1 @ (p - a), e2 @ (p - a)])
    det = np.linalg.det(m)
    if abs(det) > 1e-30:
        u, v = np.linalg.solve(m, rhs)
        if u >= 0 and v >= 0 and u + v <= 1:
            candidates.append((a + u * e1 + v * e2, (1 - u - v, u, v)))
    for (q, r), (wq, wr) in (((a, b), (0, 1)), ((b, c), (1, 2)), ((c, a), (2, 0))):
        d = r - q
        t = np.clip((p - q) @ d / (d @ d), 0.0, 1.0)
        w = [0.0, 0.0, 0.0]
        w[wq] = 1 - t
        w[wr] += t
        candidates.append((q + t * d, tuple(w)))
    for i, q in enumerate((a, b, c)):
        w = [0.0, 0.0, 0.0]
        w[i] = 1.0
        candidates.append((q, tuple(w)))
    best = min(candidates, key=lambda cw: np.linalg.norm(p - cw[0]))
    return best


def sample_ccd_vt(p0, p1, tri0, tri1, samples=1000, bary_tol=1e-8):
    """Earliest vertex-triangle crossing by dense sampling plus bisection.

    Scans the signed coplanarity volume for a sign change with the vertex
    projecting inside the triangle; refines the bracketing interval by
    bisection. Returns toi in [0,1] or None.
    """
    def state(t):
        p = p0 + t * (p1 - p0)
        tri = tri0 + t * (tri1 - tri0)
        e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
        n = np.cross(e1, e2)
        vol = (p - tri[0]) @ n
        m = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        if abs(np.linalg.det(m)) < 1e-30:
            return vol, False
        u, v = np.linalg.solve(m, np.array([e1 @ (p - tri[0]),
                                            e2 @ (p - tri[0])]))
        inside = (u >= -bary_tol and v >= -bary_tol
                  and u + v <= 1.0 + bary_tol)
        return vol, inside

    ts = np.linspace(0.0, 1.0, samples + 1)
    prev_vol, _ = state(ts[0])
    for k in range(1, len(ts)):
        vol, _ = state(ts[k])
        if vol == 0.0 or np.sign(vol) != np.sign(prev_vol) or prev_vol == 0.0:
            lo, hi = ts[k - 1], ts[k]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                vmid, _ = state(mid)
                if vmid == 0.0 or np.sign(vmid) == np.sign(vol):
                    hi = mid
                else:
                    lo = mid
            toi = 0.5 * (lo + hi)
            if state(toi)[1]:
                return toi
        prev_vol = vol
    return None


def closest_params_segments(p1, q1, p2, q2):
    """Clamped closest-point parameters (s, t) between segments p1q1 and p2q2."""
    d1, d2 = q1 - p1, q2 - p2
    r = p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    b, c = d1 @ d2, d1 @ r
    denom = a * e - b * b
    s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-30 else 0.0
    t = (b * s + f) / e if e > 1e-30 else 0.0
    if t < 0.0:
        t = 0.0
        s = np.clip(-c / a, 0.0, 1.0) if a > 1e-30 else 0.0
    elif t > 1.0:
        t = 1.0
        s = np.clip((b - c) / a, 0.0, 1.0) if a > 1e-30 else 0.0
    return float(s), float(t)


def sample_ccd_ee(a0, a1, b0, b1, a0e, a1e, b0e, b1e, samples=1000):
    """Earliest edge-edge crossing by dense sampling of the coplanarity
    volume with interior closest points; bisection-refined. Edge one runs
    a0->a1, edge two b0->b1; `*e` are positions at t=1."""
    def lerp(s, e, t):
        return s + t * (e - s)

    def vol(t):
        pa0, pa1 = lerp(a0, a0e, t), lerp(a1, a1e, t)
        pb0, pb1 = lerp(b0, b0e, t), lerp(b1, b1e, t)
        return np.cross(pa1 - pa0, pb1 - pb0) @ (pb0 - pa0)

    def interior(t):
        pa0, pa1 = lerp(a0, a0e, t), lerp(a1, a1e, t)
        pb0, pb1 = lerp(b0, b0e, t), lerp(b1, b1e, t)
        s, u = closest_params_segments(pa0, pa1, pb0, pb1)
        eps = 1e-8
        return eps <= s <= 1 - eps and eps <= u <= 1 - eps

    ts = np.linspace(0.0, 1.0, samples + 1)
    prev = vol(ts[0])
    for k in range(1, len(ts)):
        v = vol(ts[k])
        if v == 0.0 or np.sign(v) != np.sign(prev) or prev == 0.0:
            lo, hi = ts[k - 1], ts[k]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if np.sign(vol(mid)) == np.sign(v) or vol(mid) == 0.0:
                    hi = mid
                else:
                    lo = mid
            toi = 0.5 * (lo + hi)
            if interior(toi):
                return toi
        prev = v
    return None


def coloring_is_valid(elements, color_of):
    """True iff no element repeats a color among its vertices."""
    for ele in np.asarray(elements):
        cols = [color_of[v] for v in ele]
        if len(set(cols)) != len(cols):
            return False
    return True


def incident_elements_scan(elements, num_vertices):
    """Brute-force F_i: for each vertex, element ids that contain it."""
    out = [[] for _ in range(num_vertices)]
    for eid, ele in enumerate(np.asarray(elements)):
        for v in ele:
            out[v].append(eid)
    return out
