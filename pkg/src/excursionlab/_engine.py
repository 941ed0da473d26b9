"""Compiled exact engine: pieces, nerve inclusion-exclusion and half-open tiling.

Polygons live in fixed ``(MAXV, 2)`` buffers with an explicit vertex count, so
the inner loops allocate nothing.  Kernel data for a whole sample is packed once
into flat arrays (see :func:`pack`), already translated to the point positions.

Status codes returned by the drivers: ``OK``, ``OVERFLOW`` (a cap was hit; the
caller should fall back to the raster engine).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MAXV = 48
OK = 0
OVERFLOW = 1
HEIGHT_TOL = 1e-12


# -- polygon buffers ----------------------------------------------------------

@njit(cache=True)
def _d2(ax, ay, bx, by):
    return (ax - bx) ** 2 + (ay - by) ** 2


@njit(cache=True)
def _line_dist(px, py, qx, qy, rx, ry):
    dx = qx - px
    dy = qy - py
    return abs(dx * (ry - py) - dy * (rx - px)) / math.sqrt(dx * dx + dy * dy)


@njit(cache=True)
def canon(buf, n, eps):
    """In-place canonical form; mirrors ``geometry.canonicalize``."""
    eps2 = eps * eps
    m = 0
    for i in range(n):
        x = buf[i, 0]
        y = buf[i, 1]
        if m == 0 or _d2(x, y, buf[m - 1, 0], buf[m - 1, 1]) > eps2:
            buf[m, 0] = x
            buf[m, 1] = y
            m += 1
    while m > 1 and _d2(buf[0, 0], buf[0, 1], buf[m - 1, 0], buf[m - 1, 1]) <= eps2:
        m -= 1
    if m <= 1:
        return m
    f = 0
    best = -1.0
    for i in range(m):
        d = _d2(buf[i, 0], buf[i, 1], buf[0, 0], buf[0, 1])
        if d > best:
            best = d
            f = i
    o = 0
    best = -1.0
    for i in range(m):
        d = _d2(buf[i, 0], buf[i, 1], buf[f, 0], buf[f, 1])
        if d > best:
            best = d
            o = i
    if best <= eps2:
        return 1
    fx, fy, ox, oy = buf[f, 0], buf[f, 1], buf[o, 0], buf[o, 1]
    flat = True
    if m > 2:
        for i in range(m):
            if _line_dist(fx, fy, ox, oy, buf[i, 0], buf[i, 1]) > eps:
                flat = False
                break
    if flat:
        if (fx, fy) > (ox, oy):
            fx, fy, ox, oy = ox, oy, fx, fy
        buf[0, 0] = fx
        buf[0, 1] = fy
        buf[1, 0] = ox
        buf[1, 1] = oy
        return 2
    changed = True
    while changed and m > 3:
        changed = False
        for i in range(m):
            ip = i - 1 if i > 0 else m - 1
            inx = i + 1 if i + 1 < m else 0
            if _line_dist(buf[ip, 0], buf[ip, 1], buf[inx, 0], buf[inx, 1], buf[i, 0], buf[i, 1]) <= eps:
                for t in range(i, m - 1):
                    buf[t, 0] = buf[t + 1, 0]
                    buf[t, 1] = buf[t + 1, 1]
                m -= 1
                changed = True
                break
    return m


@njit(cache=True)
def copy_poly(src, n, dst):
    for i in range(n):
        dst[i, 0] = src[i, 0]
        dst[i, 1] = src[i, 1]
    return n


@njit(cache=True)
def clip_hp(src, n, a, b, c, dst, eps):
    """``src`` intersected with ``a*x + b*y <= c`` into ``dst``; -1 on overflow."""
    if n == 0:
        return 0
    all_in = True
    all_out = True
    for i in range(n):
        s = a * src[i, 0] + b * src[i, 1] - c
        if s <= eps:
            all_out = False
        else:
            all_in = False
    if all_in:
        return copy_poly(src, n, dst)
    if all_out:
        return 0
    m = 0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        xi, yi = src[i, 0], src[i, 1]
        xj, yj = src[j, 0], src[j, 1]
        si = a * xi + b * yi - c
        sj = a * xj + b * yj - c
        if m + 2 > dst.shape[0]:
            return -1
        if si <= eps:
            dst[m, 0] = xi
            dst[m, 1] = yi
            m += 1
            if sj > eps and si < -eps:
                t = si / (si - sj)
                dst[m, 0] = xi + t * (xj - xi)
                dst[m, 1] = yi + t * (yj - yi)
                m += 1
        elif sj < -eps:
            t = si / (si - sj)
            dst[m, 0] = xi + t * (xj - xi)
            dst[m, 1] = yi + t * (yj - yi)
            m += 1
    return canon(dst, m, eps)


@njit(cache=True)
def hps_of(p, n, out):
    """Half-planes of a canonical body (4 for points and segments)."""
    if n == 1:
        x, y = p[0, 0], p[0, 1]
        out[0, 0], out[0, 1], out[0, 2] = 1.0, 0.0, x
        out[1, 0], out[1, 1], out[1, 2] = -1.0, 0.0, -x
        out[2, 0], out[2, 1], out[2, 2] = 0.0, 1.0, y
        out[3, 0], out[3, 1], out[3, 2] = 0.0, -1.0, -y
        return 4
    if n == 2:
        px, py, qx, qy = p[0, 0], p[0, 1], p[1, 0], p[1, 1]
        ln = math.sqrt((qx - px) ** 2 + (qy - py) ** 2)
        dx = (qx - px) / ln
        dy = (qy - py) / ln
        nx, ny = -dy, dx
        out[0, 0], out[0, 1], out[0, 2] = nx, ny, nx * px + ny * py
        out[1, 0], out[1, 1], out[1, 2] = -nx, -ny, -(nx * px + ny * py)
        out[2, 0], out[2, 1], out[2, 2] = dx, dy, dx * qx + dy * qy
        out[3, 0], out[3, 1], out[3, 2] = -dx, -dy, -(dx * px + dy * py)
        return 4
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        a = p[j, 1] - p[i, 1]
        b = p[i, 0] - p[j, 0]
        ln = math.sqrt(a * a + b * b)
        a /= ln
        b /= ln
        out[i, 0], out[i, 1], out[i, 2] = a, b, a * p[i, 0] + b * p[i, 1]
    return n


@njit(cache=True)
def _dimcat(n):
    return n if n < 3 else 3


@njit(cache=True)
def clip_body(pa, na, pb, nb, dst, tmp, hpbuf, eps):
    """``pa`` intersected with ``pb``; the lower-dimensional operand is clipped."""
    if na == 0 or nb == 0:
        return 0
    if _dimcat(na) > _dimcat(nb):
        pa, na, pb, nb = pb, nb, pa, na
    nh = hps_of(pb, nb, hpbuf)
    m = copy_poly(pa, na, dst)
    for h in range(nh):
        m2 = clip_hp(dst, m, hpbuf[h, 0], hpbuf[h, 1], hpbuf[h, 2], tmp, eps)
        if m2 <= 0:
            return m2
        m = copy_poly(tmp, m2, dst)
    return m


@njit(cache=True)
def clip_hps(src, n, hps, h0, h1, dst, tmp, eps):
    """``src`` clipped by rows ``h0:h1`` of a half-plane table."""
    m = copy_poly(src, n, dst)
    for h in range(h0, h1):
        m2 = clip_hp(dst, m, hps[h, 0], hps[h, 1], hps[h, 2], tmp, eps)
        if m2 <= 0:
            return m2
        m = copy_poly(tmp, m2, dst)
    return m


@njit(cache=True)
def ivols(p, n):
    if n == 0:
        return 0.0, 0.0, 0.0
    if n == 1:
        return 1.0, 0.0, 0.0
    if n == 2:
        return 1.0, math.sqrt(_d2(p[0, 0], p[0, 1], p[1, 0], p[1, 1])), 0.0
    per = 0.0
    ar = 0.0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        per += math.sqrt(_d2(p[i, 0], p[i, 1], p[j, 0], p[j, 1]))
        ar += p[i, 0] * p[j, 1] - p[j, 0] * p[i, 1]
    return 1.0, 0.5 * per, 0.5 * ar


@njit(cache=True)
def _bbox(p, n, out):
    out[0] = p[0, 0]
    out[1] = p[0, 1]
    out[2] = p[0, 0]
    out[3] = p[0, 1]
    for i in range(1, n):
        out[0] = min(out[0], p[i, 0])
        out[1] = min(out[1], p[i, 1])
        out[2] = max(out[2], p[i, 0])
        out[3] = max(out[3], p[i, 1])


@njit(cache=True)
def _overlap(b1, b2, eps):
    return not (b1[0] > b2[2] + eps or b2[0] > b1[2] + eps or b1[1] > b2[3] + eps or b2[1] > b1[3] + eps)


# -- workspace ----------------------------------------------------------------

class Workspace:
    """Preallocated buffers for one evaluation thread."""

    def __init__(self, n_points: int, piece_cap: int = 4096, max_depth: int = 24):
        mloc = max(n_points, 1)
        self.S = np.empty((mloc + 2, MAXV, 2))
        self.X = np.empty((MAXV, 2))
        self.tmp = np.empty((MAXV, 2))
        self.hpbuf = np.empty((MAXV, 3))
        self.pieces = np.empty((piece_cap, MAXV, 2))
        self.pn = np.empty(piece_cap, dtype=np.int64)
        self.pbox = np.empty((piece_cap, 4))
        self.pmask = np.empty(piece_cap, dtype=np.int64)
        self.nerve = np.empty((piece_cap + 2, MAXV, 2))
        self.ints = np.empty((piece_cap, 2))
        stack = 4 * max_depth + 8
        self.stack = np.empty((stack, 4))
        self.cand = np.empty((stack, mloc), dtype=np.int64)
        self.ncand = np.empty(stack, dtype=np.int64)
        self.cell = np.empty((4, MAXV, 2))
        self.ibuf = np.empty((4, mloc + 2), dtype=np.int64)
        self.fbuf = np.empty((2, mloc + 2))

    def args(self):
        return (self.S, self.X, self.tmp, self.hpbuf, self.pieces, self.pn, self.pbox, self.pmask,
                self.nerve, self.ints, self.stack, self.cand, self.ncand, self.cell, self.ibuf, self.fbuf)


# -- superlevel set by cutting planes -----------------------------------------

@njit(cache=True)
def superlevel(S, nS, idx, nI, pc_off, pcs, u, X, tmp, eps, cut_cap):
    """``{y in S : sum_j min_p piece_jp(y) >= u}`` by active-combination cuts.

    Returns (vertex count, number of cuts, status).  A cut is the half-plane of
    the piece combination active at the most violated vertex; every cut is one
    of the product half-planes, so the result equals the full product clip.
    """
    nX = copy_poly(S, nS, X)
    ncuts = 0
    tol = HEIGHT_TOL * max(1.0, abs(u))
    while True:
        best = eps
        found = False
        ba = 0.0
        bb = 0.0
        bc = 0.0
        bn = 1.0
        for v in range(nX):
            x = X[v, 0]
            y = X[v, 1]
            val = 0.0
            ga = 0.0
            gb = 0.0
            gc = 0.0
            for t in range(nI):
                j = idx[t]
                mn = np.inf
                pa = 0.0
                pb = 0.0
                pc = 0.0
                for p in range(pc_off[j], pc_off[j + 1]):
                    w = pcs[p, 0] * x + pcs[p, 1] * y + pcs[p, 2]
                    if w < mn:
                        mn = w
                        pa = pcs[p, 0]
                        pb = pcs[p, 1]
                        pc = pcs[p, 2]
                val += mn
                ga += pa
                gb += pb
                gc += pc
            if val < u - tol:
                nrm = math.sqrt(ga * ga + gb * gb)
                if nrm < 1e-14:
                    return 0, ncuts, OK
                dist = (u - val) / nrm
                if dist > best:
                    best = dist
                    found = True
                    ba, bb, bc, bn = ga, gb, gc, nrm
        if not found:
            return nX, ncuts, OK
        ncuts += 1
        if ncuts > cut_cap:
            return nX, ncuts, OVERFLOW
        m = clip_hp(X, nX, -ba / bn, -bb / bn, (bc - u) / bn, tmp, eps)
        if m < 0:
            return nX, ncuts, OVERFLOW
        nX = copy_poly(tmp, m, X)
        if nX == 0:
            return 0, ncuts, OK


# -- local piece enumeration --------------------------------------------------

@njit(cache=True)
def _contains_poly(hps, h0, h1, poly, n, eps):
    for h in range(h0, h1):
        for v in range(n):
            if hps[h, 0] * poly[v, 0] + hps[h, 1] * poly[v, 1] - hps[h, 2] > eps:
                return False
    return True


@njit(cache=True)
def local_pieces(region, nreg, loc, nloc, hp_off, hps, pc_off, pcs, hmax, u, eps,
                 reduce, cut_cap, subset_cap,
                 S, X, tmp, pieces, pn, pbox, pmask, idxbuf, suf, hs):
    """Nonempty pieces X_I (I within ``loc``) inside ``region``; (count, status).

    Depth-first subset growth with the empty-support prune and the max-height
    prune.  With ``reduce`` only closed sets are visited (I holds every point
    whose support contains the common support S_I; any other I has X_I inside
    the piece of its closure), each once via a prefix-preserving check, and
    supersets of an I whose superlevel constraint is inactive on S_I are
    skipped (their pieces lie inside X_I).  The union is unchanged.
    ``pmask`` holds bitmasks over positions in ``loc`` when ``nloc <= 62``.
    """
    cap = pieces.shape[0]
    suf[nloc] = 0.0
    for k in range(nloc - 1, -1, -1):
        suf[k] = suf[k + 1] + hmax[loc[k]]
    tol = HEIGHT_TOL * max(1.0, abs(u))
    nS0 = copy_poly(region, nreg, S[0])
    if nS0 == 0:
        return 0, OK
    nxt = idxbuf[0]
    chosen = idxbuf[1]
    chpos = idxbuf[2]
    nsz = np.empty(nloc + 2, dtype=np.int64)
    clen = np.zeros(nloc + 2, dtype=np.int64)
    inset = np.zeros(nloc + 1, dtype=np.bool_)
    nsz[0] = nS0
    hs[0] = 0.0
    nxt[0] = 0
    d = 0
    npieces = 0
    nsub = 0
    while d >= 0:
        k = nxt[d]
        while k < nloc and inset[k]:
            k += 1
        if k >= nloc or hs[d] + suf[k] < u - tol:
            if d > 0:
                for t in range(clen[d - 1], clen[d]):
                    inset[chpos[t]] = False
            d -= 1
            continue
        nxt[d] = k + 1
        j = loc[k]
        m = clip_hps(S[d], nsz[d], hps, hp_off[j], hp_off[j + 1], S[d + 1], tmp, eps)
        nsub += 1
        if m < 0 or nsub > subset_cap:
            return npieces, OVERFLOW
        if m == 0:
            continue
        base = clen[d]
        c = base
        h = hs[d] + hmax[j]
        chosen[c] = j
        chpos[c] = k
        c += 1
        if reduce:
            skip = False
            for q in range(k):
                if not inset[q]:
                    jq = loc[q]
                    if _contains_poly(hps, hp_off[jq], hp_off[jq + 1], S[d + 1], m, eps):
                        skip = True
                        break
            if skip:
                continue
            for q in range(k + 1, nloc):
                if not inset[q]:
                    jq = loc[q]
                    if _contains_poly(hps, hp_off[jq], hp_off[jq + 1], S[d + 1], m, eps):
                        chosen[c] = jq
                        chpos[c] = q
                        h += hmax[jq]
                        c += 1
        full = False
        if h >= u - tol:
            nX, ncuts, st = superlevel(S[d + 1], m, chosen, c, pc_off, pcs, u, X, tmp, eps, cut_cap)
            if st != OK:
                return npieces, OVERFLOW
            if nX > 0:
                if npieces >= cap:
                    return npieces, OVERFLOW
                copy_poly(X, nX, pieces[npieces])
                pn[npieces] = nX
                _bbox(X, nX, pbox[npieces])
                mask = 0
                if nloc <= 62:
                    for t in range(c):
                        mask |= 1 << chpos[t]
                pmask[npieces] = mask
                npieces += 1
                full = ncuts == 0
        if reduce and full:
            continue
        for t in range(base, c):
            inset[chpos[t]] = True
        clen[d + 1] = c
        nsz[d + 1] = m
        hs[d + 1] = h
        d += 1
        nxt[d] = k + 1
    return npieces, OK


@njit(cache=True)
def _inside_all(pp, n, hpbuf, nh, eps):
    for v in range(n):
        for h in range(nh):
            if hpbuf[h, 0] * pp[v, 0] + hpbuf[h, 1] * pp[v, 1] - hpbuf[h, 2] > eps:
                return False
    return True


@njit(cache=True)
def drop_contained(pieces, pn, pbox, pmask, npieces, hpbuf, eps):
    """Remove pieces contained in another piece; returns the new count."""
    alive = np.ones(npieces, dtype=np.bool_)
    for k in range(npieces):
        nh = hps_of(pieces[k], pn[k], hpbuf)
        for i in range(npieces):
            if i == k or not alive[i] or not alive[k]:
                continue
            bi = pbox[i]
            bk = pbox[k]
            if bi[0] < bk[0] - eps or bi[1] < bk[1] - eps or bi[2] > bk[2] + eps or bi[3] > bk[3] + eps:
                continue
            if _inside_all(pieces[i], pn[i], hpbuf, nh, eps):
                alive[i] = False
    m = 0
    for i in range(npieces):
        if alive[i]:
            if m != i:
                copy_poly(pieces[i], pn[i], pieces[m])
                pn[m] = pn[i]
                pbox[m, :] = pbox[i, :]
                pmask[m] = pmask[i]
            m += 1
    return m


# -- inclusion-exclusion over the nerve ---------------------------------------

@njit(cache=True)
def nerve_ivols(pieces, pn, pbox, npieces, nerve, tmp, tmp2, hpbuf, eps, nerve_cap, nxt, nsz, boxes):
    """Sum of (-1)^(|J|+1) V(cap_J) over nonempty intersections; (v0, v1, v2, status)."""
    v0 = 0.0
    v1 = 0.0
    v2 = 0.0
    count = 0
    for i in range(npieces):
        a0, a1, a2 = ivols(pieces[i], pn[i])
        v0 += a0
        v1 += a1
        v2 += a2
        count += 1
        copy_poly(pieces[i], pn[i], nerve[1])
        nsz[1] = pn[i]
        boxes[1, :] = pbox[i, :]
        nxt[1] = i + 1
        d = 1
        while d >= 1:
            j = nxt[d]
            if j >= npieces:
                d -= 1
                continue
            nxt[d] = j + 1
            if not _overlap(boxes[d], pbox[j], eps):
                continue
            m = clip_body(nerve[d], nsz[d], pieces[j], pn[j], nerve[d + 1], tmp, hpbuf, eps)
            if m < 0:
                return v0, v1, v2, OVERFLOW
            if m == 0:
                continue
            count += 1
            if count > nerve_cap:
                return v0, v1, v2, OVERFLOW
            b0, b1, b2 = ivols(nerve[d + 1], m)
            if d % 2 == 1:
                v0 -= b0
                v1 -= b1
                v2 -= b2
            else:
                v0 += b0
                v1 += b1
                v2 += b2
            nsz[d + 1] = m
            _bbox(nerve[d + 1], m, boxes[d + 1])
            d += 1
            nxt[d] = j + 1
    return v0, v1, v2, OK


# -- traces on the upper edges of a cell --------------------------------------

@njit(cache=True)
def _merge(ints, n, eps):
    """Components and total length of a union of closed intervals."""
    if n == 0:
        return 0.0, 0.0
    order = np.argsort(ints[:n, 0])
    comps = 1.0
    length = 0.0
    lo = ints[order[0], 0]
    hi = ints[order[0], 1]
    for t in range(1, n):
        a = ints[order[t], 0]
        b = ints[order[t], 1]
        if a <= hi + eps:
            if b > hi:
                hi = b
        else:
            length += hi - lo
            comps += 1.0
            lo = a
            hi = b
    length += hi - lo
    return comps, length


@njit(cache=True)
def _edge_trace(pieces, pn, pbox, npieces, seg, axis, ints, tmp, tmp2, hpbuf, eps):
    """Union of piece traces on ``seg`` as intervals along ``axis``; (comps, length, hits_end)."""
    n = 0
    end = seg[1, axis]
    hits_end = False
    sb = np.empty(4)
    _bbox(seg, 2, sb)
    for i in range(npieces):
        if not _overlap(pbox[i], sb, eps):
            continue
        m = clip_body(pieces[i], pn[i], seg, 2, tmp, tmp2, hpbuf, eps)
        if m <= 0:
            continue
        lo = tmp[0, axis]
        hi = tmp[0, axis]
        for v in range(1, m):
            lo = min(lo, tmp[v, axis])
            hi = max(hi, tmp[v, axis])
        ints[n, 0] = lo
        ints[n, 1] = hi
        n += 1
        if hi >= end - eps:
            hits_end = True
    c, ln = _merge(ints, n, eps)
    return c, ln, hits_end


@njit(cache=True)
def upper_edge_ivols(pieces, pn, pbox, npieces, x0, y0, x1, y1, ints, tmp, tmp2, hpbuf, eps):
    """Intrinsic volumes (v0, v1) of the union of pieces on the top and right edges."""
    seg = np.empty((2, 2))
    seg[0, 0], seg[0, 1], seg[1, 0], seg[1, 1] = x0, y1, x1, y1
    ct, lt, et = _edge_trace(pieces, pn, pbox, npieces, seg, 0, ints, tmp, tmp2, hpbuf, eps)
    seg[0, 0], seg[0, 1], seg[1, 0], seg[1, 1] = x1, y0, x1, y1
    cr, lr, er = _edge_trace(pieces, pn, pbox, npieces, seg, 1, ints, tmp, tmp2, hpbuf, eps)
    v0 = ct + cr
    if et and er:
        v0 -= 1.0
    return v0, lt + lr


# -- drivers ------------------------------------------------------------------

@njit(cache=True)
def eval_region(region, nreg, loc, nloc, hp_off, hps, pc_off, pcs, hmax, u, eps,
                reduce, cut_cap, subset_cap, nerve_cap, cell_edges, x0, y0, x1, y1,
                S, X, tmp, hpbuf, pieces, pn, pbox, pmask, nerve, ints, ibuf, fbuf):
    """Intrinsic volumes of the excursion set in ``region`` generated by ``loc``.

    With ``cell_edges`` the upper-edge trace of the cell ``[x0,x1] x [y0,y1]``
    is subtracted, giving the value on the half-open cell.
    """
    npieces, st = local_pieces(region, nreg, loc, nloc, hp_off, hps, pc_off, pcs, hmax, u, eps,
                               reduce, cut_cap, subset_cap,
                               S, X, tmp, pieces, pn, pbox, pmask, ibuf, fbuf[0], fbuf[1])
    if st != OK:
        return 0.0, 0.0, 0.0, st
    if npieces == 0:
        return 0.0, 0.0, 0.0, OK
    if reduce:
        npieces = drop_contained(pieces, pn, pbox, pmask, npieces, hpbuf, eps)
    nxt = np.empty(npieces + 2, dtype=np.int64)
    nsz = np.empty(npieces + 2, dtype=np.int64)
    boxes = np.empty((npieces + 2, 4))
    v0, v1, v2, st = nerve_ivols(pieces, pn, pbox, npieces, nerve, tmp, X, hpbuf, eps, nerve_cap,
                                 nxt, nsz, boxes)
    if st != OK:
        return 0.0, 0.0, 0.0, st
    if cell_edges:
        e0, e1 = upper_edge_ivols(pieces, pn, pbox, npieces, x0, y0, x1, y1, ints, tmp, X, hpbuf, eps)
        v0 -= e0
        v1 -= e1
    return v0, v1, v2, OK


@njit(cache=True)
def _meets(poly, n, hps, h0, h1, dst, tmp, eps):
    return clip_hps(poly, n, hps, h0, h1, dst, tmp, eps) != 0


@njit(cache=True)
def eval_tiled(win, nwin, members, nmem, hp_off, hps, pc_off, pcs, hmax, bbox, u, eps,
               reduce, cut_cap, subset_cap, nerve_cap, h0, leaf_max, max_depth, cell_range,
               S, X, tmp, hpbuf, pieces, pn, pbox, pmask, nerve, ints,
               stack, cand, ncand, cell, ibuf, fbuf):
    """Sum over half-open dyadic cells of the local exact value.

    Level-0 cells are ``h0``-squares anchored at the origin; a cell crossed by
    more than ``leaf_max`` support boundaries (supports meeting it without
    covering it) is split into its four children.  A
    nonempty ``cell_range`` (ix0, ix1, iy0, iy1) restricts the level-0 cells.
    """
    wb = np.empty(4)
    _bbox(win, nwin, wb)
    if nmem == 0:
        return 0.0, 0.0, 0.0, OK
    bx0 = np.inf
    by0 = np.inf
    bx1 = -np.inf
    by1 = -np.inf
    for t in range(nmem):
        j = members[t]
        bx0 = min(bx0, bbox[j, 0])
        by0 = min(by0, bbox[j, 1])
        bx1 = max(bx1, bbox[j, 2])
        by1 = max(by1, bbox[j, 3])
    bx0 = max(bx0, wb[0])
    by0 = max(by0, wb[1])
    bx1 = min(bx1, wb[2])
    by1 = min(by1, wb[3])
    if bx0 > bx1 + eps or by0 > by1 + eps:
        return 0.0, 0.0, 0.0, OK
    ix0 = int(math.floor((bx0 - eps) / h0))
    ix1 = int(math.floor((bx1 + eps) / h0))
    iy0 = int(math.floor((by0 - eps) / h0))
    iy1 = int(math.floor((by1 + eps) / h0))
    if cell_range[0] <= cell_range[1]:
        ix0 = max(ix0, cell_range[0])
        ix1 = min(ix1, cell_range[1])
        iy0 = max(iy0, cell_range[2])
        iy1 = min(iy1, cell_range[3])
    v0 = 0.0
    v1 = 0.0
    v2 = 0.0
    nstack_max = stack.shape[0]
    cb = np.empty(4)
    sub_loc = ibuf[3]
    for ix in range(ix0, ix1 + 1):
        for iy in range(iy0, iy1 + 1):
            cx0 = ix * h0
            cy0 = iy * h0
            cb[0], cb[1], cb[2], cb[3] = cx0, cy0, cx0 + h0, cy0 + h0
            nc = 0
            for t in range(nmem):
                j = members[t]
                if _overlap(bbox[j], cb, eps):
                    cand[0, nc] = j
                    nc += 1
            if nc == 0:
                continue
            ncand[0] = nc
            stack[0, 0], stack[0, 1], stack[0, 2], stack[0, 3] = cx0, cy0, h0, 0.0
            sp = 1
            while sp > 0:
                sp -= 1
                qx0, qy0, qs, qd = stack[sp, 0], stack[sp, 1], stack[sp, 2], stack[sp, 3]
                qx1 = qx0 + qs
                qy1 = qy0 + qs
                # the cell polygon, clipped to the window
                cell[0, 0, 0], cell[0, 0, 1] = qx0, qy0
                cell[0, 1, 0], cell[0, 1, 1] = qx1, qy0
                cell[0, 2, 0], cell[0, 2, 1] = qx1, qy1
                cell[0, 3, 0], cell[0, 3, 1] = qx0, qy1
                nq = clip_body(cell[0], 4, win, nwin, cell[1], tmp, hpbuf, eps)
                if nq < 0:
                    return v0, v1, v2, OVERFLOW
                if nq == 0:
                    continue
                nl = 0
                nstar = 0
                for t in range(ncand[sp]):
                    j = cand[sp, t]
                    if _meets(cell[1], nq, hps, hp_off[j], hp_off[j + 1], cell[2], tmp, eps):
                        sub_loc[nl] = j
                        nl += 1
                        if not _contains_poly(hps, hp_off[j], hp_off[j + 1], cell[1], nq, eps):
                            nstar += 1
                if nl == 0:
                    continue
                if nstar > leaf_max:
                    if qd >= max_depth or sp + 4 > nstack_max:
                        return v0, v1, v2, OVERFLOW
                    half = 0.5 * qs
                    for e in range(4):
                        ex = qx0 + half * (e & 1)
                        ey = qy0 + half * (e >> 1)
                        cb[0], cb[1], cb[2], cb[3] = ex, ey, ex + half, ey + half
                        c = 0
                        for t in range(nl):
                            j = sub_loc[t]
                            if _overlap(bbox[j], cb, eps):
                                cand[sp, c] = j
                                c += 1
                        ncand[sp] = c
                        stack[sp, 0], stack[sp, 1], stack[sp, 2], stack[sp, 3] = ex, ey, half, qd + 1.0
                        sp += 1
                    continue
                a0, a1, a2, st = eval_region(cell[1], nq, sub_loc, nl, hp_off, hps, pc_off, pcs, hmax,
                                             u, eps, reduce, cut_cap, subset_cap, nerve_cap,
                                             True, qx0, qy0, qx1, qy1,
                                             S, X, tmp, hpbuf, pieces, pn, pbox, pmask, nerve, ints,
                                             ibuf, fbuf)
                if st != OK:
                    return v0, v1, v2, st
                v0 += a0
                v1 += a1
                v2 += a2
    return v0, v1, v2, OK


@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def label_clusters(win, nwin, n, hp_off, hps, bbox, eps, S, tmp, hpbuf):
    """Cluster label per point (-1 when its support misses the window).

    Two points are linked when their supports meet inside the window.
    """
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    clipped = np.empty((n, MAXV, 2))
    cn = np.zeros(n, dtype=np.int64)
    cbox = np.empty((n, 4))
    for j in range(n):
        m = clip_hps(win, nwin, hps, hp_off[j], hp_off[j + 1], clipped[j], tmp, eps)
        cn[j] = max(m, 0)
        if m > 0:
            _bbox(clipped[j], m, cbox[j])
    parent = np.arange(n)
    order = np.argsort(bbox[:, 0])
    for a in range(n):
        i = order[a]
        if cn[i] == 0:
            continue
        for b in range(a + 1, n):
            j = order[b]
            if bbox[j, 0] > cbox[i, 2] + eps:
                break
            if cn[j] == 0 or not _overlap(cbox[i], cbox[j], eps):
                continue
            ri = _find(parent, i)
            rj = _find(parent, j)
            if ri == rj:
                continue
            if clip_hps(clipped[i], cn[i], hps, hp_off[j], hp_off[j + 1], S, tmp, eps) != 0:
                parent[ri] = rj
    nxt = 0
    roots = np.full(n, -1, dtype=np.int64)
    for j in range(n):
        if cn[j] == 0:
            continue
        r = _find(parent, j)
        if roots[r] < 0:
            roots[r] = nxt
            nxt += 1
        labels[j] = roots[r]
    return labels


# -- packing ------------------------------------------------------------------

def pack(positions: np.ndarray, marks_idx: np.ndarray, marks) -> tuple:
    """Translated half-planes, pieces, max heights and boxes for every point."""
    n = len(marks_idx)
    atom_hp = []
    atom_pc = []
    atom_box = []
    for k in marks.kernels:
        if not k.is_exact:
            raise ValueError("the exact engine needs piecewise-linear kernels")
        atom_hp.append(np.array([[h.a, h.b, h.c] for h in k.support.halfplanes()], dtype=float))
        atom_pc.append(k.piece_array())
        atom_box.append(np.array(k.support.bbox(), dtype=float))
    hp_cnt = np.array([len(atom_hp[m]) for m in marks_idx], dtype=np.int64)
    pc_cnt = np.array([len(atom_pc[m]) for m in marks_idx], dtype=np.int64)
    hp_off = np.zeros(n + 1, dtype=np.int64)
    pc_off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(hp_cnt, out=hp_off[1:])
    np.cumsum(pc_cnt, out=pc_off[1:])
    hps = np.empty((int(hp_off[-1]), 3))
    pcs = np.empty((int(pc_off[-1]), 3))
    bbox = np.empty((n, 4))
    hmax = np.array([marks.kernel(int(m)).max_height for m in marks_idx], dtype=float)
    for j in range(n):
        m = int(marks_idx[j])
        x, y = positions[j]
        h = atom_hp[m]
        hps[hp_off[j]:hp_off[j + 1], :2] = h[:, :2]
        hps[hp_off[j]:hp_off[j + 1], 2] = h[:, 2] + h[:, 0] * x + h[:, 1] * y
        p = atom_pc[m]
        pcs[pc_off[j]:pc_off[j + 1], :2] = p[:, :2]
        pcs[pc_off[j]:pc_off[j + 1], 2] = p[:, 2] - p[:, 0] * x - p[:, 1] * y
        bbox[j] = atom_box[m] + (x, y, x, y)
    return hp_off, hps, pc_off, pcs, hmax, bbox


def poly_buffer(vertices) -> tuple[np.ndarray, int]:
    buf = np.empty((MAXV, 2))
    n = len(vertices)
    if n:
        buf[:n] = np.asarray(vertices, dtype=float)
    return buf, n
