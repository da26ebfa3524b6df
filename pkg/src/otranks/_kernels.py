"""Compiled inner loops for power-cell geometry.

Everything here works on plain float64 arrays so it can be jitted; the
public wrappers live in :mod:`otranks.potential` and :mod:`otranks.solver`.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def clip_halfplane(px, py, k, ax, ay, b, outx, outy):
    """Clip the convex polygon ``(px, py)[:k]`` to ``{ax*x + ay*y + b >= 0}``.

    Writes the result into ``outx``/``outy`` and returns its vertex count.
    Vertices exactly on the line count as inside.
    """
    cnt = 0
    for idx in range(k):
        nidx = idx + 1
        if nidx == k:
            nidx = 0
        cx = px[idx]
        cy = py[idx]
        nx = px[nidx]
        ny = py[nidx]
        sc = ax * cx + ay * cy + b
        sn = ax * nx + ay * ny + b
        if sc >= 0.0:
            outx[cnt] = cx
            outy[cnt] = cy
            cnt += 1
        if (sc > 0.0 and sn < 0.0) or (sc < 0.0 and sn > 0.0):
            t = sc / (sc - sn)
            outx[cnt] = cx + t * (nx - cx)
            outy[cnt] = cy + t * (ny - cy)
            cnt += 1
    return cnt


@njit(cache=True, nogil=True)
def _clip_labelled(px, py, pl, k, ax, ay, b, label, outx, outy, outl):
    # pl[idx] labels the edge leaving vertex idx
    cnt = 0
    for idx in range(k):
        nidx = idx + 1
        if nidx == k:
            nidx = 0
        cx = px[idx]
        cy = py[idx]
        nx = px[nidx]
        ny = py[nidx]
        sc = ax * cx + ay * cy + b
        sn = ax * nx + ay * ny + b
        if sc >= 0.0:
            outx[cnt] = cx
            outy[cnt] = cy
            outl[cnt] = label if (sc == 0.0 and sn < 0.0) else pl[idx]
            cnt += 1
        if sc > 0.0 and sn < 0.0:
            t = sc / (sc - sn)
            outx[cnt] = cx + t * (nx - cx)
            outy[cnt] = cy + t * (ny - cy)
            outl[cnt] = label
            cnt += 1
        elif sc < 0.0 and sn > 0.0:
            t = sc / (sc - sn)
            outx[cnt] = cx + t * (nx - cx)
            outy[cnt] = cy + t * (ny - cy)
            outl[cnt] = pl[idx]
            cnt += 1
    return cnt


@njit(cache=True, nogil=True)
def _bounding_circle(px, py, k):
    cx = 0.0
    cy = 0.0
    for idx in range(k):
        cx += px[idx]
        cy += py[idx]
    cx /= k
    cy /= k
    r2 = 0.0
    for idx in range(k):
        d2 = (px[idx] - cx) ** 2 + (py[idx] - cy) ** 2
        if d2 > r2:
            r2 = d2
    return cx, cy, math.sqrt(r2)


@njit(cache=True, nogil=True)
def polygon_moments(px, py, k):
    """Area and first moments (integral of x, integral of y) of a ccw polygon."""
    area = 0.0
    mx = 0.0
    my = 0.0
    for idx in range(k):
        nidx = idx + 1
        if nidx == k:
            nidx = 0
        cross = px[idx] * py[nidx] - px[nidx] * py[idx]
        area += cross
        mx += (px[idx] + px[nidx]) * cross
        my += (py[idx] + py[nidx]) * cross
    return 0.5 * area, mx / 6.0, my / 6.0


@njit(cache=True, nogil=True)
def clip_by_halfplanes(px, py, k, A, b):
    """Clip a convex polygon by every halfplane ``A[j] . u + b[j] >= 0``."""
    cap = k + A.shape[0] + 4
    ax_ = np.empty(cap)
    ay_ = np.empty(cap)
    bx_ = np.empty(cap)
    by_ = np.empty(cap)
    ax_[:k] = px[:k]
    ay_[:k] = py[:k]
    for j in range(A.shape[0]):
        if k == 0:
            break
        k = clip_halfplane(ax_, ay_, k, A[j, 0], A[j, 1], b[j], bx_, by_)
        ax_, bx_ = bx_, ax_
        ay_, by_ = by_, ay_
    return ax_[:k].copy(), ay_[:k].copy()


BOX_LABELS = (-1, -2, -3, -4)  # bottom, right, top, left


@njit(cache=True, nogil=True)
def _cell(i, X, h, cand, ncand, full, lo, hi, buf, lab):
    """Clip the box down to cell ``i``.

    Candidates ``cand[:ncand]`` are applied first; with ``full`` every site
    is then considered, skipping halfplanes that miss the polygon's
    bounding circle.  Returns ``(slot, k, kprev, last)`` locating the
    polygon in ``buf``; when the cell comes out empty, ``slot``/``kprev``
    hold the polygon before the final clip by site ``last``.
    """
    n = X.shape[0]
    cur = 0
    buf[0, 0, 0] = lo
    buf[0, 1, 0] = lo
    buf[0, 0, 1] = hi
    buf[0, 1, 1] = lo
    buf[0, 0, 2] = hi
    buf[0, 1, 2] = hi
    buf[0, 0, 3] = lo
    buf[0, 1, 3] = hi
    lab[0, 0] = -1
    lab[0, 1] = -2
    lab[0, 2] = -3
    lab[0, 3] = -4
    k = 4
    cx, cy, r = _bounding_circle(buf[0, 0], buf[0, 1], k)
    r2 = r * r
    xi0 = X[i, 0]
    xi1 = X[i, 1]
    hi_ = h[i]
    total = ncand + n if full else ncand
    for jj in range(total):
        if jj < ncand:
            j = cand[jj]
            if j < 0:
                continue
        else:
            j = jj - ncand
        if j == i:
            continue
        ax = xi0 - X[j, 0]
        ay = xi1 - X[j, 1]
        b = hi_ - h[j]
        s = ax * cx + ay * cy + b
        if s >= 0.0 and s * s >= r2 * (ax * ax + ay * ay):
            continue
        src = buf[cur]
        inside = True
        for idx in range(k):
            if ax * src[0, idx] + ay * src[1, idx] + b < 0.0:
                inside = False
                break
        if inside:
            continue
        dst = buf[1 - cur]
        kn = _clip_labelled(src[0], src[1], lab[cur], k, ax, ay, b, j,
                            dst[0], dst[1], lab[1 - cur])
        if kn == 0:
            # keep the last polygon so its edges plus j certify emptiness
            return cur, 0, k, j
        k = kn
        cur = 1 - cur
        cx, cy, r = _bounding_circle(buf[cur, 0], buf[cur, 1], k)
        r2 = r * r
    return cur, k, k, -1


@njit(cache=True, nogil=True)
def power_cells_2d(X, h, hint, lo, hi, want_vertices):
    """Cells ``{u in box : <u, X_i> + h_i >= <u, X_j> + h_j for all j}``.

    ``hint`` is either empty or an ``(n, K)`` array of candidate neighbours
    per cell (``-1`` pads), typically the ``neighbours`` output of a previous
    call at nearby weights.  Each cell is first clipped by its candidates
    only.  Every such polygon contains the true cell, and the true cells
    tile the box, so the candidate pass is accepted only when the areas add
    up to the box area; otherwise all cells are recomputed against every
    site (halfplanes that miss a polygon's bounding circle are skipped
    without clipping).

    Returns ``(area, mx, my, verts, edge_labels, offsets, neighbours, full)``.
    ``verts``/``edge_labels``/``offsets`` are empty unless ``want_vertices``;
    ``edge_labels[v]`` is the site (or ``-1..-4`` for the box bottom, right,
    top, left) whose line carries the edge leaving vertex ``v``.
    ``neighbours`` lists each cell's adjacent sites (for an empty cell, the
    sites whose halfplanes empty it), ``-1`` padded, and
    ``full`` reports whether the all-sites pass ran.
    """
    n = X.shape[0]
    use_hint = hint.shape[0] == n
    if use_hint:
        out = _sweep(X, h, hint, False, lo, hi, want_vertices)
        total = 0.0
        for i in range(n):
            total += out[0][i]
        if total - (hi - lo) * (hi - lo) <= 1e-12 + 4e-16 * n:
            return out[0], out[1], out[2], out[3], out[4], out[5], out[6], False
        return _sweep(X, h, hint, True, lo, hi, want_vertices) + (True,)
    empty = np.empty((n, 0), dtype=np.int64)
    return _sweep(X, h, empty, True, lo, hi, want_vertices) + (True,)


@njit(cache=True, nogil=True)
def _sweep(X, h, cand, full, lo, hi, want_vertices):
    n = X.shape[0]
    cap = n + 8
    buf = np.empty((2, 2, cap))
    lab = np.empty((2, cap), dtype=np.int64)
    area = np.zeros(n)
    mx = np.zeros(n)
    my = np.zeros(n)
    K = cand.shape[1]
    verts = np.empty((8 * n + 8 if want_vertices else 0, 2))
    labels = np.empty(8 * n + 8 if want_vertices else 0, dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    neigh = np.full((n, 16), -1, dtype=np.int64)
    nv = 0
    for i in range(n):
        cur, k, kp, last = _cell(i, X, h, cand[i], K, full, lo, hi, buf, lab)
        if k >= 3:
            a, m0, m1 = polygon_moments(buf[cur, 0], buf[cur, 1], k)
            area[i] = a
            mx[i] = m0
            my[i] = m1
        nn = 0
        for idx in range(kp + 1):
            if idx < kp:
                l = lab[cur, idx]
            else:
                l = last
            if l >= 0:
                if nn == neigh.shape[1]:
                    grown = np.full((n, 2 * nn), -1, dtype=np.int64)
                    grown[:, :nn] = neigh
                    neigh = grown
                neigh[i, nn] = l
                nn += 1
        if k >= 3 and want_vertices:
            if nv + k > verts.shape[0]:
                gv = np.empty((2 * (nv + k), 2))
                gv[:nv] = verts[:nv]
                verts = gv
                gl = np.empty(2 * (nv + k), dtype=np.int64)
                gl[:nv] = labels[:nv]
                labels = gl
            for idx in range(k):
                verts[nv, 0] = buf[cur, 0, idx]
                verts[nv, 1] = buf[cur, 1, idx]
                labels[nv] = lab[cur, idx]
                nv += 1
        offsets[i + 1] = nv
    return area, mx, my, verts[:nv].copy(), labels[:nv].copy(), offsets, neigh


@njit(cache=True, nogil=True)
def power_cells_1d(x, h, order, lo, hi):
    """Interval cells of the upper envelope of lines ``x_i u + h_i`` on ``[lo, hi]``.

    ``order`` sorts ``x`` increasingly (sites must be distinct).  Returns left
    and right endpoints (empty cells have ``right == left``) and the sites on
    the envelope in increasing order.
    """
    n = x.shape[0]
    left = np.empty(n)
    right = np.empty(n)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    for q in range(n):
        c = order[q]
        while top >= 2:
            a = stack[top - 2]
            b = stack[top - 1]
            # b is never strictly on top once c overtakes a before b does
            if (h[a] - h[c]) * (x[b] - x[a]) <= (h[a] - h[b]) * (x[c] - x[a]):
                top -= 1
            else:
                break
        stack[top] = c
        top += 1
    for q in range(n):
        left[q] = lo
        right[q] = lo
    prev = -np.inf
    for k in range(top):
        i = stack[k]
        if k + 1 < top:
            j = stack[k + 1]
            nxt = (h[i] - h[j]) / (x[j] - x[i])
        else:
            nxt = np.inf
        a = max(prev, lo)
        b = min(nxt, hi)
        if b < a:
            a = min(max(a, lo), hi)
            b = a
        left[i] = a
        right[i] = b
        prev = nxt
    return left, right, stack[:top].copy()


@njit(cache=True, nogil=True)
def assign_points(U, X, h, slack):
    """Lowest index whose plane is within ``slack`` of the max, per row of U."""
    m = U.shape[0]
    n = X.shape[0]
    d = X.shape[1]
    out = np.empty(m, dtype=np.int64)
    vals = np.empty(n)
    for k in range(m):
        best = -np.inf
        for i in range(n):
            v = h[i]
            for c in range(d):
                v += U[k, c] * X[i, c]
            vals[i] = v
            if v > best:
                best = v
        for i in range(n):
            if vals[i] >= best - slack:
                out[k] = i
                break
    return out


@njit(cache=True, nogil=True)
def envelope_values(U, X, h):
    m = U.shape[0]
    n = X.shape[0]
    d = X.shape[1]
    out = np.empty(m)
    for k in range(m):
        best = -np.inf
        for i in range(n):
            v = h[i]
            for c in range(d):
                v += U[k, c] * X[i, c]
            if v > best:
                best = v
        out[k] = best
    return out


@njit(cache=True, nogil=True)
def second_ring(neigh):
    """Neighbours plus neighbours of neighbours, per row, ``-1`` padded."""
    n, K = neigh.shape
    width = 1
    for i in range(n):
        c = 0
        for a in range(K):
            j = neigh[i, a]
            if j < 0:
                break
            c += 1
            for b in range(K):
                if neigh[j, b] < 0:
                    break
                c += 1
        width = max(width, c)
    out = np.full((n, width), -1, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    used = 1
    for i in range(n):
        mark[i] = i
        c = 0
        for a in range(K):
            j = neigh[i, a]
            if j < 0:
                break
            if mark[j] != i:
                mark[j] = i
                out[i, c] = j
                c += 1
        for a in range(K):
            j = neigh[i, a]
            if j < 0:
                break
            for b in range(K):
                m = neigh[j, b]
                if m < 0:
                    break
                if mark[m] != i:
                    mark[m] = i
                    out[i, c] = m
                    c += 1
        used = max(used, c)
    return out[:, :used].copy()


EXACT1D = 0
EXACT2D = 1
MONTECARLO = 2


@njit(cache=True, nogil=True)
def objective(kind, X, h, w, order, U, lo, hi, hint):
    """Dual value ``F(h)``, cell measures and the next clipping hint."""
    n = X.shape[0]
    meas = np.zeros(n)
    val = 0.0
    if kind == EXACT1D:
        x = X[:, 0]
        left, right, _ = power_cells_1d(x, h, order, lo, hi)
        for i in range(n):
            meas[i] = right[i] - left[i]
            val += meas[i] * h[i] + 0.5 * x[i] * (right[i] ** 2 - left[i] ** 2)
        new_hint = hint
    elif kind == EXACT2D:
        area, mx, my, _, _, _, neigh, _ = power_cells_2d(X, h, hint, lo, hi, False)
        for i in range(n):
            meas[i] = area[i]
            val += area[i] * h[i] + mx[i] * X[i, 0] + my[i] * X[i, 1]
        new_hint = second_ring(neigh)
    else:
        m = U.shape[0]
        d = X.shape[1]
        counts = np.zeros(n, dtype=np.int64)
        total = 0.0
        for k in range(m):
            best = -np.inf
            arg = 0
            for i in range(n):
                v = h[i]
                for c in range(d):
                    v += U[k, c] * X[i, c]
                if v > best:
                    best = v
                    arg = i
            counts[arg] += 1
            total += best
        for i in range(n):
            meas[i] = counts[i] / m
        val = total / m
        new_hint = hint
    for i in range(n):
        val -= w[i] * h[i]
    return val, meas, new_hint


@njit(cache=True, nogil=True)
def lbfgs_fit(kind, X, w, h0, order, U, lo, hi, tol, max_iter, memory):
    """Minimise the semi-discrete dual from ``h0``.

    Search directions come from the limited-memory BFGS two-loop recursion
    (falling back to the negative gradient when that is not a descent
    direction); steps are chosen by Armijo backtracking from 1 with factor
    0.5 and sufficient decrease 1e-4.  The decrease test tolerates rounding
    in ``F`` so that the last few digits of the residual can still be won.
    Every iterate is re-centred to zero sum.

    Returns ``(h, measures, iterations, status)``; status is 0 on
    convergence, 1 when ``max_iter`` ran out, 2 when the line search stalled.
    """
    n = X.shape[0]
    h = h0 - np.mean(h0)
    hint = np.empty((0, 0), dtype=np.int64)
    F, meas, hint = objective(kind, X, h, w, order, U, lo, hi, hint)
    g = meas - w
    S = np.zeros((memory, n))
    Y = np.zeros((memory, n))
    rho = np.zeros(memory)
    alpha = np.zeros(memory)
    stored = 0
    head = 0
    for it in range(max_iter):
        if np.max(np.abs(g)) <= tol:
            return h, meas, it, 0
        q = g.copy()
        for k in range(stored):
            slot = (head - 1 - k) % memory
            alpha[slot] = rho[slot] * np.dot(S[slot], q)
            q -= alpha[slot] * Y[slot]
        if stored > 0:
            last = (head - 1) % memory
            q *= np.dot(S[last], Y[last]) / np.dot(Y[last], Y[last])
        for k in range(stored - 1, -1, -1):
            slot = (head - 1 - k) % memory
            beta = rho[slot] * np.dot(Y[slot], q)
            q += (alpha[slot] - beta) * S[slot]
        direction = -q
        slope = np.dot(g, direction)
        if not slope < 0.0:
            direction = -g
            slope = -np.dot(g, g)
            stored = 0
        t = 1.0
        slack = 1e-14 * (abs(F) + 1.0)
        while True:
            hn = h + t * direction
            hn -= np.mean(hn)
            Fn, meas_n, hint_n = objective(kind, X, hn, w, order, U, lo, hi, hint)
            if Fn <= F + 1e-4 * t * slope + slack:
                break
            t *= 0.5
            if t < 1e-20:
                return h, meas, it, 2
        gn = meas_n - w
        s = hn - h
        y = gn - g
        sy = np.dot(s, y)
        if sy > 1e-300:
            S[head] = s
            Y[head] = y
            rho[head] = 1.0 / sy
            head = (head + 1) % memory
            if stored < memory:
                stored += 1
        h = hn
        g = gn
        F = Fn
        meas = meas_n
        hint = hint_n
    if np.max(np.abs(g)) <= tol:
        return h, meas, max_iter, 0
    return h, meas, max_iter, 1


@njit(cache=True, nogil=True)
def _concave_min(u, X, h, y):
    # g(u) = min_i <u, y - X_i> - h_i and its minimising index
    n, d = X.shape
    best = np.inf
    arg = 0
    for i in range(n):
        v = -h[i]
        for c in range(d):
            v += u[c] * (y[c] - X[i, c])
        if v < best:
            best = v
            arg = i
    return best, arg


@njit(cache=True, nogil=True)
def _project(u, ball):
    if ball:
        r = math.sqrt(np.sum(u * u))
        if r > 1.0:
            u /= r
    else:
        for c in range(u.shape[0]):
            if u[c] < 0.0:
                u[c] = 0.0
            elif u[c] > 1.0:
                u[c] = 1.0


@njit(cache=True, nogil=True)
def supergradient_ascent(X, h, y, ball, u0, step, iters):
    """Projected supergradient ascent on ``g(u) = min_i <u, y - X_i> - h_i``.

    Steps have length ``step / sqrt(k)`` along the normalised supergradient
    ``y - X_i*``.  Returns whichever of the running average and the best
    iterate has the larger ``g``.
    """
    d = X.shape[1]
    u = u0.copy()
    _project(u, ball)
    avg = u.copy()
    best_u = u.copy()
    best_g, arg = _concave_min(u, X, h, y)
    for k in range(1, iters + 1):
        g, arg = _concave_min(u, X, h, y)
        if g > best_g:
            best_g = g
            best_u[:] = u
        norm = 0.0
        for c in range(d):
            norm += (y[c] - X[arg, c]) ** 2
        norm = math.sqrt(norm)
        if norm == 0.0:
            break
        t = step / math.sqrt(k) / norm
        for c in range(d):
            u[c] += t * (y[c] - X[arg, c])
        _project(u, ball)
        for c in range(d):
            avg[c] += (u[c] - avg[c]) / (k + 1)
    g_avg, _ = _concave_min(avg, X, h, y)
    if g_avg >= best_g:
        return avg, g_avg
    return best_u, best_g


@njit(cache=True, nogil=True)
def overlap_areas(VA, offA, VB, offB):
    """Areas of all nonempty intersections between two families of ccw
    convex polygons (flat vertex arrays with offsets).

    Returns ``(i, j, area)`` arrays for pairs with positive overlap.
    """
    na = offA.shape[0] - 1
    nb = offB.shape[0] - 1
    boxA = np.empty((na, 4))
    boxB = np.empty((nb, 4))
    for boxes, V, off, m in ((boxA, VA, offA, na), (boxB, VB, offB, nb)):
        for i in range(m):
            if off[i + 1] - off[i] < 3:
                boxes[i, 0] = np.inf
                boxes[i, 1] = -np.inf
                boxes[i, 2] = np.inf
                boxes[i, 3] = -np.inf
                continue
            boxes[i, 0] = np.min(V[off[i]:off[i + 1], 0])
            boxes[i, 1] = np.max(V[off[i]:off[i + 1], 0])
            boxes[i, 2] = np.min(V[off[i]:off[i + 1], 1])
            boxes[i, 3] = np.max(V[off[i]:off[i + 1], 1])
    cap = 8
    for i in range(na):
        cap = max(cap, offA[i + 1] - offA[i])
    for j in range(nb):
        cap += offB[j + 1] - offB[j]
    bx0 = np.empty(cap)
    by0 = np.empty(cap)
    bx1 = np.empty(cap)
    by1 = np.empty(cap)
    out_i = []
    out_j = []
    out_a = []
    for i in range(na):
        ka = offA[i + 1] - offA[i]
        if ka < 3:
            continue
        for j in range(nb):
            kb = offB[j + 1] - offB[j]
            if kb < 3:
                continue
            if (boxA[i, 1] < boxB[j, 0] or boxB[j, 1] < boxA[i, 0]
                    or boxA[i, 3] < boxB[j, 2] or boxB[j, 3] < boxA[i, 2]):
                continue
            k = ka
            for t in range(ka):
                bx0[t] = VA[offA[i] + t, 0]
                by0[t] = VA[offA[i] + t, 1]
            src_x, src_y, dst_x, dst_y = bx0, by0, bx1, by1
            for e in range(kb):
                p = offB[j] + e
                q = offB[j] + (e + 1 if e + 1 < kb else 0)
                ex = VB[q, 0] - VB[p, 0]
                ey = VB[q, 1] - VB[p, 1]
                # left of the directed edge is inside
                ax = -ey
                ay = ex
                b = -(ax * VB[p, 0] + ay * VB[p, 1])
                k = clip_halfplane(src_x, src_y, k, ax, ay, b, dst_x, dst_y)
                src_x, dst_x = dst_x, src_x
                src_y, dst_y = dst_y, src_y
                if k == 0:
                    break
            if k >= 3:
                a, _, _ = polygon_moments(src_x, src_y, k)
                if a > 0.0:
                    out_i.append(i)
                    out_j.append(j)
                    out_a.append(a)
    return np.array(out_i, dtype=np.int64), np.array(out_j, dtype=np.int64), np.array(out_a)
