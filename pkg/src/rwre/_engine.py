"""numba kernels: site-keyed environment lookup, stop tests and walk loops.

Everything here works on plain arrays and tuples so that the public modules
can stay thin.  Conventions:

* direction index ``j`` in ``0..2d-1`` is axis ``j // 2`` with sign ``+`` for
  even ``j`` (so d=2 kernels read ``(+e1, -e1, +e2, -e2)``);
* ``lawp = (family, kernels, cumw, alpha, eta)``;
* ``ovp = (lo, shape, mask, kernels)`` dense overlay box (empty mask = none);
* ``stp = (kinds, fpar, ipar, budget, min_time)`` OR-ed stop conditions.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._hash import TAG_ENV, TAG_WALK, nb_combine, nb_mix64, nb_unit

FAM_FIXED = 0
FAM_MIXTURE = 1
FAM_DIRICHLET = 2

STOP_HALF_GE = 0
STOP_HALF_LE = 1
STOP_SITE = 2
STOP_OUT_BOX = 3
STOP_OUT_BLOCK = 4

CAUSE_STOPPED = 0
CAUSE_BUDGET = 1

_TOL = 1e-9
_TWO_PI = 2.0 * math.pi


@njit(cache=True)
def site_key(env_key, x):
    h = env_key
    for i in range(x.shape[0]):
        h = nb_combine(h, x[i])
    return h


@njit(cache=True)
def _unit_open(key, ctr):
    return (np.float64(nb_combine(key, ctr) >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _gamma(alpha, key, ctr):
    """Marsaglia-Tsang gamma variate driven by a counter stream."""
    boost = 1.0
    a = alpha
    if a < 1.0:
        u = _unit_open(key, ctr)
        ctr += 1
        boost = u ** (1.0 / a)
        a += 1.0
    dd = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * dd)
    while True:
        u1 = _unit_open(key, ctr)
        u2 = _unit_open(key, ctr + 1)
        ctr += 2
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)
        v = 1.0 + c * z
        if v <= 0.0:
            continue
        v = v * v * v
        u = _unit_open(key, ctr)
        ctr += 1
        if math.log(u) < 0.5 * z * z + dd - dd * v + dd * math.log(v):
            return dd * v * boost, ctr


@njit(cache=True)
def law_kernel(skey, lawp, out):
    fam, kernels, cumw, alpha, eta = lawp
    m = out.shape[0]
    if fam == FAM_FIXED:
        for j in range(m):
            out[j] = kernels[0, j]
    elif fam == FAM_MIXTURE:
        u = nb_unit(nb_combine(skey, 0))
        idx = 0
        last = cumw.shape[0] - 1
        while idx < last and u >= cumw[idx]:
            idx += 1
        for j in range(m):
            out[j] = kernels[idx, j]
    else:
        ctr = 1
        total = 0.0
        for j in range(m):
            g, ctr = _gamma(alpha[j], skey, ctr)
            out[j] = g
            total += g
        scale = 1.0 - m * eta
        for j in range(m):
            out[j] = eta + scale * out[j] / total


@njit(cache=True)
def kernel_at(x, env_key, lawp, ovp, out):
    lo, shape, mask, okern = ovp
    if mask.shape[0] > 0:
        d = x.shape[0]
        inside = True
        flat = 0
        for i in range(d):
            off = x[i] - lo[i]
            if off < 0 or off >= shape[i]:
                inside = False
                break
            flat = flat * shape[i] + off
        if inside and mask[flat]:
            for j in range(out.shape[0]):
                out[j] = okern[flat, j]
            return
    law_kernel(site_key(env_key, x), lawp, out)


@njit(cache=True)
def kernels_at_many(sites, env_key, lawp, ovp):
    n, d = sites.shape
    res = np.empty((n, 2 * d))
    buf = np.empty(2 * d)
    for i in range(n):
        kernel_at(sites[i], env_key, lawp, ovp, buf)
        for j in range(2 * d):
            res[i, j] = buf[j]
    return res


@njit(cache=True)
def mixture_indices(sites, env_key, cumw):
    """Mixture component chosen at each site (for marginal checks)."""
    n = sites.shape[0]
    res = np.empty(n, dtype=np.int64)
    last = cumw.shape[0] - 1
    for i in range(n):
        u = nb_unit(nb_combine(site_key(env_key, sites[i]), 0))
        idx = 0
        while idx < last and u >= cumw[idx]:
            idx += 1
        res[i] = idx
    return res


@njit(cache=True)
def in_block(x, z, theta, depth, width):
    t = np.float64(x[0] - z[0])
    if abs(t) >= depth:
        return False
    for i in range(1, x.shape[0]):
        u = z[i] + (theta[i] * t) / theta[0]
        if abs(x[i] - u) >= width:
            return False
    return True


@njit(cache=True)
def stop_hit(x, stp):
    kinds, fpar, ipar, budget, min_time = stp
    d = x.shape[0]
    for c in range(kinds.shape[0]):
        k = kinds[c]
        if k == STOP_HALF_GE or k == STOP_HALF_LE:
            s = 0.0
            for i in range(d):
                s += x[i] * fpar[c, i]
            if k == STOP_HALF_GE:
                if s >= fpar[c, d] - _TOL:
                    return True
            else:
                if s <= fpar[c, d] + _TOL:
                    return True
        elif k == STOP_SITE:
            same = True
            for i in range(d):
                if x[i] != ipar[c, i]:
                    same = False
                    break
            if same:
                return True
        elif k == STOP_OUT_BOX:
            for i in range(d):
                if x[i] < ipar[c, i] or x[i] > ipar[c, d + i]:
                    return True
        else:
            if not in_block(x, ipar[c, :d], fpar[c, :d], fpar[c, d], fpar[c, d + 1]):
                return True
    return False


@njit(cache=True)
def pick_direction(kern, u):
    m = kern.shape[0]
    j = 0
    acc = kern[0]
    while u >= acc and j < m - 1:
        j += 1
        acc += kern[j]
    while kern[j] <= 0.0 and j > 0:
        j -= 1
    return j


@njit(cache=True)
def walk_path(start, walk_key, env_key, lawp, ovp, stp):
    """Record a full path; returns (positions, cause)."""
    kinds, fpar, ipar, budget, min_time = stp
    d = start.shape[0]
    cap = 256
    pos = np.empty((cap, d), dtype=np.int64)
    x = start.copy()
    pos[0] = x
    if min_time == 0 and stop_hit(x, stp):
        return pos[:1].copy(), CAUSE_STOPPED
    kern = np.empty(2 * d)
    t = 0
    while t < budget:
        kernel_at(x, env_key, lawp, ovp, kern)
        j = pick_direction(kern, nb_unit(nb_combine(walk_key, t)))
        if j % 2 == 0:
            x[j // 2] += 1
        else:
            x[j // 2] -= 1
        t += 1
        if t >= cap:
            cap *= 2
            grown = np.empty((cap, d), dtype=np.int64)
            grown[:t] = pos[:t]
            pos = grown
        pos[t] = x
        if stop_hit(x, stp):
            return pos[: t + 1].copy(), CAUSE_STOPPED
    return pos[: t + 1].copy(), CAUSE_BUDGET


@njit(cache=True)
def walk_end(start, walk_key, env_key, lawp, ovp, stp, x):
    """Run without recording; writes final position into ``x``."""
    kinds, fpar, ipar, budget, min_time = stp
    d = start.shape[0]
    for i in range(d):
        x[i] = start[i]
    if min_time == 0 and stop_hit(x, stp):
        return 0, CAUSE_STOPPED
    kern = np.empty(2 * d)
    t = 0
    while t < budget:
        kernel_at(x, env_key, lawp, ovp, kern)
        j = pick_direction(kern, nb_unit(nb_combine(walk_key, t)))
        if j % 2 == 0:
            x[j // 2] += 1
        else:
            x[j // 2] -= 1
        t += 1
        if stop_hit(x, stp):
            return t, CAUSE_STOPPED
    return t, CAUSE_BUDGET


@njit(cache=True)
def stream_key(root, idx, tag):
    # seed_i = combine(root, idx); key = combine(mix64(seed_i), tag)
    return nb_combine(nb_mix64(nb_combine(root, idx)), tag)


@njit(cache=True)
def batch_ends(start, n, first, walk_root, env_key, annealed, env_root, lawp, ovp, stp):
    """Replicates ``first .. first+n-1``; stream keys derived from the index."""
    d = start.shape[0]
    ends = np.empty((n, d), dtype=np.int64)
    times = np.empty(n, dtype=np.int64)
    causes = np.empty(n, dtype=np.int64)
    x = np.empty(d, dtype=np.int64)
    for r in range(n):
        idx = first + r
        wk = stream_key(walk_root, idx, TAG_WALK)
        ek = env_key
        if annealed:
            ek = stream_key(env_root, idx, TAG_ENV)
        t, c = walk_end(start, wk, ek, lawp, ovp, stp, x)
        for i in range(d):
            ends[r, i] = x[i]
        times[r] = t
        causes[r] = c
    return ends, times, causes


@njit(cache=True)
def conditioned_path(start, base_key, env_key, lawp, ovp, stp, front_x1, max_retries):
    """Rejection-sample a path whose stop position has first coordinate
    ``front_x1``; returns (path, attempts) with attempts = -1 on failure."""
    for attempt in range(max_retries):
        path, cause = walk_path(start, nb_combine(base_key, attempt), env_key, lawp, ovp, stp)
        if cause == CAUSE_STOPPED and path[path.shape[0] - 1, 0] == front_x1:
            return path, attempt + 1
    return np.empty((0, start.shape[0]), dtype=np.int64), -1


@njit(cache=True)
def propagate_mass(mask, shape, lo, start, mode, kconst, kdense, env_key, lawp, ovp, tol, prune, max_steps):
    """Push probability mass through a region until almost all is absorbed.

    ``mask`` is the flattened interior indicator over a box padded by one
    cell on every side.  Returns (absorbed, steps, remaining, pruned).
    ``mode``: 0 constant kernel, 1 dense per-cell kernels, 2 hashed lookup.
    """
    d = shape.shape[0]
    ncell = mask.shape[0]
    stride = np.empty(d, dtype=np.int64)
    s = 1
    for i in range(d - 1, -1, -1):
        stride[i] = s
        s *= shape[i]
    cur = np.zeros(ncell)
    nxt = np.zeros(ncell)
    absorbed = np.zeros(ncell)
    f0 = 0
    for i in range(d):
        f0 += (start[i] - lo[i]) * stride[i]
    cur[f0] = 1.0
    wlo = start - lo
    whi = start - lo
    nlo = np.empty(d, dtype=np.int64)
    nhi = np.empty(d, dtype=np.int64)
    idx = np.empty(d, dtype=np.int64)
    x = np.empty(d, dtype=np.int64)
    kern = np.empty(2 * d)
    pruned = 0.0
    remaining = 1.0
    steps = 0
    while steps < max_steps and remaining > tol:
        for i in range(d):
            nlo[i] = shape[i]
            nhi[i] = -1
            idx[i] = wlo[i]
        done = False
        while not done:
            f = 0
            for i in range(d):
                f += idx[i] * stride[i]
            m = cur[f]
            if m != 0.0:
                cur[f] = 0.0
                if m < prune:
                    pruned += m
                else:
                    if mode == 0:
                        for j in range(2 * d):
                            kern[j] = kconst[j]
                    elif mode == 1:
                        for j in range(2 * d):
                            kern[j] = kdense[f, j]
                    else:
                        for i in range(d):
                            x[i] = idx[i] + lo[i]
                        kernel_at(x, env_key, lawp, ovp, kern)
                    for j in range(2 * d):
                        p = kern[j]
                        if p == 0.0:
                            continue
                        ax = j // 2
                        if j % 2 == 0:
                            g = f + stride[ax]
                            c = idx[ax] + 1
                        else:
                            g = f - stride[ax]
                            c = idx[ax] - 1
                        if mask[g]:
                            nxt[g] += m * p
                            for i in range(d):
                                v = idx[i]
                                if i == ax:
                                    v = c
                                if v < nlo[i]:
                                    nlo[i] = v
                                if v > nhi[i]:
                                    nhi[i] = v
                        else:
                            absorbed[g] += m * p
            # advance the multi-index over the window
            k = d - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] <= whi[k]:
                    break
                idx[k] = wlo[k]
                k -= 1
            if k < 0:
                done = True
        tmp = cur
        cur = nxt
        nxt = tmp
        steps += 1
        if nhi[0] < 0:
            remaining = 0.0
            break
        for i in range(d):
            wlo[i] = nlo[i]
            whi[i] = nhi[i]
        remaining = 0.0
        for i in range(d):
            idx[i] = wlo[i]
        done = False
        while not done:
            f = 0
            for i in range(d):
                f += idx[i] * stride[i]
            remaining += cur[f]
            k = d - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] <= whi[k]:
                    break
                idx[k] = wlo[k]
                k -= 1
            if k < 0:
                done = True
    return absorbed, steps, remaining, pruned
