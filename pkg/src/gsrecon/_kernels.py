"""Compiled inner loops for camera refinement.

The keypoint objective here mirrors :class:`gsrecon.calibration.KeypointObjective`
for a single parameter vector; the simplex search calls it thousands of times
per frame, which is too slow through numpy dispatch.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def keypoint_cost(p, base, rows, a, b, aspect, power, penalty):
    """Sum of ``dist ** power`` from projected keypoints to their lines, plus penalties."""
    x, y, z, pan, tilt, roll, fov = p[0], p[1], p[2], p[3], p[4], p[5], p[6]
    if not (fov > 1e-6 and fov < math.pi - 1e-6):
        return np.inf
    cp, sp = math.cos(pan), math.sin(pan)
    ct, st = math.cos(tilt), math.sin(tilt)
    cr, sr = math.cos(roll), math.sin(roll)
    # R = R_roll @ R_tilt @ R_pan, written out
    r00 = cr * cp + sr * ct * sp
    r01 = cr * sp - sr * ct * cp
    r02 = -sr * st
    r10 = sr * cp - cr * ct * sp
    r11 = sr * sp + cr * ct * cp
    r12 = cr * st
    r20 = st * sp
    r21 = -st * cp
    r22 = ct
    f = 1.0 / math.tan(fov / 2.0)
    n = base.shape[0]
    gx = np.empty(n)
    gy = np.empty(n)
    ok = np.empty(n, dtype=np.bool_)
    total = 0.0
    for i in range(n):
        v0 = base[i, 0] * aspect / f
        v1 = base[i, 1] / f
        v2 = base[i, 2]
        dx = r00 * v0 + r10 * v1 + r20 * v2
        dy = r01 * v0 + r11 * v1 + r21 * v2
        dz = r02 * v0 + r12 * v1 + r22 * v2
        ok[i] = False
        if abs(dz) > 1e-12:
            s = -z / dz
            if s > 0 and math.isfinite(s):
                ok[i] = True
                gx[i] = x + s * dx
                gy[i] = y + s * dy
        if not ok[i]:
            total += penalty
    for m in range(rows.shape[0]):
        i = rows[m]
        if not ok[i]:
            continue
        abx = b[m, 0] - a[m, 0]
        aby = b[m, 1] - a[m, 1]
        denom = max(abx * abx + aby * aby, 1e-300)
        t = ((gx[i] - a[m, 0]) * abx + (gy[i] - a[m, 1]) * aby) / denom
        t = min(max(t, 0.0), 1.0)
        ex = gx[i] - (a[m, 0] + t * abx)
        ey = gy[i] - (a[m, 1] + t * aby)
        d = math.sqrt(ex * ex + ey * ey)
        total += d * d if power == 2.0 else d ** power
    return total


@njit(cache=True)
def simplex_search(start, scale, step, max_evals, xtol, ftol, base, rows, a, b, aspect, power, penalty):
    """Adaptive Nelder-Mead over ``u = p / scale``; returns (best params, evaluations).

    Coefficients follow the dimension-adaptive choice that keeps the method
    effective beyond a handful of variables.
    """
    n = start.shape[0]
    alpha = 1.0
    gamma = 1.0 + 2.0 / n
    rho = 0.75 - 1.0 / (2.0 * n)
    sigma = 1.0 - 1.0 / n
    sim = np.empty((n + 1, n))
    fs = np.empty(n + 1)
    for j in range(n + 1):
        for k in range(n):
            sim[j, k] = start[k] / scale[k]
        if j > 0:
            sim[j, j - 1] += step[j - 1]
        fs[j] = keypoint_cost(sim[j] * scale, base, rows, a, b, aspect, power, penalty)
    evals = n + 1
    centroid = np.empty(n)
    while evals < max_evals:
        order = np.argsort(fs, kind="mergesort")
        sim = sim[order]
        fs = fs[order]
        spread_x = 0.0
        spread_f = 0.0
        for j in range(1, n + 1):
            spread_f = max(spread_f, abs(fs[j] - fs[0]))
            for k in range(n):
                spread_x = max(spread_x, abs(sim[j, k] - sim[0, k]))
        if spread_x <= xtol and spread_f <= ftol:
            break
        for k in range(n):
            centroid[k] = 0.0
            for j in range(n):
                centroid[k] += sim[j, k]
            centroid[k] /= n
        xr = centroid + alpha * (centroid - sim[n])
        fr = keypoint_cost(xr * scale, base, rows, a, b, aspect, power, penalty)
        evals += 1
        shrink = False
        if fr < fs[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = keypoint_cost(xe * scale, base, rows, a, b, aspect, power, penalty)
            evals += 1
            if fe < fr:
                sim[n] = xe
                fs[n] = fe
            else:
                sim[n] = xr
                fs[n] = fr
        elif fr < fs[n - 1]:
            sim[n] = xr
            fs[n] = fr
        else:
            if fr < fs[n]:
                xc = centroid + rho * (xr - centroid)
                fc = keypoint_cost(xc * scale, base, rows, a, b, aspect, power, penalty)
                evals += 1
                if fc <= fr:
                    sim[n] = xc
                    fs[n] = fc
                else:
                    shrink = True
            else:
                xc = centroid - rho * (sim[n] - centroid)
                fc = keypoint_cost(xc * scale, base, rows, a, b, aspect, power, penalty)
                evals += 1
                if fc < fs[n]:
                    sim[n] = xc
                    fs[n] = fc
                else:
                    shrink = True
        if shrink:
            for j in range(1, n + 1):
                sim[j] = sim[0] + sigma * (sim[j] - sim[0])
                fs[j] = keypoint_cost(sim[j] * scale, base, rows, a, b, aspect, power, penalty)
            evals += n
    best = 0
    for j in range(1, n + 1):
        if fs[j] < fs[best]:
            best = j
    return sim[best] * scale, evals
