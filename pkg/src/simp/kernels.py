"""Hot numeric kernels, each with a numba loop version and a numpy twin.

``mdn_terms`` and ``select_neighbors`` are the dispatching entry points; the
``*_numpy`` and ``*_jit`` variants are importable for tests and benchmarks.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

LOG_2PI = math.log(2.0 * math.pi)
RHO_MAX = 1.0 - 1e-9
LOG_EPS = math.log(1e-12)

# slot order of the seven surrounding vehicles
LEFT_FRONT, LEFT_REF, LEFT_REAR, FRONT_REF, RIGHT_FRONT, RIGHT_REF, RIGHT_REAR = range(7)


# ---------------------------------------------------------------------------
# mixture-density loss terms and their gradient w.r.t. the raw network output
# ---------------------------------------------------------------------------


def mdn_terms_numpy(raw, targets, label_w, n_areas, n_comp, floor_s, floor_t, w1, w2):
    """Per-sample likelihood and cross-entropy terms plus the weighted gradient.

    Returns ``(nll, ce, grad)`` with ``grad = w1 * d(nll)/d(raw) + w2 * d(ce)/d(raw)``
    for every sample (no reduction over the batch).
    """
    n = raw.shape[0]
    width = 6 * n_comp + 1
    blk = raw.reshape(n, n_areas, width)
    zw = blk[:, :, 0]
    comp = blk[:, :, 1:].reshape(n, n_areas, n_comp, 6)
    za, zms, zmt, zss, zst, zr = (comp[..., k] for k in range(6))

    # area weights: log-softmax, clamped log for the cross-entropy
    shifted = zw - zw.max(axis=1, keepdims=True)
    logw = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    w = np.exp(logw)
    clamped = logw < LOG_EPS
    ce = -(label_w * np.where(clamped, LOG_EPS, logw)).sum(axis=1)
    lw_eff = np.where(clamped, 0.0, label_w)
    dce = w * lw_eff.sum(axis=1, keepdims=True) - lw_eff

    shifted = za - za.max(axis=2, keepdims=True)
    loga = shifted - np.log(np.exp(shifted).sum(axis=2, keepdims=True))
    alpha = np.exp(loga)

    ss_raw = np.exp(zss)
    st_raw = np.exp(zst)
    ss = np.maximum(ss_raw, floor_s)
    st = np.maximum(st_raw, floor_t)
    rho_raw = np.tanh(zr)
    rho = np.clip(rho_raw, -RHO_MAX, RHO_MAX)

    us = (targets[:, 0, None, None] - zms) / ss
    ut = (targets[:, 1, None, None] - zmt) / st
    det = 1.0 - rho * rho
    q = (us * us - 2.0 * rho * us * ut + ut * ut) / det
    log_n = -LOG_2PI - np.log(ss) - np.log(st) - 0.5 * np.log(det) - 0.5 * q

    lc = loga + log_n
    lc_max = lc.max(axis=2, keepdims=True)
    ell = lc_max[..., 0] + np.log(np.exp(lc - lc_max).sum(axis=2))
    gamma = np.exp(lc - ell[..., None])

    pos = label_w > 0.0
    with np.errstate(divide="ignore"):
        la = np.where(pos, np.log(np.where(pos, label_w, 1.0)) + ell, -np.inf)
    la_max = la.max(axis=1, keepdims=True)
    total = la_max[:, 0] + np.log(np.exp(la - la_max).sum(axis=1))
    nll = -total
    resp = np.where(pos, np.exp(la - total[:, None]), 0.0)

    g = -resp[..., None] * gamma
    grad_comp = np.empty_like(comp)
    grad_comp[..., 0] = -resp[..., None] * (gamma - alpha)
    grad_comp[..., 1] = g * (us - rho * ut) / (det * ss)
    grad_comp[..., 2] = g * (ut - rho * us) / (det * st)
    grad_comp[..., 3] = np.where(ss_raw >= floor_s, g * (-1.0 + us * (us - rho * ut) / det), 0.0)
    grad_comp[..., 4] = np.where(st_raw >= floor_t, g * (-1.0 + ut * (ut - rho * us) / det), 0.0)
    grad_comp[..., 5] = np.where(np.abs(rho_raw) <= RHO_MAX, g * (rho + us * ut - rho * q), 0.0)

    grad = np.empty_like(blk)
    grad[:, :, 0] = w2 * dce
    grad[:, :, 1:] = w1 * grad_comp.reshape(n, n_areas, 6 * n_comp)
    return nll, ce, grad.reshape(n, -1)


def _mdn_terms_loop(raw, targets, label_w, n_areas, n_comp, floor_s, floor_t, w1, w2):
    n = raw.shape[0]
    width = 6 * n_comp + 1
    nll = np.empty(n)
    ce = np.empty(n)
    grad = np.zeros_like(raw)
    ell = np.empty(n_areas)
    logw = np.empty(n_areas)
    loga = np.empty(n_comp)
    lc = np.empty(n_comp)
    for b in range(n):
        ys = targets[b, 0]
        yt = targets[b, 1]
        zmax = -np.inf
        for a in range(n_areas):
            zmax = max(zmax, raw[b, a * width])
        acc = 0.0
        for a in range(n_areas):
            acc += math.exp(raw[b, a * width] - zmax)
        lnorm = zmax + math.log(acc)
        for a in range(n_areas):
            logw[a] = raw[b, a * width] - lnorm

        ce_b = 0.0
        lw_sum = 0.0
        for a in range(n_areas):
            if logw[a] < LOG_EPS:
                ce_b -= label_w[b, a] * LOG_EPS
            else:
                ce_b -= label_w[b, a] * logw[a]
                lw_sum += label_w[b, a]
        ce[b] = ce_b
        for a in range(n_areas):
            eff = 0.0 if logw[a] < LOG_EPS else label_w[b, a]
            grad[b, a * width] = w2 * (math.exp(logw[a]) * lw_sum - eff)

        # likelihood of each area with a positive label
        lmax = -np.inf
        for a in range(n_areas):
            if label_w[b, a] <= 0.0:
                continue
            o = a * width + 1
            amax = -np.inf
            for m in range(n_comp):
                amax = max(amax, raw[b, o + 6 * m])
            acc = 0.0
            for m in range(n_comp):
                acc += math.exp(raw[b, o + 6 * m] - amax)
            anorm = amax + math.log(acc)
            cmax = -np.inf
            for m in range(n_comp):
                k = o + 6 * m
                loga[m] = raw[b, k] - anorm
                ss = max(math.exp(raw[b, k + 3]), floor_s)
                st = max(math.exp(raw[b, k + 4]), floor_t)
                rho = min(max(math.tanh(raw[b, k + 5]), -RHO_MAX), RHO_MAX)
                us = (ys - raw[b, k + 1]) / ss
                ut = (yt - raw[b, k + 2]) / st
                det = 1.0 - rho * rho
                q = (us * us - 2.0 * rho * us * ut + ut * ut) / det
                lc[m] = loga[m] - LOG_2PI - math.log(ss) - math.log(st) - 0.5 * math.log(det) - 0.5 * q
                cmax = max(cmax, lc[m])
            acc = 0.0
            for m in range(n_comp):
                acc += math.exp(lc[m] - cmax)
            ell[a] = cmax + math.log(acc)
            lmax = max(lmax, math.log(label_w[b, a]) + ell[a])
        acc = 0.0
        for a in range(n_areas):
            if label_w[b, a] > 0.0:
                acc += math.exp(math.log(label_w[b, a]) + ell[a] - lmax)
        total = lmax + math.log(acc)
        nll[b] = -total

        for a in range(n_areas):
            if label_w[b, a] <= 0.0:
                continue
            resp = math.exp(math.log(label_w[b, a]) + ell[a] - total)
            o = a * width + 1
            amax = -np.inf
            for m in range(n_comp):
                amax = max(amax, raw[b, o + 6 * m])
            acc = 0.0
            for m in range(n_comp):
                acc += math.exp(raw[b, o + 6 * m] - amax)
            anorm = amax + math.log(acc)
            for m in range(n_comp):
                k = o + 6 * m
                alpha = math.exp(raw[b, k] - anorm)
                ss_raw = math.exp(raw[b, k + 3])
                st_raw = math.exp(raw[b, k + 4])
                ss = max(ss_raw, floor_s)
                st = max(st_raw, floor_t)
                rho_raw = math.tanh(raw[b, k + 5])
                rho = min(max(rho_raw, -RHO_MAX), RHO_MAX)
                us = (ys - raw[b, k + 1]) / ss
                ut = (yt - raw[b, k + 2]) / st
                det = 1.0 - rho * rho
                q = (us * us - 2.0 * rho * us * ut + ut * ut) / det
                log_n = -LOG_2PI - math.log(ss) - math.log(st) - 0.5 * math.log(det) - 0.5 * q
                gamma = math.exp(raw[b, k] - anorm + log_n - ell[a])
                g = -resp * gamma
                grad[b, k] = w1 * (-resp * (gamma - alpha))
                grad[b, k + 1] = w1 * g * (us - rho * ut) / (det * ss)
                grad[b, k + 2] = w1 * g * (ut - rho * us) / (det * st)
                if ss_raw >= floor_s:
                    grad[b, k + 3] = w1 * g * (-1.0 + us * (us - rho * ut) / det)
                if st_raw >= floor_t:
                    grad[b, k + 4] = w1 * g * (-1.0 + ut * (ut - rho * us) / det)
                if abs(rho_raw) <= RHO_MAX:
                    grad[b, k + 5] = w1 * g * (rho + us * ut - rho * q)
    return nll, ce, grad


mdn_terms_jit = njit(_mdn_terms_loop)


def mdn_terms(raw, targets, label_w, n_areas, n_comp, floor_s, floor_t, w1, w2):
    raw = np.ascontiguousarray(raw, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.float64)
    label_w = np.ascontiguousarray(label_w, dtype=np.float64)
    impl = mdn_terms_jit if USE_NUMBA else mdn_terms_numpy
    return impl(raw, targets, label_w, int(n_areas), int(n_comp),
                float(floor_s), float(floor_t), float(w1), float(w2))


# ---------------------------------------------------------------------------
# surrounding-vehicle selection
# ---------------------------------------------------------------------------


def _select_neighbors_loop(x, y, lane, pred, radius):
    out = np.full(7, -1, dtype=np.int64)
    px = x[pred]
    py = y[pred]
    pl = lane[pred]
    best_front = np.inf
    best_left = np.inf
    best_right = np.inf
    for j in range(x.shape[0]):
        if j == pred or abs(y[j] - py) > radius:
            continue
        d2 = (x[j] - px) ** 2 + (y[j] - py) ** 2
        if lane[j] == pl:
            if y[j] > py and d2 < best_front:
                best_front = d2
                out[FRONT_REF] = j
        elif lane[j] == pl - 1:
            if d2 < best_left:
                best_left = d2
                out[LEFT_REF] = j
        elif lane[j] == pl + 1:
            if d2 < best_right:
                best_right = d2
                out[RIGHT_REF] = j
    for side in range(2):
        ref = out[LEFT_REF] if side == 0 else out[RIGHT_REF]
        if ref < 0:
            continue
        front_slot = LEFT_FRONT if side == 0 else RIGHT_FRONT
        rear_slot = LEFT_REAR if side == 0 else RIGHT_REAR
        ry = y[ref]
        best_ahead = np.inf
        best_behind = np.inf
        for j in range(x.shape[0]):
            if j == pred or j == ref or lane[j] != lane[ref] or abs(y[j] - py) > radius:
                continue
            if y[j] > ry:
                if y[j] - ry < best_ahead:
                    best_ahead = y[j] - ry
                    out[front_slot] = j
            elif y[j] < ry:
                if ry - y[j] < best_behind:
                    best_behind = ry - y[j]
                    out[rear_slot] = j
    return out


select_neighbors_jit = njit(_select_neighbors_loop)


def _argmin_or_missing(values, mask):
    if not mask.any():
        return -1
    return int(np.argmin(np.where(mask, values, np.inf)))


def select_neighbors_numpy(x, y, lane, pred, radius):
    out = np.full(7, -1, dtype=np.int64)
    others = np.ones(x.shape[0], dtype=bool)
    others[pred] = False
    near = others & (np.abs(y - y[pred]) <= radius)
    d2 = (x - x[pred]) ** 2 + (y - y[pred]) ** 2
    pl = lane[pred]
    out[FRONT_REF] = _argmin_or_missing(d2, near & (lane == pl) & (y > y[pred]))
    out[LEFT_REF] = _argmin_or_missing(d2, near & (lane == pl - 1))
    out[RIGHT_REF] = _argmin_or_missing(d2, near & (lane == pl + 1))
    for ref_slot, front_slot, rear_slot in ((LEFT_REF, LEFT_FRONT, LEFT_REAR),
                                            (RIGHT_REF, RIGHT_FRONT, RIGHT_REAR)):
        ref = out[ref_slot]
        if ref < 0:
            continue
        same = near & (lane == lane[ref])
        same[ref] = False
        dy = y - y[ref]
        out[front_slot] = _argmin_or_missing(dy, same & (dy > 0))
        out[rear_slot] = _argmin_or_missing(-dy, same & (dy < 0))
    return out


def select_neighbors(x, y, lane, pred, radius):
    """Indices of the seven surrounding vehicles (``-1`` where absent).

    Slot order: left-front, left reference, left-rear, front reference,
    right-front, right reference, right-rear. Lane ids grow to the right.
    """
    impl = select_neighbors_jit if USE_NUMBA else select_neighbors_numpy
    return impl(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64),
                np.asarray(lane, dtype=np.int64), int(pred), float(radius))
