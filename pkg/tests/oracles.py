"""Independent reference implementations used only by the tests.

Nothing here imports the package's numerics: densities, softmaxes and the
joint loss are re-derived from scratch, in extended precision where finite
differences need headroom.
"""

import math

import numpy as np

LD = np.longdouble


def softmax_py(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def bivariate_pdf(ys, yt, ms, mt, ss, st, rho):
    """Plain (non-log) bivariate normal density."""
    zs = (ys - ms) / ss
    zt = (yt - mt) / st
    det = 1.0 - rho * rho
    q = (zs * zs - 2.0 * rho * zs * zt + zt * zt) / det
    return np.exp(-0.5 * q) / (2.0 * math.pi * ss * st * np.sqrt(det))


def mixture_pdf(ys, yt, alpha, ms, mt, ss, st, rho):
    return sum(alpha[m] * bivariate_pdf(ys, yt, ms[m], mt[m], ss[m], st[m], rho[m]) for m in range(len(alpha)))


def decode_block(raw_row, n_areas, n_comp, floor=1e-3):
    """Constrained parameters of one frame, as nested Python lists (extended precision)."""
    raw_row = np.asarray(raw_row, dtype=LD)
    width = 6 * n_comp + 1
    zw = raw_row.reshape(n_areas, width)[:, 0]
    zw = zw - zw.max()
    w = np.exp(zw) / np.exp(zw).sum()
    areas = []
    for a in range(n_areas):
        blk = raw_row[a * width + 1:(a + 1) * width].reshape(n_comp, 6)
        za = blk[:, 0] - blk[:, 0].max()
        alpha = np.exp(za) / np.exp(za).sum()
        areas.append({
            "alpha": alpha, "mu_s": blk[:, 1], "mu_t": blk[:, 2],
            "sigma_s": np.maximum(np.exp(blk[:, 3]), LD(floor)),
            "sigma_t": np.maximum(np.exp(blk[:, 4]), LD(floor)),
            "rho": np.tanh(blk[:, 5]),
        })
    return w, areas


def joint_loss_ld(raw, areas_1based, targets, w1, w2, n_areas, n_comp, floor=1e-3):
    """Batch sum of W1 * -log f(y | true area) + W2 * -log w_true, in long double."""
    total = LD(0)
    for row, area, (ys, yt) in zip(np.asarray(raw, dtype=LD), areas_1based, np.asarray(targets, dtype=LD)):
        w, params = decode_block(row, n_areas, n_comp, floor)
        p = params[area - 1]
        dens = LD(0)
        for m in range(n_comp):
            zs = (ys - p["mu_s"][m]) / p["sigma_s"][m]
            zt = (yt - p["mu_t"][m]) / p["sigma_t"][m]
            det = 1 - p["rho"][m] ** 2
            q = (zs * zs - 2 * p["rho"][m] * zs * zt + zt * zt) / det
            dens += p["alpha"][m] * np.exp(-q / 2) / (2 * LD(math.pi) * p["sigma_s"][m] * p["sigma_t"][m] * np.sqrt(det))
        total += w1 * -np.log(dens) + w2 * -np.log(w[area - 1])
    return total


def joint_loss_ld_many(raw, areas_1based, targets, w1, w2, n_areas, n_comp, floor=1e-3):
    """Vectorized :func:`joint_loss_ld` over a leading axis of K raw batches (K, B, D) -> (K,)."""
    raw = np.asarray(raw, dtype=LD)
    K, B, _ = raw.shape
    width = 6 * n_comp + 1
    blk = raw.reshape(K, B, n_areas, width)
    zw = blk[..., 0]
    zw = zw - zw.max(axis=2, keepdims=True)
    logw = zw - np.log(np.exp(zw).sum(axis=2, keepdims=True))
    idx = np.asarray(areas_1based) - 1
    rows = np.arange(B)
    comp = blk[:, rows, idx, 1:].reshape(K, B, n_comp, 6)
    za = comp[..., 0] - comp[..., 0].max(axis=2, keepdims=True)
    alpha = np.exp(za) / np.exp(za).sum(axis=2, keepdims=True)
    ss = np.maximum(np.exp(comp[..., 3]), LD(floor))
    st = np.maximum(np.exp(comp[..., 4]), LD(floor))
    rho = np.tanh(comp[..., 5])
    y = np.asarray(targets, dtype=LD)
    zs = (y[None, :, 0, None] - comp[..., 1]) / ss
    zt = (y[None, :, 1, None] - comp[..., 2]) / st
    det = 1 - rho**2
    q = (zs * zs - 2 * rho * zs * zt + zt * zt) / det
    # log of each weighted component, then a max-shifted sum so far targets do not underflow
    logc = np.log(alpha) - q / 2 - np.log(2 * LD(math.pi) * ss * st * np.sqrt(det))
    top = logc.max(axis=2)
    log_dens = top + np.log(np.exp(logc - top[..., None]).sum(axis=2))
    return (w1 * -log_dens + w2 * -logw[:, rows, idx]).sum(axis=1)


def net_forward_ld_many(weights, biases, activations, x):
    """Like :func:`net_forward_ld` with a leading axis of K parameter sets; returns (K, B, n_out)."""
    h = np.broadcast_to(np.asarray(x, dtype=LD), (weights[0].shape[0],) + np.shape(x))
    for W, b, act in zip(weights, biases, activations):
        h = np.einsum("kbi,koi->kbo", h, W) + b[:, None, :]
        if act == "tanh":
            h = np.tanh(h)
    return h


def net_param_gradient_fd(layers, x, loss_many, h=1e-5):
    """Central-difference gradient of ``loss_many(raw (K,B,D)) -> (K,)`` w.r.t. every weight and bias.

    ``layers`` is a list of (W, b, activation). Returns a flat array in the
    order W0, b0, W1, b1, ...
    """
    flat = np.concatenate([np.r_[np.ravel(W), b] for W, b, _ in layers]).astype(LD)
    P = flat.size
    sets = np.repeat(flat[None, :], 2 * P, axis=0)
    step = LD(h)
    sets[np.arange(P), np.arange(P)] += step
    sets[P + np.arange(P), np.arange(P)] -= step
    Ws, bs, k = [], [], 0
    for W, b, _ in layers:
        n_out, n_in = np.shape(W)
        Ws.append(sets[:, k:k + n_out * n_in].reshape(2 * P, n_out, n_in))
        k += n_out * n_in
        bs.append(sets[:, k:k + n_out])
        k += n_out
    values = loss_many(net_forward_ld_many(Ws, bs, [a for _, _, a in layers], x))
    return (values[:P] - values[P:]) / (2 * step)


def net_forward_ld(weights, biases, activations, x):
    """Affine + activation chain in long double; ``weights[k]`` is (n_out, n_in)."""
    h = np.asarray(x, dtype=LD)
    for W, b, act in zip(weights, biases, activations):
        h = h @ np.asarray(W, dtype=LD).T + np.asarray(b, dtype=LD)
        if act == "tanh":
            h = np.tanh(h)
    return h


def central_difference(f, params, h):
    """d f / d params by central differences; ``params`` is a flat long-double array modified in place."""
    grad = np.empty(params.size, dtype=LD)
    for i in range(params.size):
        old = params[i]
        params[i] = old + h
        up = f()
        params[i] = old - h
        down = f()
        params[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(a), np.abs(n))
    err = np.abs(a - n) / np.where(denom > 0, denom, 1.0)
    return err, denom


def gradient_agrees(analytic, numeric, tol=1e-5, small_tol=1e-4, small=1e-8):
    err, denom = relative_error(analytic, numeric)
    limit = np.where(denom < small, small_tol, tol)
    # both values subnormal: float64 cannot tell them apart from zero
    err = np.where(denom < np.finfo(np.float64).tiny, 0.0, err)
    return bool(np.all(err < limit)), float(np.max(err))


def mp_sample_loss(row, area, ys, yt, w1, w2, n_areas, n_comp, floor=1e-3):
    """One frame's joint loss with mpmath at the current working precision."""
    import mpmath as mp

    width = 6 * n_comp + 1
    zw = [row[a * width] for a in range(n_areas)]
    top = max(zw)
    log_w = zw[area - 1] - top - mp.log(mp.fsum(mp.exp(z - top) for z in zw))
    blk = row[(area - 1) * width + 1:area * width]
    za = [blk[6 * m] for m in range(n_comp)]
    atop = max(za)
    log_norm = atop + mp.log(mp.fsum(mp.exp(z - atop) for z in za))
    terms = []
    for m in range(n_comp):
        _, mu_s, mu_t, z_ss, z_st, z_r = blk[6 * m:6 * m + 6]
        ss = max(mp.exp(z_ss), mp.mpf(floor))
        st = max(mp.exp(z_st), mp.mpf(floor))
        rho = mp.tanh(z_r)
        zs, zt = (ys - mu_s) / ss, (yt - mu_t) / st
        det = 1 - rho**2
        q = (zs**2 - 2 * rho * zs * zt + zt**2) / det
        terms.append(za[m] - log_norm - q / 2 - mp.log(2 * mp.pi * ss * st * mp.sqrt(det)))
    ttop = max(terms)
    log_dens = ttop + mp.log(mp.fsum(mp.exp(t - ttop) for t in terms))
    return -w1 * log_dens - w2 * log_w


def mp_raw_gradient(raw, areas, targets, w1, w2, n_areas, n_comp, magnitude, floor=1e-3):
    """Central differences of :func:`mp_sample_loss` per raw entry.

    ``magnitude`` gives the expected size of each entry; precision and step
    are chosen per entry so the difference quotient resolves it, which no
    fixed-width float can do for entries many decades below the loss.
    """
    import mpmath as mp

    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty(raw.shape)
    for b in range(raw.shape[0]):
        for j in range(raw.shape[1]):
            decades = int(max(0.0, -math.log10(max(abs(magnitude[b, j]), 1e-300))))
            with mp.workdps(40 + 2 * decades):
                h = mp.mpf(10) ** (-(15 + decades // 2))
                row = [mp.mpf(float(v)) for v in raw[b]]
                args = (areas[b], mp.mpf(float(targets[b][0])), mp.mpf(float(targets[b][1])),
                        mp.mpf(float(w1)), mp.mpf(float(w2)), n_areas, n_comp, floor)
                row[j] += h
                up = mp_sample_loss(row, *args)
                row[j] -= 2 * h
                down = mp_sample_loss(row, *args)
                out[b, j] = float((up - down) / (2 * h))
    return out
