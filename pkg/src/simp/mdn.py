"""Per-area bivariate Gaussian mixtures read off the raw network output.

Raw layout, one block of ``6 * M + 1`` values per area::

    [z_w, (z_alpha, z_mu_s, z_mu_t, z_sigma_s, z_sigma_t, z_rho) * M]

Areas are numbered from 1 in every public function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InputError, NumericError
from .kernels import LOG_2PI, LOG_EPS, RHO_MAX

N_AREAS = 5
SIGMA_FLOOR = 1e-3


def output_width(n_areas: int = N_AREAS, n_components: int = 1) -> int:
    return n_areas * (n_components * 6 + 1)


def _floors(sigma_floor):
    fs, ft = np.broadcast_to(np.asarray(sigma_floor, dtype=np.float64), (2,))
    return float(fs), float(ft)


def one_hot(areas, n_areas: int = N_AREAS) -> np.ndarray:
    areas = np.atleast_1d(np.asarray(areas, dtype=np.int64))
    if areas.size and (areas.min() < 1 or areas.max() > n_areas):
        raise InputError(f"area numbers must lie in 1..{n_areas}")
    out = np.zeros((areas.size, n_areas))
    out[np.arange(areas.size), areas - 1] = 1.0
    return out


def _log_softmax(z, axis):
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _logsumexp(z, axis):
    zmax = np.max(z, axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(zmax, axis=axis) + np.log(np.exp(z - zmax).sum(axis=axis))


@dataclass
class MixtureParams:
    """Constrained mixture parameters for a batch of ``n`` frames.

    ``weights`` has shape (n, n_areas); every other field (n, n_areas, M).
    Distances are in feet and times in seconds once mapped to physical units.
    """

    weights: np.ndarray
    alpha: np.ndarray
    mu_s: np.ndarray
    mu_t: np.ndarray
    sigma_s: np.ndarray
    sigma_t: np.ndarray
    rho: np.ndarray

    @property
    def n_areas(self) -> int:
        return self.weights.shape[1]

    @property
    def n_components(self) -> int:
        return self.alpha.shape[2]

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, index) -> "MixtureParams":
        idx = np.atleast_1d(np.arange(len(self))[index])
        return MixtureParams(*(getattr(self, f)[idx] for f in self._fields()))

    @staticmethod
    def _fields():
        return ("weights", "alpha", "mu_s", "mu_t", "sigma_s", "sigma_t", "rho")

    def covariance(self) -> np.ndarray:
        """(n, n_areas, M, 2, 2) covariance matrices."""
        cov = np.empty(self.alpha.shape + (2, 2))
        off = self.rho * self.sigma_s * self.sigma_t
        cov[..., 0, 0] = self.sigma_s**2
        cov[..., 1, 1] = self.sigma_t**2
        cov[..., 0, 1] = off
        cov[..., 1, 0] = off
        return cov

    def check(self, tol=1e-9):
        """Raise :class:`NumericError` unless every parameter invariant holds."""
        if not all(np.all(np.isfinite(getattr(self, f))) for f in self._fields()):
            raise NumericError("non-finite mixture parameter")
        if np.any(self.weights <= 0) or np.any(np.abs(self.weights.sum(axis=1) - 1.0) > tol):
            raise NumericError("area weights must be positive and sum to one")
        if np.any(self.alpha <= 0) or np.any(np.abs(self.alpha.sum(axis=2) - 1.0) > tol):
            raise NumericError("mixing coefficients must be positive and sum to one per area")
        if np.any(self.sigma_s <= 0) or np.any(self.sigma_t <= 0):
            raise NumericError("standard deviations must be positive")
        if np.any(np.abs(self.rho) >= 1.0):
            raise NumericError("correlation must lie strictly inside (-1, 1)")
        det = (self.sigma_s * self.sigma_t) ** 2 * (1.0 - self.rho**2)
        if np.any(det <= 0):
            raise NumericError("covariance is not positive definite")
        return self

    def rescaled(self, loc, scale) -> "MixtureParams":
        """Map means/deviations through ``y -> loc + scale * y`` per dimension."""
        return MixtureParams(
            self.weights, self.alpha,
            loc[0] + scale[0] * self.mu_s, loc[1] + scale[1] * self.mu_t,
            scale[0] * self.sigma_s, scale[1] * self.sigma_t, self.rho,
        )

    def marginal_moments(self):
        """Mean and standard deviation of each area's s- and t-marginals, shape (n, n_areas)."""
        mean_s = (self.alpha * self.mu_s).sum(axis=2)
        mean_t = (self.alpha * self.mu_t).sum(axis=2)
        var_s = (self.alpha * (self.sigma_s**2 + self.mu_s**2)).sum(axis=2) - mean_s**2
        var_t = (self.alpha * (self.sigma_t**2 + self.mu_t**2)).sum(axis=2) - mean_t**2
        return mean_s, np.sqrt(np.maximum(var_s, 0.0)), mean_t, np.sqrt(np.maximum(var_t, 0.0))


def _split_raw(raw, n_areas, n_components):
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[None, :]
    width = output_width(n_areas, n_components)
    if raw.ndim != 2 or raw.shape[1] != width:
        raise InputError(f"raw output width must be {width} for {n_areas} areas x {n_components} components")
    if not np.all(np.isfinite(raw)):
        raise NumericError("non-finite value in raw network output")
    blk = raw.reshape(raw.shape[0], n_areas, width // n_areas)
    comp = blk[:, :, 1:].reshape(raw.shape[0], n_areas, n_components, 6)
    return blk[:, :, 0], comp


def constrain(raw, n_areas=N_AREAS, n_components=1, sigma_floor=SIGMA_FLOOR) -> MixtureParams:
    """Softmax weights and mixing coefficients, exp deviations, tanh correlation."""
    zw, comp = _split_raw(raw, n_areas, n_components)
    fs, ft = _floors(sigma_floor)
    return MixtureParams(
        weights=np.exp(_log_softmax(zw, axis=1)),
        alpha=np.exp(_log_softmax(comp[..., 0], axis=2)),
        mu_s=comp[..., 1].copy(),
        mu_t=comp[..., 2].copy(),
        sigma_s=np.maximum(np.exp(comp[..., 3]), fs),
        sigma_t=np.maximum(np.exp(comp[..., 4]), ft),
        rho=np.clip(np.tanh(comp[..., 5]), -RHO_MAX, RHO_MAX),
    )


def component_log_density(params: MixtureParams, targets) -> np.ndarray:
    """log N(y; mu_m, Sigma_m) for every frame, area and component."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    us = (targets[:, 0, None, None] - params.mu_s) / params.sigma_s
    ut = (targets[:, 1, None, None] - params.mu_t) / params.sigma_t
    det = 1.0 - params.rho**2
    q = (us**2 - 2.0 * params.rho * us * ut + ut**2) / det
    return -LOG_2PI - np.log(params.sigma_s) - np.log(params.sigma_t) - 0.5 * np.log(det) - 0.5 * q


def area_log_density(params: MixtureParams, targets) -> np.ndarray:
    """(n, n_areas) log-density of each area's mixture at the frame's target."""
    return _logsumexp(np.log(params.alpha) + component_log_density(params, targets), axis=2)


def log_density(params: MixtureParams, area, target):
    """log f(y | x) of the mixture of ``area`` (1-based) at ``target = (y_s, y_t)``."""
    area = np.asarray(area)
    if np.any(area < 1) or np.any(area > params.n_areas):
        raise InputError(f"area must lie in 1..{params.n_areas}")
    dens = area_log_density(params, target)
    rows = np.arange(len(params))
    out = dens[rows, np.broadcast_to(area, rows.shape) - 1]
    return float(out[0]) if out.size == 1 and np.ndim(target) == 1 else out


def _label_matrix(labels, n_areas):
    labels = np.asarray(labels)
    if labels.ndim == 1 and labels.dtype.kind in "iu":
        return one_hot(labels, n_areas)
    labels = np.atleast_2d(labels).astype(np.float64)
    if labels.shape[1] != n_areas:
        raise InputError(f"label matrix needs {n_areas} columns")
    return labels


def loss_terms(params: MixtureParams, labels, targets):
    """Per-frame ``(nll, ce)`` where the total loss is ``W1 * nll + W2 * ce``.

    ``labels`` is either 1-based area numbers or an (n, n_areas) weight matrix.
    Soft (non one-hot) label rows evaluate every labelled area at the same
    target; that case is experimental.
    """
    lw = _label_matrix(labels, params.n_areas)
    if lw.shape[0] != len(params):
        raise InputError("labels and parameters are not aligned")
    ell = area_log_density(params, targets)
    pos = lw > 0
    with np.errstate(divide="ignore"):
        la = np.where(pos, np.log(np.where(pos, lw, 1.0)) + ell, -np.inf)
    nll = -_logsumexp(la, axis=1)
    logw = np.maximum(np.log(params.weights), LOG_EPS)
    ce = -(lw * logw).sum(axis=1)
    return nll, ce


def simp_loss(params: MixtureParams, labels, targets, w1=1.0, w2=1.0) -> float:
    """Joint loss summed over the batch."""
    if w1 < 0 or w2 < 0:
        raise InputError("loss weights must be non-negative")
    nll, ce = loss_terms(params, labels, targets)
    return float(w1 * nll.sum() + w2 * ce.sum())


def loss_and_gradient(raw, labels, targets, w1=1.0, w2=1.0, n_areas=N_AREAS, n_components=1,
                      sigma_floor=SIGMA_FLOOR):
    """``(nll, ce, grad)`` per frame; ``grad`` is d(W1*nll + W2*ce)/d(raw)."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    _split_raw(raw, n_areas, n_components)
    lw = _label_matrix(labels, n_areas)
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if not (lw.shape[0] == targets.shape[0] == raw.shape[0]):
        raise InputError("raw outputs, labels and targets are not aligned")
    fs, ft = _floors(sigma_floor)
    return kernels.mdn_terms(raw, targets, lw, n_areas, n_components, fs, ft, w1, w2)


def loss_gradient(raw, labels, targets, w1=1.0, w2=1.0, n_areas=N_AREAS, n_components=1,
                  sigma_floor=SIGMA_FLOOR) -> np.ndarray:
    """Gradient of :func:`simp_loss` (batch sum) with respect to the raw output."""
    _, _, grad = loss_and_gradient(raw, labels, targets, w1, w2, n_areas, n_components, sigma_floor)
    return grad


def allocate_counts(weights, count: int) -> np.ndarray:
    """Split ``count`` over areas proportionally to ``weights`` (largest remainder)."""
    if count < 0:
        raise InputError("count must be non-negative")
    weights = np.asarray(weights, dtype=np.float64)
    quota = weights / weights.sum() * count
    base = np.floor(quota).astype(np.int64)
    short = count - int(base.sum())
    order = np.argsort(-(quota - base), kind="stable")
    base[order[:short]] += 1
    return base


def sample(params: MixtureParams, count: int, rng, index: int = 0):
    """Draw ``count`` points ``(area, y_s, y_t)`` for frame ``index``.

    Points are first allotted to areas by weight, then each is drawn from its
    area's mixture: a component by ``alpha``, then a correlated normal pair.
    """
    counts = allocate_counts(params.weights[index], count)
    out = []
    for a, k in enumerate(counts):
        if k == 0:
            continue
        comp = rng.choice(params.n_components, size=k, p=params.alpha[index, a])
        z = rng.standard_normal((k, 2))
        ss = params.sigma_s[index, a, comp]
        st = params.sigma_t[index, a, comp]
        rho = params.rho[index, a, comp]
        ys = params.mu_s[index, a, comp] + ss * z[:, 0]
        yt = params.mu_t[index, a, comp] + st * (rho * z[:, 0] + np.sqrt(1.0 - rho**2) * z[:, 1])
        out.extend((a + 1, float(s), float(t)) for s, t in zip(ys, yt))
    return out
