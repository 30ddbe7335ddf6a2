"""Photometric losses with analytic gradients w.r.t. the rendered image."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InvalidParameterError

C1 = 0.01 ** 2
C2 = 0.03 ** 2


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _window_size(shape, window):
    size = min(window, shape[0], shape[1])
    if size % 2 == 0:
        size -= 1
    return max(size, 1)


def _filter_valid(x, w):
    """Separable 'valid' correlation over the first two axes."""
    k = w.size
    y = sliding_window_view(x, k, axis=0) @ w
    return sliding_window_view(y, k, axis=1) @ w


def _filter_valid_adjoint(g, w):
    k = w.size
    pad = [(k - 1, k - 1), (0, 0)] + [(0, 0)] * (g.ndim - 2)
    y = sliding_window_view(np.pad(g, pad), k, axis=0) @ w[::-1]
    pad = [(0, 0), (k - 1, k - 1)] + [(0, 0)] * (g.ndim - 2)
    return sliding_window_view(np.pad(y, pad), k, axis=1) @ w[::-1]


def _as_image(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    return x


def _check_pair(a, b):
    if a.shape != b.shape:
        raise InvalidParameterError(f"image shapes differ: {a.shape} vs {b.shape}")


@dataclass
class SSIMResult:
    ssim_map: np.ndarray
    mean: float
    _cache: tuple = None

    def grad_b(self):
        """d(mean SSIM)/d(b), same shape as the inputs."""
        a, b, w, mu_a, mu_b, big_a, big_b, big_c, big_d = self._cache
        s = self.ssim_map
        scale = 1.0 / s.size
        d_mu_b = s * (2.0 * mu_a / big_a - 2.0 * mu_a / big_b
                      - 2.0 * mu_b / big_c + 2.0 * mu_b / big_d) * scale
        d_e_ab = s * (2.0 / big_b) * scale
        d_e_bb = -s / big_d * scale
        return (_filter_valid_adjoint(d_mu_b, w)
                + 2.0 * b * _filter_valid_adjoint(d_e_bb, w)
                + a * _filter_valid_adjoint(d_e_ab, w))


def ssim_map(a, b, window=11, sigma=1.5):
    """Gaussian-windowed SSIM over the valid region, dynamic range 1.

    Accepts (H, W) or (H, W, C) images; channels are treated independently
    and averaged. Windows shrink to fit images smaller than ``window``.
    """
    a = _as_image(a)
    b = _as_image(b)
    _check_pair(a, b)
    w = gaussian_window(_window_size(a.shape, window), sigma)
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    big_a = 2.0 * mu_a * mu_b + C1
    big_b = 2.0 * cov + C2
    big_c = mu_a * mu_a + mu_b * mu_b + C1
    big_d = var_a + var_b + C2
    s = big_a * big_b / (big_c * big_d)
    return SSIMResult(s, float(np.mean(s)), (a, b, w, mu_a, mu_b, big_a, big_b, big_c, big_d))


def ssim(a, b, window=11, sigma=1.5):
    return ssim_map(a, b, window, sigma).mean


@dataclass
class LossResult:
    loss: float
    l1: float
    dssim: float
    grad: np.ndarray
    empty_mask: bool = False


def photometric_loss(target, pred, lam, mask=None, want_grad=True):
    """(1 - lam) * L1 + lam * (1 - SSIM), optionally restricted to ``mask``.

    With a mask the L1 term averages over foreground pixels (all channels)
    and SSIM compares the mask-multiplied images. An empty mask yields zero
    loss with ``empty_mask`` set.
    """
    if not 0.0 <= lam <= 1.0:
        raise InvalidParameterError("lambda must lie in [0, 1]")
    c = _as_image(target)
    p = _as_image(pred)
    _check_pair(c, p)
    if mask is not None:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != c.shape[:2]:
            raise InvalidParameterError(f"mask shape {m.shape} does not match image {c.shape[:2]}")
        n_fg = int(np.count_nonzero(m))
        if n_fg == 0:
            return LossResult(0.0, 0.0, 0.0, np.zeros_like(p), empty_mask=True)
        m = m[..., None]
        c = c * m
        p = p * m
        count = n_fg * c.shape[2]
    else:
        m = None
        count = c.size
    diff = p - c
    l1 = float(np.sum(np.abs(diff)) / count)
    grad = (1.0 - lam) * np.sign(diff) / count if want_grad else None
    dssim = 0.0
    if lam > 0.0:
        res = ssim_map(c, p)
        dssim = 1.0 - res.mean
        if want_grad:
            grad = grad - lam * res.grad_b()
    loss = (1.0 - lam) * l1 + lam * dssim
    if want_grad and m is not None:
        grad = grad * m
    return LossResult(loss, l1, dssim, grad)


def loss_unmasked(target, pred, lam):
    return photometric_loss(target, pred, lam, want_grad=False).loss


def loss_masked(target, alpha_img, pred, lam):
    """Returns (loss, empty_mask_flag)."""
    res = photometric_loss(target, pred, lam, mask=alpha_img, want_grad=False)
    return res.loss, res.empty_mask
