"""Training losses with analytic gradients: Charbonnier and multi-scale SSIM.

Both losses return (value, dvalue/dpred) computed by hand — the MS-SSIM
gradient chains through the Gaussian windowed moments at every scale and the
2x2-average downsampling between scales. Windowing is circular (periodic),
consistent with the package-wide periodic convolution convention, which makes
the window operator exactly self-adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .grids import as_grid, gaussian_kernel, transfer

DEFAULT_CHARBONNIER_EPS = 1e-3

# Canonical multi-scale exponent weights (finest -> coarsest, 5 dyadic scales).
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

# Stability constants for a unit dynamic range.
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# Means of the per-scale maps are clamped at this floor before the fractional
# powers combine them; degenerate anti-correlated inputs would otherwise feed
# a negative base to a fractional exponent.
_MEAN_FLOOR = 1e-8


@dataclass(frozen=True)
class WeightPair:
    """Convex pair (alpha, beta) weighting fidelity vs perceptual loss."""

    alpha: float
    beta: float

    def as_tuple(self):
        return (self.alpha, self.beta)


@dataclass
class LossValue:
    fidelity: float
    perceptual: float
    combined: float
    alpha: float
    beta: float


def charbonnier(pred, target, eps: float = DEFAULT_CHARBONNIER_EPS):
    """Smooth L1 fidelity: mean(sqrt(diff^2 + eps^2)) and its exact gradient."""
    pred = as_grid(pred)
    target = as_grid(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    if not eps > 0:
        raise ConfigError(f"charbonnier eps must be > 0, got {eps}")
    diff = pred - target
    root = np.sqrt(diff * diff + eps * eps)
    value = float(np.mean(root))
    grad = diff / (root * diff.size)
    return value, grad


# ---------------------------------------------------------------------------
# MS-SSIM
# ---------------------------------------------------------------------------


def _weights_for(scales: int) -> tuple:
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ConfigError(f"scales must be in 1..{len(MS_SSIM_WEIGHTS)}, got {scales}")
    w = np.array(MS_SSIM_WEIGHTS[:scales])
    return tuple(w / w.sum())


@dataclass(frozen=True)
class MsSsimConfig:
    scales: int = 3
    window_size: int = 11
    window_sigma: float = 1.5
    c1: float = SSIM_C1
    c2: float = SSIM_C2
    weights: tuple = field(default=())

    def __post_init__(self):
        if self.window_size % 2 != 1 or self.window_size < 3:
            raise ConfigError(f"window_size must be odd >= 3, got {self.window_size}")
        if not self.window_sigma > 0:
            raise ConfigError(f"window_sigma must be > 0, got {self.window_sigma}")
        if not self.weights:
            object.__setattr__(self, "weights", _weights_for(self.scales))
        elif len(self.weights) != self.scales:
            raise ConfigError(
                f"{len(self.weights)} weights for {self.scales} scales"
            )

    def validate_shape(self, h: int, w: int) -> None:
        coarse = min(h, w) >> (self.scales - 1)
        if coarse < self.window_size:
            raise ConfigError(
                f"grid {h}x{w} too small for {self.scales} dyadic scales with a "
                f"{self.window_size}-tap window (coarsest side {coarse})"
            )

    @classmethod
    def for_shape(cls, h: int, w: int) -> "MsSsimConfig":
        """5 scales for large grids, 3-scale renormalized fallback under 176 px."""
        scales = 5 if min(h, w) >= 176 else 3
        while scales > 1 and (min(h, w) >> (scales - 1)) < 11:
            scales -= 1
        cfg = cls(scales=scales)
        cfg.validate_shape(h, w)
        return cfg


_WINDOW_CACHE: dict = {}


def _window_transfer(h: int, w: int, size: int, sigma: float) -> np.ndarray:
    key = (h, w, size, sigma)
    t = _WINDOW_CACHE.get(key)
    if t is None:
        t = transfer(gaussian_kernel(size, sigma), h, w)
        _WINDOW_CACHE[key] = t
    return t


def _wfilt(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Circular correlation with the (symmetric) Gaussian window, via FFT."""
    return np.fft.ifft2(np.fft.fft2(x) * t).real


def _downsample2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling; trailing odd row/column is dropped."""
    h2, w2 = x.shape[0] // 2, x.shape[1] // 2
    v = x[: 2 * h2, : 2 * w2]
    return 0.25 * (v[0::2, 0::2] + v[1::2, 0::2] + v[0::2, 1::2] + v[1::2, 1::2])


def _upsample_adjoint(g: np.ndarray, shape) -> np.ndarray:
    """Exact adjoint of _downsample2 onto the given finer shape."""
    out = np.zeros(shape)
    h2, w2 = g.shape
    q = 0.25 * g
    out[0 : 2 * h2 : 2, 0 : 2 * w2 : 2] = q
    out[1 : 2 * h2 : 2, 0 : 2 * w2 : 2] = q
    out[0 : 2 * h2 : 2, 1 : 2 * w2 : 2] = q
    out[1 : 2 * h2 : 2, 1 : 2 * w2 : 2] = q
    return out


def _ssim_parts(x, y, t, c1, c2, with_luminance):
    mx = _wfilt(x, t)
    my = _wfilt(y, t)
    sxx = _wfilt(x * x, t) - mx * mx
    syy = _wfilt(y * y, t) - my * my
    sxy = _wfilt(x * y, t) - mx * my
    q = sxx + syy + c2
    cs = (2.0 * sxy + c2) / q
    parts = {"x": x, "y": y, "mx": mx, "my": my, "q": q, "cs": cs}
    if with_luminance:
        s = mx * mx + my * my + c1
        parts["s"] = s
        parts["l"] = (2.0 * mx * my + c1) / s
    return parts


def _ssim_scale_backward(parts, t, g_cs_mean, g_l_mean):
    """dJ/dx for one scale given scalar grads on mean(cs) (and mean(l))."""
    x, y = parts["x"], parts["y"]
    n = x.size
    u = g_cs_mean / n
    a_sxy = u * (2.0 / parts["q"])
    a_sxx = u * (-parts["cs"] / parts["q"])
    dx = (
        2.0 * x * _wfilt(a_sxx, t)
        - 2.0 * _wfilt(a_sxx * parts["mx"], t)
        + y * _wfilt(a_sxy, t)
        - _wfilt(a_sxy * parts["my"], t)
    )
    if g_l_mean != 0.0:
        b_mx = (g_l_mean / n) * 2.0 * (parts["my"] - parts["l"] * parts["mx"]) / parts["s"]
        dx = dx + _wfilt(b_mx, t)
    return dx


def _ms_ssim_core(pred, target, cfg: MsSsimConfig, want_grad: bool):
    pred = as_grid(pred)
    target = as_grid(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    cfg.validate_shape(*pred.shape)

    xs, ys = [pred], [target]
    for _ in range(cfg.scales - 1):
        xs.append(_downsample2(xs[-1]))
        ys.append(_downsample2(ys[-1]))

    parts_all, cs_means, transfers = [], [], []
    l_mean = None
    for j in range(cfg.scales):
        t = _window_transfer(*xs[j].shape, cfg.window_size, cfg.window_sigma)
        transfers.append(t)
        parts = _ssim_parts(xs[j], ys[j], t, cfg.c1, cfg.c2, j == cfg.scales - 1)
        parts_all.append(parts)
        cs_means.append(max(float(np.mean(parts["cs"])), _MEAN_FLOOR))
        if j == cfg.scales - 1:
            l_mean = max(float(np.mean(parts["l"])), _MEAN_FLOOR)

    w = cfg.weights
    value = float(l_mean ** w[-1])
    for j in range(cfg.scales):
        value *= cs_means[j] ** w[j]

    if not want_grad:
        return value, None

    # Scalar chain: value = prod_j csm_j^{w_j} * lm^{w_last}
    g_cs = [value * w[j] / cs_means[j] for j in range(cfg.scales)]
    g_l = value * w[-1] / l_mean
    # Walk coarse -> fine, pushing through the downsampling adjoint.
    g = None
    for j in range(cfg.scales - 1, -1, -1):
        dx = _ssim_scale_backward(
            parts_all[j], transfers[j], g_cs[j], g_l if j == cfg.scales - 1 else 0.0
        )
        g = dx if g is None else dx + _upsample_adjoint(g, xs[j].shape)
    return value, g


def ms_ssim(pred, target, cfg: MsSsimConfig | None = None):
    """Multi-scale SSIM in [0, 1] and its exact gradient wrt pred.

    cs terms contribute at every scale, the luminance term only at the
    coarsest, each raised to its (renormalized) canonical exponent weight.
    """
    if cfg is None:
        cfg = MsSsimConfig.for_shape(*np.shape(pred))
    return _ms_ssim_core(pred, target, cfg, want_grad=True)


def ms_ssim_value(pred, target, cfg: MsSsimConfig | None = None) -> float:
    """Value-only MS-SSIM (skips the backward bookkeeping)."""
    if cfg is None:
        cfg = MsSsimConfig.for_shape(*np.shape(pred))
    return _ms_ssim_core(pred, target, cfg, want_grad=False)[0]


def ssim_index(pred, target, window_size: int = 11, window_sigma: float = 1.5) -> float:
    """Plain single-scale SSIM (mean of the joint luminance*structure map)."""
    pred = as_grid(pred)
    target = as_grid(target)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    if min(pred.shape) < window_size:
        raise ConfigError(
            f"grid {pred.shape} smaller than the {window_size}-tap SSIM window"
        )
    t = _window_transfer(*pred.shape, window_size, window_sigma)
    parts = _ssim_parts(pred, target, t, SSIM_C1, SSIM_C2, True)
    return float(np.mean(parts["l"] * parts["cs"]))


def combined_loss(
    pred,
    target,
    weights: WeightPair,
    eps: float = DEFAULT_CHARBONNIER_EPS,
    ms_cfg: MsSsimConfig | None = None,
):
    """alpha * Charbonnier + beta * (1 - MS-SSIM); returns (LossValue, grad)."""
    fid, g_fid = charbonnier(pred, target, eps)
    ms, g_ms = ms_ssim(pred, target, ms_cfg)
    perc = 1.0 - ms
    a, b = weights.alpha, weights.beta
    combined = a * fid + b * perc
    grad = a * g_fid - b * g_ms
    return LossValue(fid, perc, combined, a, b), grad
