"""Frequency-gated restoration operator and its exact analytic gradients.

The operator splits an input grid into complementary bands with a learnable
lowpass kernel, refines the low band with a sigmoid-bounded mask applied in
the frequency domain, refines the high band with a sigmoid-bounded mask
applied in the spatial domain, and sums the two refined branches:

    x_l = conv2_periodic(x, K)            # low band (learnable taps K)
    x_h = x - x_l                         # exact complement
    x_l' = ifft2(M_spec * fft2(x_l))      # spectral gate, M_spec in (0,1)
    x_h' = M_spat * x_h                   # spatial gate, M_spat in (0,1)
    y    = x_l' + x_h'

Every gradient is derived by hand from the adjoint of each stage; there is no
autodiff anywhere. The kernel gradient couples through BOTH branches because
x_h depends on K through the band split.

Spectral mask parameterizations:
  * ``per_frequency`` — one logit per DFT coefficient; logits are averaged
    with their Hermitian mirror before the sigmoid so the materialized mask
    is real-symmetric and maps real grids to real grids,
  * ``radial_bins`` — one logit per radial frequency band (shift-invariant,
    shape-agnostic).

Spatial mask parameterizations:
  * ``per_pixel`` — one logit per pixel,
  * ``gap_affine`` — scalar gate sigmoid(a * mean(|x_h|) + b) with two
    learnable scalars (a global-average-pooling affine head).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericIntegrityError
from .grids import as_grid, as_kernel, conv2_periodic, fft2, gaussian_kernel, ifft2

MASK_PER_FREQUENCY = "per_frequency"
MASK_RADIAL_BINS = "radial_bins"
SPATIAL_PER_PIXEL = "per_pixel"
SPATIAL_GAP_AFFINE = "gap_affine"

MASK_MODES = (MASK_PER_FREQUENCY, MASK_RADIAL_BINS)
SPATIAL_MODES = (SPATIAL_PER_PIXEL, SPATIAL_GAP_AFFINE)


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def hermitian_flip(a: np.ndarray) -> np.ndarray:
    """b[i, j] = a[(-i) % H, (-j) % W] — index map of conjugate symmetry."""
    return np.roll(a[::-1, ::-1], (1, 1), axis=(0, 1))


_BIN_CACHE: dict = {}


def radial_bin_map(h: int, w: int, n_bins: int) -> np.ndarray:
    """Integer map assigning each DFT coefficient to a radial frequency bin.

    Radii use wrapped (signed) integer frequencies; bins partition [0, r_max]
    into n_bins contiguous equal-width intervals, the last one closed.
    """
    key = (h, w, n_bins)
    cached = _BIN_CACHE.get(key)
    if cached is not None:
        return cached
    fu = np.fft.fftfreq(h, d=1.0 / h)  # signed integer frequencies
    fv = np.fft.fftfreq(w, d=1.0 / w)
    r = np.hypot(fu[:, None], fv[None, :])
    r_max = np.hypot(h // 2, w // 2)
    bins = np.minimum((r / r_max * n_bins).astype(np.int64), n_bins - 1)
    _BIN_CACHE[key] = bins
    return bins


@dataclass
class FmmParams:
    """Learnable parameters: lowpass taps + one logit block per gate."""

    lowpass: np.ndarray  # (s, s), s odd
    mask_mode: str  # per_frequency | radial_bins
    spectral_logits: np.ndarray  # (H, W) or (n_bins,)
    spatial_mode: str  # per_pixel | gap_affine
    spatial_logits: np.ndarray  # (H, W) or (2,) = [a, b]

    def copy(self) -> "FmmParams":
        return FmmParams(
            self.lowpass.copy(),
            self.mask_mode,
            self.spectral_logits.copy(),
            self.spatial_mode,
            self.spatial_logits.copy(),
        )


@dataclass
class FmmGrads:
    """Gradients matching FmmParams block shapes."""

    lowpass: np.ndarray
    spectral_logits: np.ndarray
    spatial_logits: np.ndarray

    def scaled_add(self, other: "FmmGrads", scale: float = 1.0) -> None:
        self.lowpass += scale * other.lowpass
        self.spectral_logits += scale * other.spectral_logits
        self.spatial_logits += scale * other.spatial_logits


@dataclass
class FmmActivations:
    """Forward-pass record consumed by fmm_backward."""

    x_f: np.ndarray
    x_l: np.ndarray
    x_h: np.ndarray
    u_l: np.ndarray  # fft2(x_l)
    spectral_mask: np.ndarray  # materialized (H, W) real mask
    x_l_refined: np.ndarray
    spatial_mask: np.ndarray | float  # (H, W) mask or scalar gate value
    gap_mean: float | None  # mean(|x_h|) in gap_affine mode
    x_h_refined: np.ndarray
    y_hat: np.ndarray


def default_params(
    height: int,
    width: int,
    *,
    mask_mode: str = MASK_PER_FREQUENCY,
    spatial_mode: str = SPATIAL_PER_PIXEL,
    kernel_size: int = 5,
    kernel_sigma: float = 1.0,
    n_bins: int = 8,
) -> FmmParams:
    """Fresh parameters: Gaussian lowpass init, all logits zero (masks 0.5)."""
    if mask_mode not in MASK_MODES:
        raise ConfigError(f"unknown mask_mode {mask_mode!r}")
    if spatial_mode not in SPATIAL_MODES:
        raise ConfigError(f"unknown spatial_mode {spatial_mode!r}")
    lowpass = gaussian_kernel(kernel_size, kernel_sigma)
    if mask_mode == MASK_PER_FREQUENCY:
        spectral = np.zeros((height, width))
    else:
        if n_bins < 2:
            raise ConfigError(f"radial_bins needs n_bins >= 2, got {n_bins}")
        spectral = np.zeros(n_bins)
    if spatial_mode == SPATIAL_PER_PIXEL:
        spatial = np.zeros((height, width))
    else:
        spatial = np.zeros(2)
    return FmmParams(lowpass, mask_mode, spectral, spatial_mode, spatial)


def validate_params(p: FmmParams, h: int, w: int) -> None:
    as_kernel(p.lowpass)
    if p.mask_mode == MASK_PER_FREQUENCY:
        if p.spectral_logits.shape != (h, w):
            raise DimensionError(
                f"per_frequency logits shape {p.spectral_logits.shape} != grid {(h, w)}"
            )
    elif p.mask_mode == MASK_RADIAL_BINS:
        if p.spectral_logits.ndim != 1 or p.spectral_logits.shape[0] < 2:
            raise DimensionError(
                f"radial_bins logits must be a vector of >= 2 bins, got {p.spectral_logits.shape}"
            )
    else:
        raise ConfigError(f"unknown mask_mode {p.mask_mode!r}")
    if p.spatial_mode == SPATIAL_PER_PIXEL:
        if p.spatial_logits.shape != (h, w):
            raise DimensionError(
                f"per_pixel logits shape {p.spatial_logits.shape} != grid {(h, w)}"
            )
    elif p.spatial_mode == SPATIAL_GAP_AFFINE:
        if p.spatial_logits.shape != (2,):
            raise DimensionError(
                f"gap_affine logits must be shape (2,), got {p.spatial_logits.shape}"
            )
    else:
        raise ConfigError(f"unknown spatial_mode {p.spatial_mode!r}")


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------


def spectral_mask(p: FmmParams, h: int, w: int) -> np.ndarray:
    """Materialize the (H, W) real spectral mask in (0, 1).

    per_frequency logits are symmetrized (averaged with the Hermitian mirror)
    before the sigmoid, so the mask commutes with conjugate symmetry and the
    gated spectrum stays Hermitian. radial_bins masks are symmetric already.
    """
    if p.mask_mode == MASK_PER_FREQUENCY:
        sym = 0.5 * (p.spectral_logits + hermitian_flip(p.spectral_logits))
        return sigmoid(sym)
    bins = radial_bin_map(h, w, p.spectral_logits.shape[0])
    return sigmoid(p.spectral_logits)[bins]


def spectral_mask_grad_to_logits(
    p: FmmParams, h: int, w: int, mask: np.ndarray, g_mask: np.ndarray
) -> np.ndarray:
    """Chain dL/dmask back to the logit block (adjoint of the materialization)."""
    dsig = mask * (1.0 - mask)
    if p.mask_mode == MASK_PER_FREQUENCY:
        t = g_mask * dsig
        # symmetrization S = (I + flip)/2 is self-adjoint
        return 0.5 * (t + hermitian_flip(t))
    bins = radial_bin_map(h, w, p.spectral_logits.shape[0])
    return np.bincount(
        bins.ravel(), weights=(g_mask * dsig).ravel(), minlength=p.spectral_logits.shape[0]
    )


def band_split(x, p: FmmParams):
    """Split into (low, high) = (K * x, x - K * x); low + high == x exactly."""
    x = as_grid(x)
    low = conv2_periodic(x, p.lowpass)
    return low, x - low


def apply_spectral_mask(low, mask: np.ndarray):
    """Gate a grid in the frequency domain with an explicit real mask.

    Returns (refined, spectrum_of_low). Linear in the mask by construction.
    """
    low = as_grid(low)
    if mask.shape != low.shape:
        raise DimensionError(f"mask shape {mask.shape} != grid {low.shape}")
    u = fft2(low)
    return ifft2(mask * u), u


def spectral_gate(low, p: FmmParams):
    """Materialize the spectral mask for p and gate `low`; returns (refined, u_l, mask)."""
    low = as_grid(low)
    mask = spectral_mask(p, *low.shape)
    refined, u = apply_spectral_mask(low, mask)
    return refined, u, mask


def spatial_gate(high, p: FmmParams):
    """Gate the high band in the spatial domain (no FFT on this branch).

    Returns (refined, mask_or_scalar, gap_mean) where gap_mean is None in
    per_pixel mode.
    """
    high = as_grid(high)
    if p.spatial_mode == SPATIAL_PER_PIXEL:
        if p.spatial_logits.shape != high.shape:
            raise DimensionError(
                f"per_pixel logits shape {p.spatial_logits.shape} != grid {high.shape}"
            )
        m = sigmoid(p.spatial_logits)
        return m * high, m, None
    a, b = p.spatial_logits
    g = float(np.mean(np.abs(high)))
    m = float(sigmoid(np.asarray(a * g + b)))
    return m * high, m, g


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def fmm_forward(x, p: FmmParams) -> FmmActivations:
    """Run the operator, recording every intermediate needed by the backward pass."""
    x = as_grid(x)
    validate_params(p, *x.shape)
    x_l, x_h = band_split(x, p)
    x_l_ref, u_l, smask = spectral_gate(x_l, p)
    x_h_ref, pmask, gap_mean = spatial_gate(x_h, p)
    y = x_l_ref + x_h_ref
    return FmmActivations(
        x_f=x,
        x_l=x_l,
        x_h=x_h,
        u_l=u_l,
        spectral_mask=smask,
        x_l_refined=x_l_ref,
        spatial_mask=pmask,
        gap_mean=gap_mean,
        x_h_refined=x_h_ref,
        y_hat=y,
    )


def fmm_backward(acts: FmmActivations, p: FmmParams, grad_out) -> FmmGrads:
    """Exact dL/d(params) given dL/dy via hand-derived adjoints.

    Spectral path:  dL/dmask(xi) = Re[conj(fft2(grad_out))(xi) * u_l(xi)],
    then through the sigmoid/symmetrization (or bin pooling) to the logits.
    Spatial path:   per_pixel dL/dlogits = grad_out * x_h * m(1-m); gap_affine
    chains the scalar gate through its GAP statistic.
    Kernel path:    dL/dK accumulates the spectral-branch adjoint minus the
    high-branch feedback (x_h = x - K*x), correlated against rolled copies of
    the input — both couplings are mandatory.
    """
    gy = as_grid(grad_out)
    if gy.shape != acts.y_hat.shape:
        raise DimensionError(f"grad_out shape {gy.shape} != output {acts.y_hat.shape}")
    h, w = gy.shape

    # --- spectral branch ---
    G = fft2(gy)
    g_mask = (np.conj(G) * acts.u_l).real
    g_spectral = spectral_mask_grad_to_logits(p, h, w, acts.spectral_mask, g_mask)
    g_xl = ifft2(acts.spectral_mask * G)

    # --- spatial branch ---
    if p.spatial_mode == SPATIAL_PER_PIXEL:
        m = acts.spatial_mask
        g_spatial = gy * acts.x_h * m * (1.0 - m)
        g_xh = gy * m
    else:
        a = float(p.spatial_logits[0])
        m = float(acts.spatial_mask)
        gmean = float(acts.gap_mean)
        s = float(np.sum(gy * acts.x_h))
        dt = s * m * (1.0 - m)  # dL/d(pre-sigmoid scalar)
        g_spatial = np.array([dt * gmean, dt])
        n = acts.x_h.size
        g_xh = m * gy + (dt * a / n) * np.sign(acts.x_h)

    # --- band split / kernel ---
    g_xl_total = g_xl - g_xh  # x_h = x - x_l feeds back negatively
    size = p.lowpass.shape[0]
    c = size // 2
    g_taps = np.empty_like(p.lowpass)
    for ai in range(size):
        for bi in range(size):
            g_taps[ai, bi] = np.sum(
                g_xl_total * np.roll(acts.x_f, (ai - c, bi - c), axis=(0, 1))
            )
    return FmmGrads(g_taps, g_spectral, g_spatial)


def zero_grads(p: FmmParams) -> FmmGrads:
    return FmmGrads(
        np.zeros_like(p.lowpass),
        np.zeros_like(p.spectral_logits),
        np.zeros_like(p.spatial_logits),
    )


def apply_update(p: FmmParams, g: FmmGrads, lr: float, *, freeze=()) -> FmmParams:
    """Plain gradient-descent step; `freeze` names parameter blocks to skip."""
    q = p.copy()
    if "lowpass" not in freeze:
        q.lowpass -= lr * g.lowpass
    if "spectral" not in freeze:
        q.spectral_logits -= lr * g.spectral_logits
    if "spatial" not in freeze:
        q.spatial_logits -= lr * g.spatial_logits
    return q


# ---------------------------------------------------------------------------
# FMMP serialization: versioned ASCII header + little-endian float64 blocks
# in declaration order (lowpass, spectral, spatial). Bit-exact round trip.
# ---------------------------------------------------------------------------

FMMP_VERSION = 1


def params_to_bytes(p: FmmParams) -> bytes:
    as_kernel(p.lowpass)
    if p.mask_mode not in MASK_MODES:
        raise ConfigError(f"unknown mask_mode {p.mask_mode!r}")
    if p.spatial_mode not in SPATIAL_MODES:
        raise ConfigError(f"unknown spatial_mode {p.spatial_mode!r}")
    buf = io.BytesIO()
    spec_shape = " ".join(str(d) for d in p.spectral_logits.shape)
    spat_shape = " ".join(str(d) for d in p.spatial_logits.shape)
    header = (
        f"FMMP {FMMP_VERSION}\n"
        f"mask_mode {p.mask_mode}\n"
        f"spatial_mode {p.spatial_mode}\n"
        f"kernel {p.lowpass.shape[0]}\n"
        f"spectral {spec_shape}\n"
        f"spatial {spat_shape}\n"
        f"DATA\n"
    )
    buf.write(header.encode("ascii"))
    for block in (p.lowpass, p.spectral_logits, p.spatial_logits):
        buf.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    return buf.getvalue()


def params_from_bytes(data: bytes) -> FmmParams:
    head, sep, _ = data.partition(b"DATA\n")
    if not sep:
        raise NumericIntegrityError("FMMP payload missing DATA marker")
    lines = head.decode("ascii").splitlines()
    fields = {}
    if not lines or not lines[0].startswith("FMMP "):
        raise NumericIntegrityError("not an FMMP payload")
    version = int(lines[0].split()[1])
    if version != FMMP_VERSION:
        raise NumericIntegrityError(f"unsupported FMMP version {version}")
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest
    try:
        mask_mode = fields["mask_mode"]
        spatial_mode = fields["spatial_mode"]
        ksize = int(fields["kernel"])
        spec_shape = tuple(int(v) for v in fields["spectral"].split())
        spat_shape = tuple(int(v) for v in fields["spatial"].split())
    except (KeyError, ValueError) as exc:
        raise NumericIntegrityError(f"malformed FMMP header: {exc}") from exc
    if mask_mode not in MASK_MODES or spatial_mode not in SPATIAL_MODES:
        raise NumericIntegrityError(
            f"FMMP header names unknown modes {mask_mode!r}/{spatial_mode!r}"
        )
    payload = data[len(head) + len(b"DATA\n"):]
    counts = [ksize * ksize, int(np.prod(spec_shape)), int(np.prod(spat_shape))]
    if len(payload) != 8 * sum(counts):
        raise NumericIntegrityError(
            f"FMMP payload is {len(payload)} bytes, expected {8 * sum(counts)}"
        )
    blocks = []
    off = 0
    for count, shape in zip(counts, [(ksize, ksize), spec_shape, spat_shape]):
        blocks.append(
            np.frombuffer(payload, dtype="<f8", count=count, offset=off)
            .reshape(shape)
            .astype(np.float64)
        )
        off += count * 8
    return FmmParams(blocks[0], mask_mode, blocks[1], spatial_mode, blocks[2])


def save_params(path, p: FmmParams) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(p))


def load_params(path) -> FmmParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
