"""Real 2D grid substrate: unitary FFTs, periodic (circular) convolution, kernels, IO.

Conventions used throughout the package:

* grids are 2D float64 arrays, row-major, values usually in [0, 1];
* the DFT is unitary (`norm="ortho"`), so Parseval holds with no extra factor
  and white noise keeps its variance across the transform;
* convolution is circular (periodic boundary), so the convolution theorem is
  exact: ``fft2(conv2_periodic(x, k)) == transfer(k, h, w) * fft2(x)`` up to
  float rounding, where `transfer` is the *unnormalized* DFT of the kernel
  zero-padded and circularly centered onto the grid.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericIntegrityError

# Relative imaginary residue tolerated when an inverse FFT is expected to be real.
IFFT_IMAG_TOL = 1e-6


def as_grid(x) -> np.ndarray:
    """Validate and coerce to a 2D float64 grid."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"grid must be 2D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"grid must be non-empty, got shape {a.shape}")
    return a


def fft2(x) -> np.ndarray:
    """Unitary forward DFT of a real grid -> complex spectrum (Hermitian)."""
    return np.fft.fft2(as_grid(x), norm="ortho")


def ifft2(u, tol: float = IFFT_IMAG_TOL) -> np.ndarray:
    """Unitary inverse DFT expected to land on a real grid.

    The imaginary residue must stay below `tol` relative to the real norm
    (Hermitian input guarantees this up to rounding); it is then discarded.
    """
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] < 1 or u.shape[1] < 1:
        raise DimensionError(f"spectrum must be a non-empty 2D array, got {u.shape}")
    z = np.fft.ifft2(u, norm="ortho")
    re = np.linalg.norm(z.real)
    im = np.linalg.norm(z.imag)
    if im > tol * max(re, 1e-30):
        raise NumericIntegrityError(
            f"inverse FFT imaginary residue {im:.3e} exceeds {tol:.1e} x real norm {re:.3e}; "
            "input spectrum is not Hermitian-symmetric"
        )
    return np.ascontiguousarray(z.real)


def as_kernel(k) -> np.ndarray:
    """Validate a square odd-sized 2D tap array."""
    a = np.asarray(k, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"kernel must be square 2D, got shape {a.shape}")
    if a.shape[0] % 2 != 1:
        raise DimensionError(f"kernel size must be odd, got {a.shape[0]}")
    return a


def _check_kernel_fits(k: np.ndarray, h: int, w: int) -> None:
    if k.shape[0] > min(h, w):
        raise DimensionError(
            f"kernel size {k.shape[0]} exceeds grid min dimension {min(h, w)}"
        )


def conv2_periodic(x, k) -> np.ndarray:
    """Circular 2D convolution with the kernel's center tap aligned to the origin.

    y[i, j] = sum_{a,b} k[a, b] * x[(i - (a - c)) % H, (j - (b - c)) % W],  c = size // 2

    Implemented as a tap-by-tap rolled accumulation so the result matches a
    brute-force double loop bit-for-bit (same accumulation order).
    """
    x = as_grid(x)
    k = as_kernel(k)
    _check_kernel_fits(k, *x.shape)
    c = k.shape[0] // 2
    out = np.zeros_like(x)
    for a in range(k.shape[0]):
        for b in range(k.shape[1]):
            out += k[a, b] * np.roll(x, (a - c, b - c), axis=(0, 1))
    return out


def corr2_periodic(x, k) -> np.ndarray:
    """Circular 2D correlation: the adjoint of conv2_periodic in <.,.>.

    Equal to convolution with the doubly-flipped kernel, hence
    <conv2_periodic(x, k), y> == <x, corr2_periodic(y, k)> exactly (up to fp).
    """
    k = as_kernel(k)
    return conv2_periodic(x, k[::-1, ::-1].copy())


def transfer(k, h: int, w: int) -> np.ndarray:
    """Transfer function of a kernel on an h x w periodic grid.

    Zero-pads the taps, circularly centers them at the origin, and takes the
    *unnormalized* DFT, which makes the convolution theorem hold exactly under
    the package's unitary FFT convention:

        fft2(conv2_periodic(x, k)) == transfer(k, h, w) * fft2(x)

    Identity kernel -> all-ones transfer; any normalized blur -> DC term 1.
    """
    k = as_kernel(k)
    if h < 1 or w < 1:
        raise DimensionError(f"target grid must be non-empty, got {(h, w)}")
    _check_kernel_fits(k, h, w)
    c = k.shape[0] // 2
    pad = np.zeros((h, w))
    pad[: k.shape[0], : k.shape[1]] = k
    pad = np.roll(pad, (-c, -c), axis=(0, 1))
    return np.fft.fft2(pad)


def identity_kernel(size: int = 1) -> np.ndarray:
    """Odd-sized kernel with a single unit center tap."""
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return as_kernel(k)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized isotropic Gaussian taps on an odd size x size support."""
    if sigma <= 0:
        raise DimensionError(f"gaussian sigma must be positive, got {sigma}")
    c = size // 2
    ax = np.arange(size, dtype=np.float64) - c
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return as_kernel(g / g.sum())


# ---------------------------------------------------------------------------
# FGRID container: "FGRID <height> <width>\n" + row-major little-endian float64
# ---------------------------------------------------------------------------

FGRID_MAGIC = b"FGRID"


def write_fgrid(path, x) -> None:
    x = as_grid(x)
    with open(path, "wb") as fh:
        fh.write(b"FGRID %d %d\n" % x.shape)
        fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_fgrid(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 3 or parts[0] != FGRID_MAGIC:
            raise NumericIntegrityError(f"{path}: malformed FGRID header {header!r}")
        try:
            h, w = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise NumericIntegrityError(f"{path}: bad FGRID dimensions {header!r}") from exc
        if h < 1 or w < 1:
            raise DimensionError(f"{path}: FGRID dimensions must be positive, got {h}x{w}")
        payload = fh.read()
    expect = h * w * 8
    if len(payload) != expect:
        raise NumericIntegrityError(
            f"{path}: FGRID payload is {len(payload)} bytes, expected {expect}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(h, w).astype(np.float64)
