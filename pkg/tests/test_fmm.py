"""Forward/backward behavior of the frequency-gated restoration operator."""

import numpy as np
import pytest

from evorestore import fmm
from evorestore.errors import ConfigError, DimensionError, NumericIntegrityError
from evorestore.grids import fft2, gaussian_kernel, identity_kernel, transfer


def rand_image(rng, h=12, w=12):
    return rng.uniform(0.1, 0.9, size=(h, w))


def test_band_split_sums_to_input():
    rng = np.random.default_rng(0)
    p = fmm.default_params(12, 12)
    for _ in range(10):
        x = rand_image(rng)
        low, high = fmm.band_split(x, p)
        assert np.max(np.abs(low + high - x)) < 1e-12


def test_band_split_spectral_identity():
    # the low band computed by spatial convolution must agree with the
    # transfer-function route in the frequency domain
    rng = np.random.default_rng(1)
    p = fmm.default_params(16, 16, kernel_size=5, kernel_sigma=1.3)
    x = rand_image(rng, 16, 16)
    low, _ = fmm.band_split(x, p)
    g = transfer(p.lowpass, 16, 16)
    assert np.max(np.abs(fft2(low) - g * fft2(x))) < 1e-9


def test_saturated_gates_give_identity_model():
    # 1x1 identity kernel puts everything in the low band; a saturated
    # spectral gate passes it through untouched
    rng = np.random.default_rng(2)
    x = rand_image(rng)
    p = fmm.FmmParams(
        lowpass=identity_kernel(1),
        mask_mode=fmm.MASK_PER_FREQUENCY,
        spectral_logits=np.full((12, 12), 500.0),
        spatial_mode=fmm.SPATIAL_GAP_AFFINE,
        spatial_logits=np.zeros(2),
    )
    acts = fmm.fmm_forward(x, p)
    assert np.max(np.abs(acts.y_hat - x)) < 1e-12
    assert np.max(np.abs(acts.x_h)) == 0.0


def test_spectral_gate_saturation():
    rng = np.random.default_rng(3)
    x = rand_image(rng)
    p = fmm.default_params(12, 12)
    p.spectral_logits[:] = -500.0
    mask = fmm.spectral_mask(p, 12, 12)
    assert np.max(mask) < 1e-100
    p.spectral_logits[:] = 500.0
    assert np.min(fmm.spectral_mask(p, 12, 12)) > 1.0 - 1e-12


def test_per_frequency_mask_is_hermitian_symmetric():
    rng = np.random.default_rng(4)
    p = fmm.default_params(10, 14)
    p.spectral_logits[:] = rng.normal(size=(10, 14))
    mask = fmm.spectral_mask(p, 10, 14)
    assert np.max(np.abs(mask - fmm.hermitian_flip(mask))) == 0.0


def test_gaussian_lowpass_full_reconstruction():
    # with both gates wide open the operator reduces to x_l + x_h = x
    rng = np.random.default_rng(5)
    x = rand_image(rng, 16, 16)
    p = fmm.FmmParams(
        lowpass=gaussian_kernel(5, 1.0),
        mask_mode=fmm.MASK_PER_FREQUENCY,
        spectral_logits=np.full((16, 16), 500.0),
        spatial_mode=fmm.SPATIAL_PER_PIXEL,
        spatial_logits=np.full((16, 16), 500.0),
    )
    acts = fmm.fmm_forward(x, p)
    assert np.max(np.abs(acts.y_hat - x)) < 1e-9


def test_radial_bins_select_frequency_bands():
    h = w = 16
    p = fmm.default_params(h, w, mask_mode=fmm.MASK_RADIAL_BINS, n_bins=2)
    # open the low bin, close the high bin
    p.spectral_logits[:] = (500.0, -500.0)
    # a pure low-frequency cosine lives in bin 0 and must pass
    i = np.arange(h)[:, None]
    lowfreq = np.cos(2 * np.pi * i / h) * np.ones((1, w))
    refined, _, _ = fmm.spectral_gate(lowfreq, p)
    assert np.max(np.abs(refined - lowfreq)) < 1e-9
    # Nyquist checkerboard lives in the top bin and must vanish
    checker = np.cos(np.pi * (np.arange(h)[:, None] + np.arange(w)[None, :]))
    refined, _, _ = fmm.spectral_gate(checker, p)
    assert np.max(np.abs(refined)) < 1e-9


def test_radial_bin_map_layout():
    bins = fmm.radial_bin_map(16, 16, 4)
    assert bins.shape == (16, 16)
    assert bins[0, 0] == 0
    assert bins[8, 8] == 3  # wrapped Nyquist corner has the largest radius
    assert bins.min() == 0 and bins.max() == 3


def test_gap_affine_neutral_setting_halves_high_band():
    rng = np.random.default_rng(6)
    x = rand_image(rng)
    p = fmm.default_params(12, 12, spatial_mode=fmm.SPATIAL_GAP_AFFINE)
    acts = fmm.fmm_forward(x, p)
    # a = b = 0 -> sigmoid(0) = 0.5 regardless of the pooled magnitude
    assert abs(acts.spatial_mask - 0.5) < 1e-15
    assert np.max(np.abs(acts.x_h_refined - 0.5 * acts.x_h)) < 1e-15


def test_apply_spectral_mask_linear_in_mask():
    rng = np.random.default_rng(7)
    low = rng.normal(size=(8, 8))
    # masks must share the spectrum's conjugate symmetry or ifft2 refuses
    m1 = rng.uniform(0, 1, (8, 8))
    m1 = 0.5 * (m1 + fmm.hermitian_flip(m1))
    m2 = rng.uniform(0, 1, (8, 8))
    m2 = 0.5 * (m2 + fmm.hermitian_flip(m2))
    r1, _ = fmm.apply_spectral_mask(low, m1)
    r2, _ = fmm.apply_spectral_mask(low, m2)
    r12, _ = fmm.apply_spectral_mask(low, 0.3 * m1 + 0.7 * m2)
    assert np.max(np.abs(r12 - (0.3 * r1 + 0.7 * r2))) < 1e-12


def fd_loss(x, p, target):
    acts = fmm.fmm_forward(x, p)
    return 0.5 * float(np.sum((acts.y_hat - target) ** 2))


@pytest.mark.parametrize(
    "mask_mode,spatial_mode",
    [
        (fmm.MASK_PER_FREQUENCY, fmm.SPATIAL_PER_PIXEL),
        (fmm.MASK_RADIAL_BINS, fmm.SPATIAL_GAP_AFFINE),
    ],
)
def test_backward_matches_finite_differences(mask_mode, spatial_mode):
    rng = np.random.default_rng(8)
    h = w = 8
    x = rand_image(rng, h, w)
    target = rand_image(rng, h, w)
    p = fmm.default_params(h, w, mask_mode=mask_mode, spatial_mode=spatial_mode, n_bins=3)
    p.lowpass = p.lowpass + 0.01 * rng.normal(size=p.lowpass.shape)
    p.spectral_logits = rng.normal(0, 0.5, p.spectral_logits.shape)
    p.spatial_logits = rng.normal(0, 0.5, p.spatial_logits.shape)

    acts = fmm.fmm_forward(x, p)
    grads = fmm.fmm_backward(acts, p, acts.y_hat - target)

    step = 1e-6
    for arr, g in (
        (p.lowpass, grads.lowpass),
        (p.spectral_logits, grads.spectral_logits),
        (p.spatial_logits, grads.spatial_logits),
    ):
        flat = arr.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + step
            up = fd_loss(x, p, target)
            flat[idx] = keep - step
            dn = fd_loss(x, p, target)
            flat[idx] = keep
            fd = (up - dn) / (2 * step)
            assert abs(fd - gflat[idx]) < 1e-5 * max(1.0, abs(fd))


def test_apply_update_and_freeze():
    p = fmm.default_params(8, 8, spatial_mode=fmm.SPATIAL_GAP_AFFINE)
    g = fmm.zero_grads(p)
    g.lowpass[:] = 1.0
    g.spectral_logits[:] = 1.0
    g.spatial_logits[:] = 1.0
    before = p.lowpass.copy()
    q = fmm.apply_update(p, g, 0.5, freeze=("lowpass",))
    assert np.array_equal(q.lowpass, before)
    assert np.all(q.spectral_logits == -0.5)
    assert np.all(q.spatial_logits == -0.5)
    # the input is left untouched (the step is functional, not in-place)
    assert np.all(p.spectral_logits == 0.0)
    r = fmm.apply_update(p, g, 0.5)
    assert np.all(r.lowpass == before - 0.5)


def test_params_bytes_round_trip_exact():
    rng = np.random.default_rng(9)
    for mask_mode, spatial_mode in (
        (fmm.MASK_PER_FREQUENCY, fmm.SPATIAL_PER_PIXEL),
        (fmm.MASK_RADIAL_BINS, fmm.SPATIAL_GAP_AFFINE),
    ):
        p = fmm.default_params(6, 10, mask_mode=mask_mode, spatial_mode=spatial_mode, n_bins=4)
        p.lowpass = rng.normal(size=p.lowpass.shape)
        p.spectral_logits = rng.normal(size=p.spectral_logits.shape)
        p.spatial_logits = rng.normal(size=p.spatial_logits.shape)
        blob = fmm.params_to_bytes(p)
        q = fmm.params_from_bytes(blob)
        assert q.mask_mode == p.mask_mode and q.spatial_mode == p.spatial_mode
        assert np.array_equal(q.lowpass, p.lowpass)
        assert np.array_equal(q.spectral_logits, p.spectral_logits)
        assert np.array_equal(q.spatial_logits, p.spatial_logits)
        # serialization is canonical: same params -> same bytes
        assert fmm.params_to_bytes(q) == blob


def test_params_file_round_trip(tmp_path):
    p = fmm.default_params(8, 8)
    path = tmp_path / "model.fmmp"
    fmm.save_params(path, p)
    q = fmm.load_params(path)
    assert fmm.params_to_bytes(q) == fmm.params_to_bytes(p)


def test_params_from_bytes_rejects_malformed():
    p = fmm.default_params(6, 6)
    blob = fmm.params_to_bytes(p)
    with pytest.raises(NumericIntegrityError):
        fmm.params_from_bytes(b"JUNK" + blob[4:])
    with pytest.raises(NumericIntegrityError):
        fmm.params_from_bytes(blob[:-8])  # truncated payload
    with pytest.raises(NumericIntegrityError):
        fmm.params_from_bytes(blob.replace(b"FMMP 1", b"FMMP 9", 1))


def test_validate_params_rejects_shape_mismatch():
    p = fmm.default_params(8, 8)
    with pytest.raises(DimensionError):
        fmm.validate_params(p, 10, 10)
    with pytest.raises(ConfigError):
        fmm.default_params(8, 8, mask_mode="nope")
