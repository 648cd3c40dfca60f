import math

import numpy as np
import pytest

from evorestore.degrade import (
    DegradationSpec,
    MANIFEST_HEADER,
    PSNR_CAP_DB,
    SplitConfig,
    apply_degradation,
    build_dataset,
    capped_psnr,
    load_dataset,
    psnr,
    read_image,
    read_pgm,
    ssim,
    synthetic_clean_images,
    write_dataset,
    write_pgm,
)
from evorestore.errors import ConfigError, DimensionError, NumericIntegrityError


def flat(v=0.5, n=32):
    return np.full((n, n), v)


def test_noise_statistics_and_determinism():
    spec = DegradationSpec.noise(sigma=0.1, seed=3)
    out1 = apply_degradation(flat(n=64), spec)
    out2 = apply_degradation(flat(n=64), spec)
    assert np.array_equal(out1, out2)
    resid = out1 - 0.5
    assert abs(resid.std() - 0.1) < 0.01
    assert out1.min() >= 0.0 and out1.max() <= 1.0
    out3 = apply_degradation(flat(n=64), DegradationSpec.noise(sigma=0.1, seed=4))
    assert not np.array_equal(out1, out3)


def test_blur_preserves_constants_and_mean():
    spec = DegradationSpec.blur(kernel_sigma=1.5, seed=0)
    assert np.max(np.abs(apply_degradation(flat(0.3), spec) - 0.3)) < 1e-12
    rng = np.random.default_rng(5)
    img = rng.uniform(0.1, 0.9, (24, 24))
    out = apply_degradation(img, spec)
    # periodic convolution with a unit-sum kernel keeps the mean
    assert abs(out.mean() - img.mean()) < 1e-12
    assert out.std() < img.std()


def test_haze_formula():
    spec = DegradationSpec.haze(t0=1.0, airlight=0.9, seed=0)
    img = np.random.default_rng(0).uniform(0, 1, (16, 16))
    assert np.max(np.abs(apply_degradation(img, spec) - img)) < 1e-12
    spec = DegradationSpec.haze(t0=0.4, airlight=1.0, seed=0)
    out = apply_degradation(flat(0.5, 16), spec)
    assert np.max(np.abs(out - 0.8)) < 1e-12  # 0.4*0.5 + 0.6*1.0


def test_lowlight_formula():
    spec = DegradationSpec.lowlight(gamma=2.2, scale=0.5, seed=0)
    assert np.max(np.abs(apply_degradation(np.ones((8, 8)), spec) - 0.5)) < 1e-12
    spec = DegradationSpec.lowlight(gamma=2.0, scale=0.8, seed=0)
    assert np.max(np.abs(apply_degradation(flat(0.25, 8), spec) - 0.05)) < 1e-12


def test_rain_adds_deterministic_streaks():
    spec = DegradationSpec.rain(count=12, angle_deg=70.0, intensity=0.3, seed=8)
    img = flat(0.2, 48)
    out1 = apply_degradation(img, spec)
    out2 = apply_degradation(img, spec)
    assert np.array_equal(out1, out2)
    assert out1.mean() > img.mean()  # streaks only brighten
    assert np.min(out1 - img) >= 0.0
    assert out1.max() <= 1.0


def test_degradation_rejects_out_of_range_input():
    with pytest.raises(NumericIntegrityError):
        apply_degradation(flat(1.5), DegradationSpec.noise(sigma=0.1))


def test_spec_validation():
    with pytest.raises(ConfigError):
        DegradationSpec.noise(sigma=-0.1).validate()
    with pytest.raises(ConfigError):
        DegradationSpec.haze(t0=1.4, airlight=0.9).validate()
    with pytest.raises(ConfigError):
        DegradationSpec.rain(count=0, angle_deg=70, intensity=0.3).validate()
    with pytest.raises(ConfigError):
        DegradationSpec("fog", seed=0).validate()


def test_psnr_reference_points():
    assert abs(psnr(flat(0.5), flat(0.6)) - 20.0) < 1e-12
    assert psnr(flat(0.5), flat(0.5)) == math.inf
    assert capped_psnr(flat(0.5), flat(0.5)) == PSNR_CAP_DB
    with pytest.raises(DimensionError):
        psnr(flat(0.5, 8), flat(0.5, 9))


def test_psnr_monotone_in_noise_level():
    rng = np.random.default_rng(1)
    img = rng.uniform(0.2, 0.8, (32, 32))
    values = []
    for sigma in (0.02, 0.05, 0.1, 0.2):
        out = apply_degradation(img, DegradationSpec.noise(sigma=sigma, seed=2))
        values.append(psnr(out, img))
    assert values == sorted(values, reverse=True)


def test_ssim_wrapper():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, (32, 32))
    assert abs(ssim(img, img) - 1.0) < 1e-12
    noisy = apply_degradation(img, DegradationSpec.noise(sigma=0.1, seed=1))
    assert abs(ssim(img, noisy) - ssim(noisy, img)) < 1e-12
    assert ssim(img, noisy) < 1.0


def test_synthetic_clean_images():
    imgs = synthetic_clean_images(6, 40, 32, seed=11)
    assert len(imgs) == 6
    for img in imgs:
        assert img.shape == (40, 32)
        assert img.min() >= 0.05 - 1e-12 and img.max() <= 0.95 + 1e-12
    again = synthetic_clean_images(6, 40, 32, seed=11)
    assert all(np.array_equal(a, b) for a, b in zip(imgs, again))
    assert not np.array_equal(imgs[0], imgs[1])


def make_dataset(n_images=10, seed=9):
    images = synthetic_clean_images(n_images, 24, 24, seed=1)
    specs = (
        DegradationSpec.noise(sigma=0.1, seed=50),
        DegradationSpec.blur(kernel_sigma=1.0, seed=60),
    )
    return build_dataset(images, specs, SplitConfig(0.2, 0.0, seed))


def test_dataset_counts_and_stratification():
    ds = make_dataset()
    assert len(ds.pairs) == 20
    assert len(ds.val_idx) == 4 and len(ds.train_idx) == 16
    # stratified: two validation pairs from each degradation kind
    val_kinds = [ds.pairs[i].kind for i in ds.val_idx]
    assert val_kinds.count("noise") == 2 and val_kinds.count("blur") == 2
    # deterministic split
    ds2 = make_dataset()
    assert ds.val_idx == ds2.val_idx and ds.train_idx == ds2.train_idx
    ds3 = make_dataset(seed=10)
    assert ds.val_idx != ds3.val_idx


def test_dataset_per_pair_seeds_differ():
    ds = make_dataset()
    noise_seeds = {p.seed for p in ds.pairs if p.kind == "noise"}
    assert len(noise_seeds) == 10  # one distinct stream per source image
    first = ds.pairs[0]
    assert not np.array_equal(first.clean, first.degraded)


def test_dataset_write_load_round_trip(tmp_path):
    ds = make_dataset()
    manifest = write_dataset(tmp_path, ds)
    header = open(manifest).readline().strip()
    assert header == ",".join(MANIFEST_HEADER)
    back = load_dataset(manifest, SplitConfig(0.2, 0.0, 9))
    assert len(back.pairs) == len(ds.pairs)
    assert back.val_idx == ds.val_idx
    for a, b in zip(ds.pairs, back.pairs):
        assert a.kind == b.kind and a.seed == b.seed
        assert np.array_equal(a.clean, b.clean)
        assert np.array_equal(a.degraded, b.degraded)


def test_pgm_round_trips(tmp_path):
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, (9, 7))
    p8 = tmp_path / "a.pgm"
    write_pgm(p8, img, maxval=255)
    assert np.max(np.abs(read_pgm(p8) - img)) <= 0.5 / 255 + 1e-12
    p16 = tmp_path / "b.pgm"
    write_pgm(p16, img, maxval=65535)
    assert np.max(np.abs(read_pgm(p16) - img)) <= 0.5 / 65535 + 1e-12


def test_pgm_comment_and_whitespace_handling(tmp_path):
    raw = b"P5\n# a comment line\n3 2\n255\n" + bytes([0, 128, 255, 10, 20, 30])
    path = tmp_path / "c.pgm"
    path.write_bytes(raw)
    img = read_pgm(path)
    assert img.shape == (2, 3)
    assert abs(img[0, 1] - 128 / 255) < 1e-12


def test_read_image_dispatch(tmp_path):
    img = np.random.default_rng(4).uniform(0, 1, (6, 6))
    from evorestore.grids import write_fgrid

    fg = tmp_path / "x.fgrid"
    write_fgrid(fg, img)
    assert np.array_equal(read_image(fg), img)
    # non-.pgm paths go through the FGRID reader, whose magic check rejects junk
    junk = tmp_path / "x.png"
    junk.write_bytes(b"\x89PNG\r\n\x1a\nnot really")
    with pytest.raises(NumericIntegrityError):
        read_image(junk)


def test_split_config_validation():
    with pytest.raises(ConfigError):
        SplitConfig(0.7, 0.5, 0).validate()
    with pytest.raises(ConfigError):
        SplitConfig(-0.1, 0.0, 0).validate()
