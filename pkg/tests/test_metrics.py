import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.signal import convolve2d, correlate2d
from skimage.metrics import structural_similarity

from crossalign import metrics as M
from crossalign.errors import ValidationError

from conftest import coded, smooth_field


# ---------------------------------------------------------------- oracles


def oracle_entropy(image):
    codes = np.floor(image * 255 + 0.5).astype(int).ravel()
    return stats.entropy(np.bincount(codes, minlength=256), base=2)


def oracle_mi(a, b):
    ca = np.floor(a * 255 + 0.5).ravel()
    cb = np.floor(b * 255 + 0.5).ravel()
    joint, _, _ = np.histogram2d(ca, cb, bins=256, range=[[-0.5, 255.5], [-0.5, 255.5]])
    h = lambda counts: stats.entropy(counts.ravel(), base=2)
    return h(joint.sum(axis=1)) + h(joint.sum(axis=0)) - h(joint)


def _gauss2d(sigma, radius):
    x = np.arange(-radius, radius + 1)
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _same(image, kernel):
    r = kernel.shape[0] // 2
    return convolve2d(np.pad(image, r, mode="reflect"), kernel, mode="valid")


def oracle_vifp(ref, dist):
    """Straight transcription of pixel-domain VIF with 2-D kernels and numpy padding."""
    num = den = 0.0
    for scale in range(1, 5):
        sigma = (2 ** (5 - scale) + 1) / 5
        win = _gauss2d(sigma, math.ceil(3 * sigma))
        if scale > 1:
            ref = _same(ref, win)[::2, ::2]
            dist = _same(dist, win)[::2, ::2]
        mu1, mu2 = _same(ref, win), _same(dist, win)
        s1 = np.maximum(_same(ref * ref, win) - mu1 ** 2, 0)
        s2 = np.maximum(_same(dist * dist, win) - mu2 ** 2, 0)
        s12 = _same(ref * dist, win) - mu1 * mu2
        for i in np.ndindex(s1.shape):
            a, b, c = s1[i], s2[i], s12[i]
            g = c / (a + 1e-10)
            sv = b - g * c
            if a < 1e-10:
                g, sv, a = 0.0, b, 0.0
            if b < 1e-10:
                g, sv = 0.0, 0.0
            if g < 0:
                sv, g = b, 0.0
            sv = max(sv, 1e-10)
            num += math.log10(1 + g * g * a / (sv + 2.0))
            den += math.log10(1 + a / 2.0)
    return num / den if den > 0 else 0.0


def oracle_qabf(a, b, f):
    sx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=float)
    sy = sx.T

    def parts(img):
        p = np.pad(img * 255, 1, mode="reflect")
        gx = correlate2d(p, sx, mode="valid")
        gy = correlate2d(p, sy, mode="valid")
        g = np.sqrt(gx ** 2 + gy ** 2)
        alpha = np.empty_like(g)
        for i in np.ndindex(g.shape):
            alpha[i] = math.pi / 2 if gx[i] == 0 else math.atan(gy[i] / gx[i])
        return g, alpha

    def q(gs, as_, gf, af):
        out = np.empty_like(gs)
        for i in np.ndindex(gs.shape):
            hi, lo = max(gs[i], gf[i]), min(gs[i], gf[i])
            strength = lo / hi if hi > 0 else 1.0
            agree = 1 - abs(as_[i] - af[i]) / (math.pi / 2)
            out[i] = (0.9994 / (1 + math.exp(-15 * (strength - 0.5)))) * (0.9879 / (1 + math.exp(-22 * (agree - 0.8))))
        return out

    ga, aa = parts(a)
    gb, ab = parts(b)
    gf, af = parts(f)
    w = (ga + gb).sum()
    return float((q(ga, aa, gf, af) * ga + q(gb, ab, gf, af) * gb).sum() / w) if w else 0.0


def skimage_ssim(a, b):
    return structural_similarity(
        a * 255, b * 255, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=255
    )


def textures(rng, n=5, shape=(48, 56)):
    return [coded(smooth_field(rng, shape, sigma=2.0, lo=0.0, hi=1.0)) for _ in range(n)]


# ---------------------------------------------------------------- EN / MI


def test_entropy_examples(rng):
    assert M.entropy(np.full((7, 7), 0.4)) == 0.0
    ramp = (np.arange(256) / 255).reshape(16, 16)
    assert M.entropy(ramp) == pytest.approx(8.0, abs=1e-12)
    coin = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert M.entropy(coin) == pytest.approx(1.0, abs=1e-12)
    for image in textures(rng):
        assert M.entropy(image) == pytest.approx(oracle_entropy(image), abs=1e-10)


def test_mutual_information_matches_oracle(rng):
    images = textures(rng)
    for a, b in zip(images, images[1:]):
        assert M.mutual_information(a, b) == pytest.approx(oracle_mi(a, b), abs=1e-9)
        assert M.mutual_information(a, b) == pytest.approx(M.mutual_information(b, a), abs=1e-12)
        assert M.mutual_information(a, a) == pytest.approx(M.entropy(a), abs=1e-9)
    with pytest.raises(ValidationError):
        M.mutual_information(images[0], images[0][:10])


def test_mutual_information_of_independent_noise(rng):
    # plug-in estimator bias for independent uniform codes is about (K-1)^2 / (2 N ln 2)
    a = rng.integers(0, 256, (512, 512)) / 255
    b = rng.integers(0, 256, (512, 512)) / 255
    bias = 255 ** 2 / (2 * a.size * math.log(2))
    assert M.mutual_information(a, b) == pytest.approx(bias, rel=0.1)
    big_a = rng.integers(0, 256, (2048, 2048)) / 255
    big_b = rng.integers(0, 256, (2048, 2048)) / 255
    assert M.mutual_information(big_a, big_b) <= 0.05


def test_fusion_mi_identity(rng):
    x = textures(rng, 1)[0]
    triple = M.FusionTriple(x, x, x)
    assert M.fusion_mi(triple) == pytest.approx(2 * M.entropy(x), abs=1e-9)
    assert M.fusion_mi(triple, "mean") == pytest.approx(M.entropy(x), abs=1e-9)


# ---------------------------------------------------------------- SD / SF / AG


def test_std_dev():
    assert M.std_dev(np.full((4, 4), 0.2)) == 0.0
    half = np.zeros((4, 4))
    half[:2] = 1.0
    assert M.std_dev(half) == pytest.approx(127.5)


def test_spatial_frequency():
    assert M.spatial_frequency(np.full((5, 5), 0.7)) == 0.0
    stripes = np.tile([0.0, 1.0], (6, 4))
    assert M.spatial_frequency(stripes) == pytest.approx(255.0)
    assert M.spatial_frequency(stripes.T) == pytest.approx(255.0)
    with pytest.raises(ValidationError):
        M.spatial_frequency(np.zeros((1, 9)))


def test_average_gradient():
    assert M.average_gradient(np.full((5, 5), 0.1)) == 0.0
    ramp = np.tile(np.arange(20) / 255.0, (8, 1))
    assert M.average_gradient(ramp) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    with pytest.raises(ValidationError):
        M.average_gradient(np.zeros((1, 4)))


# ---------------------------------------------------------------- VIF


def test_vif_matches_naive_oracle(rng):
    a, b, f = textures(rng, 3, shape=(36, 40))
    triple = M.FusionTriple(a, b, f)
    expected = oracle_vifp(a * 255, f * 255) + oracle_vifp(b * 255, f * 255)
    assert M.vif(triple) == pytest.approx(expected, rel=1e-9)


def test_vif_self_fidelity(rng):
    for x in textures(rng):
        assert M.vif(M.FusionTriple(x, x, x)) == pytest.approx(2.0, abs=1e-6)


def test_vif_constant_fused(rng):
    a, b = textures(rng, 2)
    assert M.vif(M.FusionTriple(a, b, np.full_like(a, 0.5))) <= 0.05


def test_vif_too_small():
    with pytest.raises(ValidationError):
        M.vif(M.FusionTriple(*(np.zeros((31, 40)),) * 3))


# ---------------------------------------------------------------- SCD


def test_scd_examples(rng):
    a, b = textures(rng, 2)
    assert M.scd(M.FusionTriple(a, b, a + b)) == pytest.approx(2.0, abs=1e-9)
    expected = stats.pearsonr((b - a).ravel(), b.ravel())[0]
    assert M.scd(M.FusionTriple(a, b, b)) == pytest.approx(expected, abs=1e-12)
    f = textures(rng, 1)[0]
    assert M.scd(M.FusionTriple(a, b, f)) == pytest.approx(M.scd(M.FusionTriple(b, a, f)), abs=1e-12)


# ---------------------------------------------------------------- Qabf


def test_qabf_ceiling_value():
    q_g = 0.9994 / (1 + math.exp(-15 * 0.5))
    q_a = 0.9879 / (1 + math.exp(-22 * 0.2))
    assert M.qabf_ceiling() == pytest.approx(q_g * q_a, rel=1e-15)
    assert M.qabf_ceiling() == pytest.approx(0.974794, abs=1e-6)


def test_qabf_examples(rng):
    a, b, f = textures(rng, 3, shape=(20, 24))
    assert M.qabf(M.FusionTriple(a, b, f)) == pytest.approx(oracle_qabf(a, b, f), rel=1e-9)
    assert M.qabf(M.FusionTriple(a, a, a)) == pytest.approx(M.qabf_ceiling(), abs=1e-12)
    assert M.qabf(M.FusionTriple(a, b, np.full_like(a, 0.3))) <= 0.05
    assert M.qabf(M.FusionTriple(*(np.full((5, 5), 0.2),) * 3)) == 0.0


# ---------------------------------------------------------------- SSIM


def test_ssim_matches_skimage(rng):
    images = textures(rng)
    for a, b in zip(images, images[1:]):
        assert M.ssim(a, b) == pytest.approx(skimage_ssim(a, b), abs=1e-12)
        assert M.ssim(a, b) == pytest.approx(M.ssim(b, a), abs=1e-15)
        assert M.ssim(a, b) < 1.0
        assert M.ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_inverted_ramp_is_negative():
    ramp = np.tile(np.linspace(0, 1, 40), (40, 1))
    assert M.ssim(ramp, 1 - ramp) < 0


def test_ssim_too_small():
    with pytest.raises(ValidationError):
        M.ssim(np.zeros((10, 20)), np.zeros((10, 20)))


# ---------------------------------------------------------------- invariances


def test_permutation_invariance(rng):
    a, b, f = textures(rng, 3)
    perm = rng.permutation(a.size)
    pa, pb, pf = (x.ravel()[perm].reshape(x.shape) for x in (a, b, f))
    assert M.entropy(pf) == pytest.approx(M.entropy(f), abs=1e-12)
    assert M.std_dev(pf) == pytest.approx(M.std_dev(f), rel=1e-12)
    assert M.mutual_information(pf, pa) == pytest.approx(M.mutual_information(f, a), abs=1e-12)


def test_rotation_invariance(rng):
    a, b, f = textures(rng, 3)
    rot = lambda x: x[::-1, ::-1]
    assert M.spatial_frequency(rot(f)) == pytest.approx(M.spatial_frequency(f), rel=1e-12)
    assert M.average_gradient(rot(f)) == pytest.approx(M.average_gradient(f), rel=1e-12)
    assert M.qabf(M.FusionTriple(rot(a), rot(b), rot(f))) == pytest.approx(M.qabf(M.FusionTriple(a, b, f)), rel=1e-12)
    assert M.ssim(rot(a), rot(f)) == pytest.approx(M.ssim(a, f), rel=1e-12)


# ---------------------------------------------------------------- evaluate_all


def test_evaluate_all_identity(rng):
    x = textures(rng, 1, shape=(40, 48))[0]
    report = M.evaluate_all(M.FusionTriple(x, x, x))
    assert report.mi == pytest.approx(2 * M.entropy(x), abs=1e-9)
    assert report.ssim == pytest.approx(1.0, abs=1e-9)
    assert report.scd == 0.0
    assert report.vif == pytest.approx(2.0, abs=1e-6)
    assert report.qabf == pytest.approx(M.qabf_ceiling(), abs=1e-12)
    again = M.evaluate_all(M.FusionTriple(x, x, x))
    assert report.values() == again.values()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_report_ranges(seed):
    r = np.random.default_rng(seed)
    ir, vis, fused = (coded(r.random((32, 36))) for _ in range(3))
    rep = M.evaluate_all(M.FusionTriple(ir, vis, fused))
    assert 0 <= rep.en <= 8
    assert -1 <= rep.ssim <= 1
    assert 0 <= rep.qabf <= 1
    assert -2 <= rep.scd <= 2
    assert min(rep.mi, rep.sd, rep.sf, rep.ag, rep.vif) >= 0


def test_triple_shape_check():
    with pytest.raises(ValidationError):
        M.FusionTriple(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValidationError):
        M.MetricsConfig(mi_mode="median")
