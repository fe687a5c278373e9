import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from mvrppg.cfa import (
    Discriminator,
    disc_loss,
    gen_loss,
    pearson_loss,
    psd_loss,
    psd_triplets,
    segment_spectra,
    total_loss,
)
from mvrppg.diffcore import grad_check
from mvrppg.mvca import SegmentTriplets

torch.set_num_threads(1)
FS = 30.0


def _randn(*shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64)


def _trip(f, fp, g):
    return SegmentTriplets(f, fp, g, 1, [0])


# -- Pearson ------------------------------------------------------------------------------


def test_pearson_perfect():
    g = _randn(6, 40)
    loss, flat = pearson_loss(_trip(g, g, g))
    assert float(loss) == pytest.approx(-1.0, abs=1e-6) and flat == 0


def test_pearson_anti():
    g = _randn(6, 40)
    assert float(pearson_loss(_trip(-g, -g, g))[0]) == pytest.approx(1.0, abs=1e-6)


def test_pearson_half_monte_carlo():
    vals = []
    for i in range(100):
        g = _randn(4, 75, seed=2 * i)
        noise = _randn(4, 75, seed=2 * i + 1)
        vals.append(float(pearson_loss(_trip(g, noise, g))[0]))
    assert np.mean(vals) == pytest.approx(-0.5, abs=0.1)
    assert all(-0.5 - 0.1 <= v <= -0.5 + 0.1 for v in vals)


def test_pearson_flat_segment_counted():
    g = _randn(3, 40)
    f = g.clone()
    f[1] = 2.0
    loss, flat = pearson_loss(_trip(f, g, g))
    assert flat == 1
    # two perfect f terms + three perfect f' terms over 2n = 6
    assert float(loss) == pytest.approx(-5 / 6, abs=1e-6)


# the 1e-8 denominator guard shifts r by ~1e-8 / (std f * std g); keep scales where that is < 1e-6
@given(st.integers(0, 500), st.floats(0.1, 100), st.floats(-50, 50))
@settings(max_examples=50, deadline=None)
def test_pearson_minimum_on_positive_affine(seed, a, b):
    g = _randn(3, 32, seed=seed)
    loss, _ = pearson_loss(_trip(a * g + b, 2 * a * g - b, g))
    assert float(loss) == pytest.approx(-1.0, abs=1e-6)


def test_pearson_grad_check():
    f, fp, g = _randn(8, 32, seed=1), _randn(8, 32, seed=2), _randn(8, 32, seed=3)
    report = grad_check(lambda: pearson_loss(_trip(f, fp, g))[0], {"f": f, "f_prime": fp})
    assert report.passed, report.errors


# -- PSD ------------------------------------------------------------------------------------


def test_psd_pure_tone_mass():
    t = torch.arange(75, dtype=torch.float64) / FS
    x = torch.sin(2 * np.pi * 1.5 * t)[None]
    p, flat = segment_spectra(x, FS)
    freqs = torch.fft.rfftfreq(75, 1 / FS, dtype=torch.float64)
    band = freqs[(freqs >= 0.7) & (freqs <= 4.0)]
    near = (band - 1.5).abs() <= (freqs[1] - freqs[0]) * 1.0 + 1e-12
    assert not flat.any()
    assert float(p[0, near].sum()) >= 0.9


@given(st.integers(0, 200), st.sampled_from([32, 75, 150]))
@settings(max_examples=40, deadline=None)
def test_psd_normalised(seed, L):
    x = _randn(5, L, seed=seed)
    p, _ = segment_spectra(x, FS)
    torch.testing.assert_close(p.sum(-1), torch.ones(5, dtype=torch.float64), atol=1e-6, rtol=0)
    assert torch.all(p >= 0)


def test_psd_flat_segment_uniform():
    p, flat = segment_spectra(torch.zeros(2, 64, dtype=torch.float64), FS)
    assert flat.all()
    torch.testing.assert_close(p, torch.full_like(p, 1 / p.shape[-1]))


def test_psd_loss_examples():
    s = torch.tensor([[0.0, 1.0]])
    p = torch.tensor([[1.0, 0.0]])
    assert float(psd_loss(p=p, p_prime=s, s=s)) == pytest.approx(1.0)
    assert float(psd_loss(p=s, p_prime=s, s=s)) == 0.0
    a, b = torch.rand(3, 5), torch.rand(3, 5)
    assert float(psd_loss(p=a, p_prime=b, s=s.expand(3, 2)[:, :1].expand(3, 5))) == pytest.approx(
        float(psd_loss(p=b, p_prime=a, s=s.expand(3, 2)[:, :1].expand(3, 5)))
    )


def test_psd_loss_zero_iff_identical_spectra():
    g = _randn(4, 75, seed=1)
    spec = psd_triplets(_trip(3 * g + 1, -g, g), FS)  # sign flip leaves |FFT| unchanged
    assert float(psd_loss(spec)) <= 1e-9
    spec2 = psd_triplets(_trip(_randn(4, 75, seed=2), g, g), FS)
    assert float(psd_loss(spec2)) > 1e-6


def test_psd_loss_grad_check():
    f, fp, g = _randn(4, 32, seed=1), _randn(4, 32, seed=2), _randn(4, 32, seed=3)
    report = grad_check(lambda: psd_loss(psd_triplets(_trip(f, fp, g), FS)), {"f": f, "f_prime": fp})
    assert report.passed, report.errors


# -- adversarial ------------------------------------------------------------------------------


def test_adv_examples():
    one, zero, half = torch.ones(4, 9), torch.zeros(4, 9), torch.full((4, 9), 0.5)
    assert float(disc_loss(one, zero)) == 0.0 and float(gen_loss(zero)) == 1.0
    assert float(disc_loss(half, half)) == pytest.approx(0.25)
    assert float(gen_loss(half)) == pytest.approx(0.25)
    assert float(gen_loss(one)) == 0.0


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20))
@settings(max_examples=50, deadline=None)
def test_adv_nonnegative(vals):
    s = torch.tensor(vals, dtype=torch.float64)
    assert float(disc_loss(s, s.flip(0))) >= 0 and float(gen_loss(s)) >= 0


def test_discriminator_patches():
    torch.manual_seed(0)
    D = Discriminator()
    for L in (32, 75, 150):
        assert D(torch.randn(5, L)).shape == (5, Discriminator.output_length(L))
        assert Discriminator.output_length(L) >= 1
    assert Discriminator.output_length(75) == 9


# -- total ---------------------------------------------------------------------------------------


def test_total_examples():
    assert float(total_loss(-1.0, 0.0, 0.0).l_total) == -1.0
    assert float(total_loss(-0.5, 0.2, 0.3, lambda_psd=1.0, lambda_g=0.1).l_total) == pytest.approx(-0.27)
    a = total_loss(-0.5, 0.2, 0.3, lambda_g=0.0).l_total
    b = total_loss(-0.5, 0.2, 99.0, lambda_g=0.0).l_total
    assert float(a) == float(b)
    bundle = total_loss(-0.4, 0.1, 0.2, 0.3)
    assert bundle.as_floats()["l_d"] == pytest.approx(0.3)
