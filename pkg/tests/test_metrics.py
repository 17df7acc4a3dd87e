import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncrecon.metrics import PSNR_CAP, evaluate, nmse, psnr, ssim
from ncrecon.simulation import PhantomSpec, make_phantom


def loop_psnr(ref, test):
    peak = max(max(row) for row in ref)
    total = 0.0
    for i in range(len(ref)):
        for j in range(len(ref[0])):
            total += (ref[i][j] - test[i][j]) ** 2
    return 10 * math.log10(peak**2 / (total / (len(ref) * len(ref[0]))))


def loop_ssim(ref, test, w=7, k1=0.01, k2=0.03):
    h, wd = ref.shape
    big_l = ref.max() - ref.min()
    c1, c2 = (k1 * big_l) ** 2, (k2 * big_l) ** 2
    vals = []
    for i in range(h - w + 1):
        for j in range(wd - w + 1):
            a = [ref[i + u, j + v] for u in range(w) for v in range(w)]
            b = [test[i + u, j + v] for u in range(w) for v in range(w)]
            n = len(a)
            ma, mb = sum(a) / n, sum(b) / n
            va = sum((x - ma) ** 2 for x in a) / n
            vb = sum((x - mb) ** 2 for x in b) / n
            cov = sum((x - ma) * (y - mb) for x, y in zip(a, b)) / n
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def test_psnr_examples():
    ref = np.random.default_rng(0).uniform(0, 1, (8, 8))
    ref[0, 0] = 1.0
    assert psnr(ref, ref) == PSNR_CAP
    assert psnr(ref, ref + 0.1) == pytest.approx(20.0)


def test_psnr_loop_oracle(rng):
    for _ in range(5):
        ref, test = rng.uniform(0, 1, (12, 10)), rng.uniform(0, 1, (12, 10))
        assert psnr(ref, test) == pytest.approx(loop_psnr(ref.tolist(), test.tolist()), abs=1e-6)


def test_psnr_scale_invariant(rng):
    ref, test = rng.uniform(0, 1, (16, 16)), rng.uniform(0, 1, (16, 16))
    assert psnr(3.5 * ref, 3.5 * test) == pytest.approx(psnr(ref, test), abs=1e-9)


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        psnr(np.ones((4, 4)), np.ones((4, 5)))
    with pytest.raises(TypeError):
        psnr(np.ones((4, 4)), np.ones((4, 4)) * 1j)


def test_nmse_examples(rng):
    ref = rng.uniform(0.1, 1, (8, 8))
    assert nmse(ref, ref) == 0
    assert nmse(ref, np.zeros_like(ref)) == pytest.approx(1.0)
    assert nmse(ref, 1.1 * ref) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        nmse(np.zeros((3, 3)), ref[:3, :3])


def test_nmse_asymmetric(rng):
    a = rng.uniform(0, 1, (8, 8))
    b = 2 * a
    assert nmse(a, b) != pytest.approx(nmse(b, a))


def test_nmse_complex(rng):
    ref = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    assert nmse(ref, 1j * ref) == pytest.approx(2.0)


def test_ssim_identity_and_negation():
    ref = np.abs(make_phantom(PhantomSpec(shape=(64, 64), kind="shepp-logan")))
    assert ssim(ref, ref) == pytest.approx(1.0)
    # Negating a non-negative image flips both the luminance and the structure
    # factor, so their product stays positive; the low-score case needs texture
    # whose local means are near zero.
    yy, xx = np.mgrid[:64, :64]
    textured = (0.2 + ref) * np.sin(2.1 * xx) * np.sin(1.9 * yy)
    assert ssim(textured, -textured) < 0.2


def test_ssim_loop_oracle(rng):
    for _ in range(3):
        ref, test = rng.uniform(0, 1, (10, 11)), rng.uniform(0, 1, (10, 11))
        assert ssim(ref, test) == pytest.approx(loop_ssim(ref, test), abs=1e-5)


def test_ssim_window_errors(rng):
    img = rng.uniform(size=(6, 6))
    with pytest.raises(ValueError):
        ssim(img, img)
    with pytest.raises(ValueError):
        ssim(img, img, window=4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ssim_bounded(seed):
    r = np.random.default_rng(seed)
    ref, test = r.uniform(0, 1, (9, 9)), r.normal(0, 1, (9, 9))
    assert -1 <= ssim(ref, test) <= 1


def test_evaluate_uses_magnitudes():
    truth = make_phantom(PhantomSpec(shape=(32, 32), seed=1))
    out = evaluate(truth, truth * np.exp(0.3j))
    assert out["psnr"] == PSNR_CAP and out["nmse"] == pytest.approx(0, abs=1e-12)
    assert out["ssim"] == pytest.approx(1.0)
