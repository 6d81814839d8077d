import io

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import structural_similarity

from privsplit.errors import ConfigError, DataError, DimensionError, UsageError
from privsplit.metrics import (CSV_FIELDS, MetricsReport, SsimParams, accuracy, blind_normalizer,
                               l2_errors, mean_ssim, privacy_p0, privacy_p1, privacy_p2, read_csv,
                               reward, reward_terms, ssim, ssim_raw, write_csv)

# (A_base, A, P, S, printed R) from the grid-search results table
PUBLISHED_GRID_ROWS = [
    ("VGG11 reactive", 0.9241, 0.8950, 0.5300, 0.7950, 0.4361),
    ("VGG13 reactive", 0.9423, 0.9353, 0.4540, 0.7502, 0.5082),
    ("VGG16 reactive", 0.9397, 0.9282, 0.4527, 0.9200, 0.5372),
    ("AlexNet reactive", 0.8679, 0.8425, 0.3855, 0.9587, 0.5955),
    ("LeNet reactive", 0.7522, 0.7189, 0.5196, 0.8176, 0.4438),
    ("AlexNet S2", 0.8679, 0.8251, 0.4142, 0.9867, 0.5568),
    ("LeNet S2", 0.7522, 0.7096, 0.5533, 0.8661, 0.4138),
    ("VGG11 proactive", 0.9241, 0.8227, 0.4097, 0.8609, 0.5153),
    ("VGG13 proactive", 0.9423, 0.7974, 0.3823, 0.8613, 0.5126),
    ("VGG16 proactive", 0.9397, 0.9090, 0.4234, 0.8269, 0.5410),
    ("VGG11 P2", 0.7557, 0.6889, 0.1302, 0.8372, 0.7719),
    ("VGG13 P2", 0.7673, 0.7717, 0.3542, 0.7502, 0.6090),
    ("VGG16 P2", 0.7711, 0.6998, 0.2405, 0.8437, 0.6724),
]

unit = st.floats(0.0, 1.0, allow_nan=False)
images = arrays(np.float64, (9, 9), elements=st.floats(0.0, 1.0, allow_nan=False, width=32))


@pytest.mark.parametrize("row", PUBLISHED_GRID_ROWS, ids=[r[0] for r in PUBLISHED_GRID_ROWS])
def test_reward_reproduces_published_grid_rows(row):
    _, a_base, a, p, s, printed = row
    assert abs(reward(a, a_base, p, s).R - printed) <= 5e-4


def test_reward_search_row_with_grid_baseline():
    # the search results table omits A_base; it is shared with the grid row
    assert abs(reward(0.9108, 0.9241, 0.4106, 0.6808).R - 0.5218) <= 5e-4


def test_reward_boundaries_and_errors():
    assert reward(0.8, 0.9, 1.0, 0.7).R == 0.0
    assert reward(0.9, 0.9, 0.0, 1.0).R == 1.0
    with pytest.raises(ConfigError):
        reward(0.5, 0.0, 0.1, 0.1)
    with pytest.raises(ConfigError):
        reward(0.5, 0.9, 1.2, 0.1)


@given(unit, st.floats(0.05, 1.0), unit, unit)
def test_reward_is_product_of_terms(a, a_base, p, s):
    rep = reward(a, a_base, p, s)
    assert rep.R == rep.R_A * rep.R_P * rep.R_S
    assert 0.0 <= rep.R_P <= 1.0 and 0.0 <= rep.R_S <= 1.0


@given(unit, unit, st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_reward_monotonicity(a1, a2, p, s, t):
    assume(a1 < a2)
    assert reward(a1, 1.0, p, s).R < reward(a2, 1.0, p, s).R
    lo, hi = min(s, t), max(s, t)
    assume(lo < hi)
    assert reward(0.9, 1.0, p, lo).R < reward(0.9, 1.0, p, hi).R
    assert reward(0.9, 1.0, lo, s).R > reward(0.9, 1.0, hi, s).R


def test_rs_concavity_on_grid():
    s = np.linspace(0.0, 1.0, 101)
    rs = np.array([reward_terms(1.0, 1.0, 0.0, v)[2] for v in s])
    chord = rs[0] + (rs[-1] - rs[0]) * s
    assert np.all(rs >= chord - 1e-15)
    assert np.all(np.diff(rs, 2) <= 1e-12)


# ---------------------------------------------------------------- accuracy


def test_accuracy_examples():
    assert accuracy([0] * 9 + [1], [0] * 10) == pytest.approx(0.9)
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([1, 2, 3], [0, 0, 0]) == 0.0
    with pytest.raises(UsageError):
        accuracy([], [])
    with pytest.raises(DimensionError):
        accuracy([1], [1, 2])


# ---------------------------------------------------------------- SSIM


def skimage_ssim(x, y, window=7):
    return structural_similarity(x, y, win_size=window, data_range=1.0, gaussian_weights=False,
                                 use_sample_covariance=False, K1=0.01, K2=0.03)


def test_ssim_matches_skimage_uniform_window():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.random((16, 16))
        y = np.clip(x + 0.3 * rng.standard_normal((16, 16)), 0, 1)
        assert abs(ssim_raw(x, y) - skimage_ssim(x, y)) < 1e-9


def test_ssim_closed_form_constant_images():
    x, y = np.ones((8, 8)), np.zeros((8, 8))
    assert abs(ssim(x, y) - 1e-4 / 1.0001) < 1e-6


@settings(max_examples=50, deadline=None)
@given(images, images)
def test_ssim_self_similarity_and_symmetry(x, y):
    p = SsimParams()
    assert abs(ssim(x, x, p) - 1.0) <= 1e-6
    assert abs(ssim(x, y, p) - ssim(y, x, p)) <= 1e-9
    assert 0.0 <= ssim(x, y, p) <= 1.0


def test_ssim_params_validation():
    for bad in (dict(window=4), dict(window=1), dict(c1=0.0), dict(c2=-1.0)):
        with pytest.raises(ConfigError):
            SsimParams(**bad)
    with pytest.raises(DimensionError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))
    with pytest.raises(DimensionError):
        ssim(np.zeros((8, 8)), np.zeros((9, 9)))
    assert SsimParams.for_range(255.0).c1 == pytest.approx((0.01 * 255) ** 2)


# ---------------------------------------------------------------- privacy losses


def test_p0_examples():
    assert privacy_p0(0.0, 3.0) == 1.0
    assert privacy_p0(3.0, 3.0) == 0.0
    assert privacy_p0(1.5, 3.0) == 0.5
    assert privacy_p0(9.0, 3.0) == 0.0
    with pytest.raises(DataError):
        privacy_p0(1.0, 0.0)


def test_blind_normalizer_is_mean_image_error():
    rng = np.random.default_rng(1)
    aux, ev = rng.random((20, 1, 4, 4)), rng.random((7, 1, 4, 4))
    direct = np.mean([np.linalg.norm(e - aux.mean(axis=0)) for e in ev])
    assert blind_normalizer(aux, ev) == pytest.approx(direct, rel=1e-12)
    assert np.allclose(l2_errors(ev, ev), 0.0)


def test_p1_examples():
    rng = np.random.default_rng(2)
    imgs = rng.random((6, 1, 12, 12))
    assert privacy_p1(lambda x: x, imgs) == pytest.approx(1.0, abs=1e-9)
    mean_img = imgs.mean(axis=0)
    direct = np.mean([max(0.0, skimage_ssim(a[0], mean_img[0])) for a in imgs])
    assert privacy_p1(lambda x: np.broadcast_to(mean_img, x.shape), imgs) == pytest.approx(direct, abs=1e-9)
    with pytest.raises(DataError):
        privacy_p1(lambda x: x, imgs[:0])


def test_p2_examples():
    hidden = np.array([0, 1] * 5)
    pred = hidden.copy()
    pred[:3] = 1 - pred[:3]
    assert privacy_p2(lambda _: pred, None, hidden) == pytest.approx(0.7)
    assert privacy_p2(lambda _: hidden, None, hidden) == 1.0
    with pytest.raises(DataError):
        privacy_p2(lambda _: hidden, None, np.zeros(10, int))


def test_p2_random_guessing_is_near_chance():
    hidden = np.array([0, 1] * 500)
    vals = [privacy_p2(lambda _: np.random.default_rng(s).integers(0, 2, 1000), None, hidden)
            for s in range(20)]
    # binomial std for n=1000 is ~0.016; the mean of 20 draws is tighter still
    assert abs(np.mean(vals) - 0.5) < 3 * 0.5 / np.sqrt(1000 * 20)
    assert all(abs(v - 0.5) < 4 * 0.5 / np.sqrt(1000) for v in vals)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 100), st.floats(0.01, 100))
def test_p0_lands_in_unit_interval(err, norm):
    assert 0.0 <= privacy_p0(err, norm) <= 1.0


def test_mean_ssim_errors():
    with pytest.raises(DataError):
        mean_ssim(np.zeros((0, 8, 8)), np.zeros((0, 8, 8)))


# ---------------------------------------------------------------- CSV


def test_csv_round_trip():
    reps = [reward(0.9, 0.95, 0.4, 0.7, strategy="P:3 0:W1", run_id="r", episode=i, seed=2,
                   noise=0.5 * i, CR=0.1) for i in range(3)]
    buf = io.StringIO()
    write_csv(reps, buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(CSV_FIELDS)
    back = read_csv(io.StringIO(text))
    assert back == reps


def test_report_defaults_compute_reward():
    rep = MetricsReport(A=0.9, A_base=0.9, P=0.5, S=1.0)
    assert rep.R == pytest.approx(0.5)
