import json

import pytest
import numpy as np
from skimage.color import rgb2lab

import pysnow.ImageCore as Ic
import pysnow.Metrics as Mt

PALETTE = [(0.9, 0.2, 0.2), (0.2, 0.9, 0.2), (0.2, 0.2, 0.9), (0.9, 0.9, 0.2)]


@pytest.fixture()
def chart(request):
    """64x64 chart of four saturated 32x32 squares."""
    data = np.zeros((64, 64, 3))
    for i, color in enumerate(PALETTE):
        r, c = divmod(i, 2)
        data[32 * r:32 * (r + 1), 32 * c:32 * (c + 1)] = color
    return Ic.Image(data)


@pytest.fixture()
def washed(chart):
    """The chart with its contrast around mid-gray cut tenfold."""
    return Ic.Image(0.5 + 0.1 * (chart.data - 0.5))


@pytest.fixture()
def noisy(request):
    rng = np.random.default_rng(3)
    return Ic.Image(rng.random((24, 20, 3)))


def test_mse_and_psnr():
    a = Ic.Image(np.zeros((16, 16, 3)))
    b = Ic.Image(np.full((16, 16, 3), 0.1))
    assert Mt.mse(a, b) == pytest.approx(0.01)
    assert Mt.psnr(a, b) == pytest.approx(20.0)


def test_psnr_of_identical_images_is_infinite(noisy):
    assert Mt.mse(noisy, noisy) == 0.0
    assert np.isinf(Mt.psnr(noisy, noisy))


def test_full_reference_metrics_need_equal_shapes(noisy):
    other = Ic.Image(np.zeros((24, 21, 3)))
    for fn in (Mt.mse, Mt.psnr, Mt.ssim):
        with pytest.raises(ValueError):
            fn(noisy, other)


def test_ssim_identical_is_one(noisy):
    assert Mt.ssim(noisy, noisy) == pytest.approx(1.0)


def test_ssim_of_constant_images():
    a = Ic.Image(np.full((32, 32, 3), 0.2))
    b = Ic.Image(np.full((32, 32, 3), 0.6))
    c1 = 0.01 ** 2
    expected = (2 * 0.2 * 0.6 + c1) / (0.2 ** 2 + 0.6 ** 2 + c1)
    assert Mt.ssim(a, b) == pytest.approx(expected, rel=1e-6)


def test_ssim_of_dim_constant_pair():
    a = Ic.Image(np.full((16, 16, 3), 0.2))
    b = Ic.Image(np.full((16, 16, 3), 0.4))
    assert Mt.ssim(a, b) == pytest.approx(0.8001, abs=1e-3)


def test_ssim_gray_images():
    a = Ic.Image(np.full((16, 16), 0.2))
    assert Mt.ssim(a, a) == pytest.approx(1.0)


def test_ssim_rejects_small_images():
    a = Ic.Image(np.zeros((10, 30, 3)))
    with pytest.raises(ValueError):
        Mt.ssim(a, a)


def test_measures_of_flat_gray_are_zero():
    flat = Ic.Image(np.full((16, 16, 3), 0.4))
    assert Mt.uicm(flat) == pytest.approx(0.0, abs=1e-9)
    assert Mt.uism(flat) == pytest.approx(0.0, abs=1e-9)
    assert Mt.uiconm(flat) == pytest.approx(0.0, abs=1e-9)
    assert Mt.uciqe(flat) == pytest.approx(0.0, abs=1e-8)
    assert Mt.uiqm(flat) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize('level', [0.2, 0.5, 0.73])
def test_uciqe_of_constant_gray_is_zero(level):
    flat = Ic.Image(np.full((16, 16, 3), level))
    assert Mt.uciqe(flat) == pytest.approx(0.0, abs=1e-8)
    assert Mt.uiqm(flat) == pytest.approx(0.0, abs=1e-8)


def test_uciqe_gray_ramp_scores_luminance_contrast_only():
    ramp = np.repeat(np.linspace(0.1, 0.9, 32)[None, :, None], 3, axis=2)
    data = np.repeat(ramp, 16, axis=0)
    lum = rgb2lab(data)[:, :, 0] / 100.0
    spread = np.percentile(lum, 99) - np.percentile(lum, 1)
    assert Mt.uciqe(Ic.Image(data)) == pytest.approx(
        Mt.UCIQE_COEFFS[1] * spread)


def test_uicm_scales_with_opponent_contrast(chart, washed):
    assert Mt.uicm(chart) > 0.0
    assert Mt.uicm(washed) == pytest.approx(0.1 * Mt.uicm(chart), rel=1e-6)


def test_block_aligned_chart_has_no_sharpness(chart):
    assert Mt.uism(chart) == 0.0


def test_uiconm_of_chart_squares(chart):
    # every block spans 0.2 to 0.9 across its channels
    c = 0.7 / 1.1
    assert Mt.uiconm(chart) == pytest.approx(-c * np.log(c))


def test_uiqm_prefers_colorful_chart(chart, washed):
    assert Mt.uiqm(chart) > Mt.uiqm(washed)


def test_uciqe_prefers_colorful_chart(chart, washed):
    assert Mt.uciqe(chart) > Mt.uciqe(washed)


def test_uiconm_matches_block_loop(noisy):
    rgb = noisy.data.astype(np.float64) * 255.0
    k2, k1 = rgb.shape[0] // 8, rgb.shape[1] // 8
    total = 0.0
    for i in range(k2):
        for j in range(k1):
            block = rgb[8 * i:8 * (i + 1), 8 * j:8 * (j + 1)]
            hi, lo = block.max(), block.min()
            if hi - lo > 0 and hi + lo > 0:
                c = (hi - lo) / (hi + lo)
                total += c * np.log(c)
    assert Mt.uiconm(noisy) == pytest.approx(-total / (k1 * k2))


def test_uicm_matches_trimmed_statistics(noisy):
    rgb = noisy.data.astype(np.float64) * 255.0
    rg = np.sort((rgb[..., 0] - rgb[..., 1]).ravel())
    yb = np.sort(((rgb[..., 0] + rgb[..., 1]) / 2 - rgb[..., 2]).ravel())
    n = rg.size
    lo, hi = int(np.ceil(0.1 * n)), int(np.floor(0.1 * n))
    mu_rg, mu_yb = rg[lo:n - hi].mean(), yb[lo:n - hi].mean()
    var = np.mean((rg - mu_rg) ** 2) + np.mean((yb - mu_yb) ** 2)
    expected = -0.0268 * np.hypot(mu_rg, mu_yb) + 0.1586 * np.sqrt(var)
    assert Mt.uicm(noisy) == pytest.approx(expected)


def test_color_measures_need_rgb():
    gray = Ic.Image(np.full((16, 16), 0.5))
    for fn in (Mt.uiqm, Mt.uciqe, Mt.uicm, Mt.uism, Mt.uiconm):
        with pytest.raises(ValueError):
            fn(gray)


def test_block_measures_need_one_block():
    tiny = Ic.Image(np.full((4, 20, 3), 0.5))
    with pytest.raises(ValueError):
        Mt.uiconm(tiny)


def test_evaluate_pairs_report(tmp_path, noisy):
    other = Ic.Image(np.clip(noisy.data * 0.9, 0, 1))
    report = Mt.evaluate_pairs([(noisy, noisy), (noisy, other)],
                               label='demo', ids=['same', 'dim'])

    assert [row['id'] for row in report.rows] == ['same', 'dim']
    assert report.infinite_psnr == ['same']
    assert report.mean['psnr_db'] == pytest.approx(report.rows[1]['psnr_db'])
    assert report.mean['mse'] == pytest.approx(report.rows[1]['mse'] / 2)

    frame = report.to_frame()
    assert list(frame.columns) == list(Mt.REPORT_COLUMNS)
    assert frame['id'].iloc[-1] == 'MEAN'


def test_report_csv_and_json(tmp_path, noisy):
    other = Ic.Image(np.clip(noisy.data + 0.05, 0, 1))
    report = Mt.evaluate_pairs([(noisy, other), (noisy, noisy)],
                               label='x', ids=['0001', '0002'])

    csv_path = str(tmp_path / 'out' / 'report.csv')
    report.to_csv(csv_path)
    loaded = Mt.MetricsReport.from_csv(csv_path, label='x')
    assert [row['id'] for row in loaded.rows] == ['0001', '0002']
    for got, want in zip(loaded.rows, report.rows):
        for col in Mt.METRIC_COLUMNS:
            assert got[col] == want[col]

    json_path = str(tmp_path / 'report.json')
    report.to_json(json_path)
    with open(json_path) as f:
        payload = json.load(f)
    assert payload['rows'][1]['psnr_db'] == 'inf'
    assert payload['infinite_psnr'] == ['0002']
    assert payload['label'] == 'x'


def test_gray_candidates_skip_color_measures():
    a = Ic.Image(np.random.default_rng(0).random((16, 16)))
    report = Mt.evaluate_pairs([(a, a)])
    assert np.isnan(report.rows[0]['uiqm'])
    assert report.rows[0]['id'] == '0000'


def test_evaluate_pairs_needs_pairs():
    with pytest.raises(ValueError):
        Mt.evaluate_pairs([])
