"""
Full-reference (MSE, PSNR, SSIM) and no-reference underwater (UIQM, UCIQE)
image quality metrics, plus batch evaluation reports.

UIQM and UCIQE use their published coefficients with pinned variant
choices: 8x8 blocks, symmetric alpha-trim of 0.1 and the 1st/99th luminance
percentiles.  UIQM works on the 0-255 scale.

Author: pysnow developers
"""

import os
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import ndimage
from skimage.color import rgb2lab
from skimage.metrics import structural_similarity

logger = logging.getLogger(__name__)

UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)

BLOCK_SIZE = 8
TRIM_ALPHA = 0.1
SSIM_WINDOW = 11

REPORT_COLUMNS = ('id', 'mse', 'psnr_db', 'ssim', 'uiqm', 'uciqe')
METRIC_COLUMNS = REPORT_COLUMNS[1:]


def _check_pair(a, b):
    if a.shape != b.shape:
        logger.error('Metric inputs differ in shape: {} vs {}'.format(
            a.shape, b.shape))
        raise ValueError('Images must have identical dimensions.')


def _check_color(img, name):
    if img.channels != 3:
        logger.error('{} needs an RGB image, got {} channel(s)'.format(
            name, img.channels))
        raise ValueError('{} is defined for 3-channel images only.'.format(
            name))


def mse(a, b):
    """Mean squared difference over all samples on the [0, 1] scale."""
    _check_pair(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr_from_mse(value):
    if value == 0:
        return np.inf
    return float(10.0 * np.log10(1.0 / value))


def psnr(a, b):
    """PSNR in dB with peak 1; identical images give +inf."""
    return psnr_from_mse(mse(a, b))


def ssim(a, b):
    """
    Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01,
    K2=0.03, data range 1, averaged over window positions and channels.
    """
    _check_pair(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        logger.error('SSIM needs images of at least {0}x{0}, got {1}x{2}'
                     ''.format(SSIM_WINDOW, a.width, a.height))
        raise ValueError('Image smaller than the SSIM window.')

    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    if a.channels == 1:
        x, y, axis = x[:, :, 0], y[:, :, 0], None
    else:
        axis = 2
    return float(structural_similarity(x, y, data_range=1.0,
                                       gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False,
                                       channel_axis=axis))


def _trimmed_mean(values, alpha=TRIM_ALPHA):
    values = np.sort(values.ravel())
    k = values.size
    lo = int(np.ceil(alpha * k))
    hi = int(np.floor(alpha * k))
    kept = values[lo:k - hi]
    if kept.size == 0:
        kept = values
    return float(kept.mean())


def uicm(img):
    """Colorfulness from alpha-trimmed RG / YB opponent statistics."""
    _check_color(img, 'UICM')
    rgb = img.data.astype(np.float64) * 255.0
    r, g, b = rgb[:, :, 0], rgb[:, :, 1], rgb[:, :, 2]
    rg = r - g
    yb = (r + g) / 2.0 - b

    mu_rg = _trimmed_mean(rg)
    mu_yb = _trimmed_mean(yb)
    var_rg = float(np.mean((rg - mu_rg) ** 2))
    var_yb = float(np.mean((yb - mu_yb) ** 2))

    return (-0.0268 * np.sqrt(mu_rg ** 2 + mu_yb ** 2) +
            0.1586 * np.sqrt(var_rg + var_yb))


def _blocks(arr, size=BLOCK_SIZE):
    """(k2, k1, size, size[, C]) view of the whole size x size blocks."""
    k2 = arr.shape[0] // size
    k1 = arr.shape[1] // size
    if k1 == 0 or k2 == 0:
        logger.error('Image {}x{} smaller than one {}x{} block'.format(
            arr.shape[1], arr.shape[0], size, size))
        raise ValueError('Image smaller than the metric block size.')
    cropped = arr[:k2 * size, :k1 * size]
    shape = (k2, size, k1, size) + cropped.shape[2:]
    return cropped.reshape(shape).swapaxes(1, 2)


def _eme(edge_map):
    blocks = _blocks(edge_map)
    k2, k1 = blocks.shape[:2]
    bmax = blocks.max(axis=(2, 3))
    bmin = blocks.min(axis=(2, 3))
    valid = (bmax > 0) & (bmin > 0)
    ratio = np.ones_like(bmax)
    ratio[valid] = bmax[valid] / bmin[valid]
    return float(2.0 / (k1 * k2) * np.log(ratio).sum())


def _sobel_magnitude(chan):
    mag = np.hypot(ndimage.sobel(chan, axis=0), ndimage.sobel(chan, axis=1))
    peak = mag.max()
    if peak > 0:
        mag *= 255.0 / peak
    return mag


def uism(img):
    """Sharpness: luma-weighted EME of Sobel-weighted channels."""
    _check_color(img, 'UISM')
    rgb = img.data.astype(np.float64) * 255.0
    weights = (0.299, 0.587, 0.114)
    return float(sum(w * _eme(_sobel_magnitude(rgb[:, :, c]) * rgb[:, :, c])
                     for c, w in enumerate(weights)))


def uiconm(img):
    """Contrast: log-AMEE over 8x8 blocks spanning all channels."""
    _check_color(img, 'UIConM')
    rgb = img.data.astype(np.float64) * 255.0
    blocks = _blocks(rgb)
    k2, k1 = blocks.shape[:2]
    bmax = blocks.max(axis=(2, 3, 4))
    bmin = blocks.min(axis=(2, 3, 4))
    top = bmax - bmin
    bot = bmax + bmin
    valid = (top > 0) & (bot > 0)
    contrast = np.ones_like(top)
    contrast[valid] = top[valid] / bot[valid]
    return float(-1.0 / (k1 * k2) * (contrast * np.log(contrast)).sum())


def uiqm(img):
    """
    Underwater image quality measure c1*UICM + c2*UISM + c3*UIConM.

    Parameters
    ----------
    img: Image
        RGB image at least 8x8.

    Returns
    -------
    float
    """
    c1, c2, c3 = UIQM_COEFFS
    return float(c1 * uicm(img) + c2 * uism(img) + c3 * uiconm(img))


def uciqe(img):
    """
    Underwater color image quality evaluation in CIELab:
    c1 * std(chroma) + c2 * luminance contrast + c3 * mean saturation.

    Chroma and luminance are scaled to [0, 1] by 1/100; luminance contrast
    is the spread between the 1st and 99th percentiles of L; saturation is
    chroma / sqrt(chroma^2 + L^2), taken as 0 where both vanish.  Neutral
    pixels (R = G = B) get zero chroma, dropping the white-point residual
    rgb2lab leaves in a and b.
    """
    _check_color(img, 'UCIQE')
    lab = rgb2lab(img.data.astype(np.float64))
    lum = lab[:, :, 0] / 100.0
    chroma = np.hypot(lab[:, :, 1], lab[:, :, 2]) / 100.0
    rgb = img.data
    chroma[(rgb.max(axis=2) - rgb.min(axis=2)) == 0] = 0.0

    sigma_c = float(np.std(chroma))
    con_l = float(np.percentile(lum, 99) - np.percentile(lum, 1))
    denom = np.hypot(chroma, lum)
    sat = np.zeros_like(denom)
    nz = denom > 0
    sat[nz] = chroma[nz] / denom[nz]

    c1, c2, c3 = UCIQE_COEFFS
    return float(c1 * sigma_c + c2 * con_l + c3 * float(sat.mean()))


@dataclass
class MetricsReport(object):
    """
    Per-image metric rows plus aggregate means.

    Rows with infinite PSNR are listed in infinite_psnr and left out of the
    PSNR mean.
    """
    label: str = ''
    rows: list = field(default_factory=list)

    @property
    def infinite_psnr(self):
        return [row['id'] for row in self.rows
                if np.isinf(row['psnr_db'])]

    @property
    def mean(self):
        out = {}
        for col in METRIC_COLUMNS:
            values = np.array([row[col] for row in self.rows], dtype=float)
            if col == 'psnr_db':
                finite = values[np.isfinite(values)]
                out[col] = float(finite.mean()) if finite.size else np.inf
            else:
                out[col] = float(values.mean()) if values.size else np.nan
        return out

    def to_frame(self):
        frame = pd.DataFrame(self.rows, columns=list(REPORT_COLUMNS))
        mean_row = dict(self.mean, id='MEAN')
        return pd.concat([frame, pd.DataFrame([mean_row],
                                              columns=list(REPORT_COLUMNS))],
                         ignore_index=True)

    def to_csv(self, path):
        parent = os.path.dirname(path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format='%.17g')
        logger.debug('Wrote metrics report to {}'.format(path))

    def to_json(self, path):
        def clean(value):
            if isinstance(value, float) and np.isinf(value):
                return 'inf' if value > 0 else '-inf'
            if isinstance(value, float) and np.isnan(value):
                return None
            return value

        payload = {'label': self.label,
                   'rows': [{k: clean(v) for k, v in row.items()}
                            for row in self.rows],
                   'mean': {k: clean(v) for k, v in self.mean.items()},
                   'infinite_psnr': self.infinite_psnr}
        with open(path, 'w') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write('\n')

    @classmethod
    def from_csv(cls, path, label=''):
        frame = pd.read_csv(path, dtype={'id': str})
        if tuple(frame.columns) != REPORT_COLUMNS:
            raise ValueError('Not a metrics report: {}'.format(path))
        frame = frame[frame['id'] != 'MEAN']
        rows = []
        for rec in frame.to_dict(orient='records'):
            row = {'id': rec['id']}
            row.update({col: float(rec[col]) for col in METRIC_COLUMNS})
            rows.append(row)
        return cls(label=label, rows=rows)

    def summary(self):
        mean = self.mean
        return ('{}: mse={:.6g} psnr={:.4f} dB ssim={:.4f} uiqm={:.4f} '
                'uciqe={:.4f}'.format(self.label or 'report', mean['mse'],
                                      mean['psnr_db'], mean['ssim'],
                                      mean['uiqm'], mean['uciqe']))


def evaluate_pairs(pairs, label='', ids=None):
    """
    Score (reference, candidate) pairs.

    Full-reference metrics compare each candidate with its reference; UIQM
    and UCIQE score the candidate alone (NaN for grayscale candidates).

    Parameters
    ----------
    pairs: list of (Image, Image)
    label: str, optional
        Method label.
    ids: list of str, optional
        Row identifiers; defaults to zero-padded indices.

    Returns
    -------
    MetricsReport
    """
    if not pairs:
        logger.error('evaluate_pairs called with no pairs')
        raise ValueError('Nothing to evaluate.')
    if ids is None:
        ids = ['{:04d}'.format(i) for i in range(len(pairs))]
    if len(ids) != len(pairs):
        raise ValueError('Number of ids does not match number of pairs.')

    rows = []
    for ident, (ref, cand) in zip(ids, pairs):
        err = mse(ref, cand)
        row = {'id': str(ident), 'mse': err, 'psnr_db': psnr_from_mse(err),
               'ssim': ssim(ref, cand)}
        if cand.channels == 3:
            row['uiqm'] = uiqm(cand)
            row['uciqe'] = uciqe(cand)
        else:
            row['uiqm'] = row['uciqe'] = np.nan
        rows.append(row)

    report = MetricsReport(label=label, rows=rows)
    if report.infinite_psnr:
        logger.info('{:d} pair(s) identical (infinite PSNR) excluded from '
                    'the PSNR mean'.format(len(report.infinite_psnr)))
    return report
