"""
Marine-snow removal: classical median filters and U-Net inference.

Author: pysnow developers
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import ImageCore as Ic
from . import Models as Mdl
from . import Tensor as T

logger = logging.getLogger(__name__)

FILTER_KINDS = ('median', 'adaptive_median', 'unet')

# CLI method name -> (kind, kernel)
METHODS = {'median3': ('median', 3),
           'median5': ('median', 5),
           'adaptive': ('adaptive_median', 7),
           'unet': ('unet', 0)}

CLASSICAL_METHODS = ('median3', 'median5', 'adaptive')


def _check_odd(value, name):
    if value < 3 or value % 2 == 0:
        logger.error('{} must be odd and >= 3, got {}'.format(name, value))
        raise ValueError('{} must be an odd integer >= 3.'.format(name))


def median_filter(img, k=3):
    """
    Channelwise k x k median with edge-replicated borders.

    Parameters
    ----------
    img: Image
    k: int
        Odd window size >= 3.

    Returns
    -------
    Image
    """
    _check_odd(k, 'Median kernel size')
    out = np.empty_like(img.data)
    for c in range(img.channels):
        out[:, :, c] = ndimage.median_filter(img.data[:, :, c], size=k,
                                             mode='nearest')
    return Ic.Image(out)


def _adaptive_channel(chan, s_max):
    out = np.array(chan)
    resolved = np.zeros(chan.shape, dtype=bool)
    z_med = chan

    for size in range(3, s_max + 1, 2):
        z_min = ndimage.minimum_filter(chan, size=size, mode='nearest')
        z_max = ndimage.maximum_filter(chan, size=size, mode='nearest')
        z_med = ndimage.median_filter(chan, size=size, mode='nearest')

        # Stage A: median is not an impulse, so decide this pixel now.
        decide = ~resolved & (z_med > z_min) & (z_med < z_max)
        keep = (chan > z_min) & (chan < z_max)
        out[decide] = np.where(keep, chan, z_med)[decide]
        resolved |= decide
        if resolved.all():
            break

    out[~resolved] = z_med[~resolved]
    return out


def adaptive_median_filter(img, s_max=7):
    """
    Textbook two-stage adaptive median filter, channelwise.

    The window grows from 3x3 to s_max x s_max while its median equals the
    window minimum or maximum.  Once the median is not an extreme, the pixel
    is kept if it is not an extreme of that window and replaced by the
    median otherwise.  Pixels whose median stays extreme up to s_max get the
    s_max median.  Borders use edge replication.

    Parameters
    ----------
    img: Image
    s_max: int
        Largest odd window size >= 3.

    Returns
    -------
    Image
    """
    _check_odd(s_max, 'Adaptive median s_max')
    out = np.empty_like(img.data)
    for c in range(img.channels):
        out[:, :, c] = _adaptive_channel(img.data[:, :, c], s_max)
    return Ic.Image(out)


def unet_denoise(weights, img):
    """
    Remove marine snow with a trained U-Net.

    The image is reflect-padded on the bottom and right up to the next
    multiple of 2**depth, run in eval mode and cropped back.

    Parameters
    ----------
    weights: Network or WeightStore
        U-Net weights.
    img: Image
        Grayscale inputs are promoted to RGB.

    Returns
    -------
    Image
        Same height and width as img.
    """
    if isinstance(weights, Mdl.WeightStore):
        net = Mdl.network_from_store(weights, arch='unet')
    else:
        net = weights
        if net.arch != 'unet':
            raise Mdl.FingerprintMismatchError('Expected U-Net weights, '
                                               'found {}'.format(net.arch))

    opts = net.spec.options
    if img.channels != opts['in_channels']:
        img = Ic.to_rgb(img)

    factor = 2 ** opts['depth']
    pad_h = -img.height % factor
    pad_w = -img.width % factor
    x = Ic.image_to_tensor(img)[None]
    if pad_h or pad_w:
        logger.debug('Padding {}x{} input by ({}, {}) for depth {}'.format(
            img.width, img.height, pad_w, pad_h, opts['depth']))
        x = np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)),
                   mode='reflect')

    with T.no_grad():
        y = net.forward(x, training=False).data

    return Ic.tensor_to_image(y[0, :, :img.height, :img.width])


@dataclass
class FilterSpec(object):
    """A restoration method and its size parameter or weights."""
    kind: str
    k: int = 3
    s_max: int = 7
    weights: str = None

    def validate(self):
        problems = []
        if self.kind not in FILTER_KINDS:
            problems.append('restore: unknown filter kind {}'.format(
                self.kind))
        elif self.kind == 'median' and (self.k < 3 or self.k % 2 == 0):
            problems.append('restore: median k must be odd and >= 3')
        elif self.kind == 'adaptive_median' and \
                (self.s_max < 3 or self.s_max % 2 == 0):
            problems.append('restore: s_max must be odd and >= 3')
        elif self.kind == 'unet' and not self.weights:
            problems.append('restore: the unet method needs a weights file')
        return problems

    @classmethod
    def from_method(cls, method, s_max=7, weights=None):
        if method not in METHODS:
            raise ValueError('Unknown denoise method: {}'.format(method))
        kind, k = METHODS[method]
        return cls(kind=kind, k=k if kind == 'median' else 3, s_max=s_max,
                   weights=weights)


class Restorer(object):
    """Applies one FilterSpec to many images, loading weights once."""

    def __init__(self, spec):
        problems = spec.validate()
        if problems:
            logger.error('Invalid filter spec: {}'.format(problems))
            raise ValueError('; '.join(problems))
        self.spec = spec
        self._net = None
        if spec.kind == 'unet':
            self._net = Mdl.load_network(spec.weights, arch='unet')

    def __call__(self, img):
        if self.spec.kind == 'median':
            return median_filter(img, self.spec.k)
        if self.spec.kind == 'adaptive_median':
            return adaptive_median_filter(img, self.spec.s_max)
        return unet_denoise(self._net, img)
