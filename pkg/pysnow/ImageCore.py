"""
Image representation, codecs and geometric primitives.

Images hold normalized intensities in [0, 1] as a (height, width, channels)
float array.  Quantization to 8 bits happens only when reading or writing
files.

Author: pysnow developers
"""

import os
import logging

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import map_coordinates

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = ('.png', '.ppm', '.pgm')

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_EIGHT_BIT_MODES = {'L': 1, 'RGB': 3}
_HIGH_DEPTH_MODES = ('I', 'I;16', 'I;16B', 'I;16L', 'I;16N', 'F')


class ImageDecodeError(ValueError):
    """Raster could not be decoded into an 8-bit gray or RGB image."""


class Image(object):
    """
    Immutable raster of normalized intensities.

    Parameters
    ----------
    data: ndarray
        Array of shape (height, width) or (height, width, channels) with
        channels in {1, 3} and every element in [0, 1].  2D input is treated
        as a single channel.
    """

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64 if np.asarray(data).dtype ==
                       np.float64 else np.float32, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]

        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            logger.error('Image data shape {} is not HxWx1 or HxWx3'
                         ''.format(arr.shape))
            raise ValueError('Image data must have shape (H, W, C) with '
                             'C in {1, 3}.')

        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError('Image must have at least one pixel.')

        if not np.all(np.isfinite(arr)):
            raise ValueError('Image data contains non-finite values.')

        if arr.min() < 0 or arr.max() > 1:
            logger.error('Image values outside [0, 1]: min={:g} max={:g}'
                         ''.format(arr.min(), arr.max()))
            raise ValueError('Image values must lie in [0, 1].')

        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self):
        return self._data

    @property
    def height(self):
        return self._data.shape[0]

    @property
    def width(self):
        return self._data.shape[1]

    @property
    def channels(self):
        return self._data.shape[2]

    @property
    def shape(self):
        return self._data.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (self.shape == other.shape and
                np.array_equal(self._data, other._data))

    def __repr__(self):
        return 'Image(height={}, width={}, channels={})'.format(
            self.height, self.width, self.channels)


class PixelRect(object):
    """Axis-aligned pixel rectangle with top-left offset (x, y)."""

    __slots__ = ('x', 'y', 'w', 'h')

    def __init__(self, x, y, w, h):
        if min(x, y) < 0 or min(w, h) < 1:
            raise ValueError('Invalid rectangle: x={}, y={}, w={}, h={}'
                             ''.format(x, y, w, h))
        self.x = int(x)
        self.y = int(y)
        self.w = int(w)
        self.h = int(h)

    def offset(self, dx, dy):
        return PixelRect(self.x + dx, self.y + dy, self.w, self.h)

    def fits(self, img):
        return self.x + self.w <= img.width and self.y + self.h <= img.height

    def __repr__(self):
        return 'PixelRect(x={}, y={}, w={}, h={})'.format(self.x, self.y,
                                                          self.w, self.h)


def quantize(data):
    """Map [0, 1] intensities to 8-bit samples with round-half-up."""
    data = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    return np.floor(data * 255.0 + 0.5).astype(np.uint8)


def list_images(directory):
    """Sorted list of PNG/PPM/PGM files in a directory."""
    if not os.path.isdir(directory):
        logger.error('Image directory does not exist: {}'.format(directory))
        raise FileNotFoundError('No such directory: {}'.format(directory))

    names = sorted(f for f in os.listdir(directory)
                   if f.lower().endswith(IMAGE_EXTENSIONS))
    return [os.path.join(directory, f) for f in names]


def load_image(path):
    """
    Decode a PNG or binary PPM/PGM file into an Image.

    Parameters
    ----------
    path: str
        Image file path.

    Returns
    -------
    Image
        Samples mapped to [0, 1] by v / 255. Gray stays one channel, RGB
        stays three; alpha is dropped.
    """
    if not os.path.exists(path):
        logger.error('Image file not found: {}'.format(path))
        raise FileNotFoundError('No such image file: {}'.format(path))

    try:
        with PILImage.open(path) as pim:
            pim.load()
            mode = pim.mode
            if mode in _HIGH_DEPTH_MODES:
                raise ImageDecodeError('Unsupported bit depth (mode {}) in '
                                       '{}'.format(mode, path))
            if mode in ('1', 'LA'):
                pim = pim.convert('L')
            elif mode in ('RGBA', 'P', 'CMYK', 'YCbCr'):
                pim = pim.convert('RGB')
            elif mode not in _EIGHT_BIT_MODES:
                raise ImageDecodeError('Unsupported image mode {} in {}'
                                       ''.format(mode, path))
            samples = np.asarray(pim, dtype=np.uint8)
    except ImageDecodeError:
        logger.error('Refusing to decode {}'.format(path))
        raise
    except (OSError, SyntaxError) as e:
        logger.error('Unreadable image file {}: {}'.format(path, e))
        raise ImageDecodeError('Unreadable image file {}'.format(path))

    return Image(samples.astype(np.float32) / 255.0)


def save_image(img, path, format='png'):
    """
    Encode an Image as 8-bit PNG or binary PPM (P6) / PGM (P5).

    Parameters
    ----------
    img: Image
        Image to write.
    path: str
        Destination path.
    format: {'png', 'ppm', 'pgm'}
        Container.  One-channel images written as 'ppm' become PGM; RGB
        images written as 'pgm' are reduced to BT.601 luma first.
    """
    fmt = format.lower()
    if fmt not in ('png', 'ppm', 'pgm'):
        raise ValueError('Unsupported output format: {}'.format(format))
    if fmt == 'pgm' and img.channels == 3:
        logger.debug('Writing RGB image as PGM luma: {}'.format(path))
        img = to_grayscale(img)

    samples = quantize(img.data)
    if img.channels == 1:
        pim = PILImage.fromarray(samples[:, :, 0])
    else:
        pim = PILImage.fromarray(samples)

    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)

    pim.save(path, format='PNG' if fmt == 'png' else 'PPM')
    logger.debug('Wrote {} image to {}'.format(fmt, path))


def crop(img, rect):
    """Copy the pixels inside rect into a new Image."""
    if not rect.fits(img):
        logger.error('{} exceeds image bounds {}x{}'.format(rect, img.width,
                                                           img.height))
        raise ValueError('Crop rectangle out of bounds.')

    return Image(img.data[rect.y:rect.y + rect.h, rect.x:rect.x + rect.w])


def resize_bilinear(img, out_w, out_h):
    """
    Bilinear resampling with corner-aligned sample mapping.

    Output sample i maps to source coordinate i * (in - 1) / (out - 1), so the
    corner samples of input and output coincide.  A one-sample output axis
    maps to source coordinate 0.

    Parameters
    ----------
    img: Image
    out_w, out_h: int
        Output extents, at least 1.

    Returns
    -------
    Image
    """
    if out_w < 1 or out_h < 1:
        raise ValueError('Output extents must be >= 1, got {}x{}'
                         ''.format(out_w, out_h))

    if out_w == img.width and out_h == img.height:
        return img

    rows = _aligned_coords(img.height, out_h)
    cols = _aligned_coords(img.width, out_w)
    grid_r, grid_c = np.meshgrid(rows, cols, indexing='ij')

    src = img.data.astype(np.float64)
    out = np.empty((out_h, out_w, img.channels))
    for c in range(img.channels):
        out[:, :, c] = map_coordinates(src[:, :, c], [grid_r, grid_c],
                                       order=1, mode='nearest')

    return Image(np.clip(out, 0.0, 1.0).astype(img.data.dtype))


def _aligned_coords(n_in, n_out):
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def flip_horizontal(img):
    return Image(img.data[:, ::-1, :])


def to_grayscale(img):
    """BT.601 luma; single-channel input passes through."""
    if img.channels == 1:
        return img
    luma = img.data.astype(np.float64) @ LUMA_WEIGHTS
    return Image(np.clip(luma, 0.0, 1.0).astype(img.data.dtype))


def to_rgb(img):
    if img.channels == 3:
        return img
    return Image(np.repeat(img.data, 3, axis=2))


def image_to_tensor(img, dtype=np.float32):
    """(H, W, C) Image -> (C, H, W) array, values unchanged."""
    return np.ascontiguousarray(img.data.transpose(2, 0, 1), dtype=dtype)


def tensor_to_image(arr):
    """(C, H, W) array -> Image, clamped into [0, 1]."""
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ValueError('Expected a (C, H, W) array, got shape {}'
                         ''.format(arr.shape))
    return Image(np.clip(arr.transpose(1, 2, 0), 0.0, 1.0))
