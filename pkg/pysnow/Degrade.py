"""
Marine-snow degradation model.

A clean image I is degraded by additively compositing N resized snow patches
with per-patch attenuation and clipping at 1,

    J = min(1, I + sum_i tau_i * P_i),

followed by impulse (salt), Gaussian and Poisson noise, applied in that
order.  Every stage keeps intensities in [0, 1].

Author: pysnow developers
"""

import os
import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import numexpr as ne

from . import ImageCore as Ic
from .SnowUtils import make_rng

logger = logging.getLogger(__name__)

PATCH_SIZE = 32

PATCH_SOURCES = ('loaded', 'generated', 'procedural')


@dataclass(frozen=True)
class Placement(object):
    patch_index: int
    x: int
    y: int
    m: int
    tau: float


@dataclass
class DegradeParams(object):
    """
    Sampling ranges and noise levels for the degradation pipeline.

    Ranges are inclusive except tau, which is drawn from (tau_min, tau_max].
    Setting a noise parameter to 0 disables that stage.
    """
    n_min: int = 1
    n_max: int = 200
    tau_min: float = 0.5
    tau_max: float = 1.5
    m_min: int = 4
    m_max: int = 32
    impulse_density: float = 0.001
    gaussian_sigma: float = 10.0 / 255.0
    poisson_lambda: float = 0.2

    def validate(self):
        problems = []
        if not 0 <= self.n_min <= self.n_max:
            problems.append('degrade: need 0 <= n_min <= n_max '
                            '(got {}, {})'.format(self.n_min, self.n_max))
        if not 0 < self.tau_min <= self.tau_max:
            problems.append('degrade: need 0 < tau_min <= tau_max '
                            '(got {}, {})'.format(self.tau_min, self.tau_max))
        if not 1 <= self.m_min <= self.m_max:
            problems.append('degrade: need 1 <= m_min <= m_max '
                            '(got {}, {})'.format(self.m_min, self.m_max))
        if not 0 <= self.impulse_density <= 1:
            problems.append('degrade: impulse_density must lie in [0, 1]')
        if self.gaussian_sigma < 0:
            problems.append('degrade: gaussian_sigma must be >= 0')
        if self.poisson_lambda < 0:
            problems.append('degrade: poisson_lambda must be >= 0')
        return problems

    @classmethod
    def from_dict(cls, values):
        known = {k: v for k, v in values.items()
                 if k in cls.__dataclass_fields__}
        unknown = set(values) - set(known)
        if unknown:
            logger.warning('Ignoring unknown degrade keys: {}'
                           ''.format(sorted(unknown)))
        return cls(**known)

    def to_dict(self):
        return asdict(self)


def seed_key(seed):
    """(seed, stream...) key as a list of ints; a bare int is a 1-key."""
    if isinstance(seed, (tuple, list)):
        if not seed:
            raise ValueError('A seed key needs at least the root seed.')
        return [int(s) for s in seed]
    return [int(seed)]


@dataclass
class DegradeRecipe(object):
    """
    Sampled placement plan plus the noise settings it was drawn with.

    seed holds the whole stream key, so make_rng(*recipe.seed) replays the
    draws that produced the image.
    """
    placements: list = field(default_factory=list)
    impulse_density: float = 0.0
    gaussian_sigma: float = 0.0
    poisson_lambda: float = 0.0
    seed: list = field(default_factory=lambda: [0])

    def to_dict(self):
        out = asdict(self)
        out['placements'] = [asdict(p) for p in self.placements]
        return out

    @classmethod
    def from_dict(cls, values):
        values = dict(values)
        values['placements'] = [Placement(**p) for p in
                                values.get('placements', [])]
        if 'seed' in values:
            values['seed'] = seed_key(values['seed'])
        return cls(**values)


def save_recipe(recipe, path):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(recipe.to_dict(), f, sort_keys=True)
        f.write('\n')


def load_recipe(path):
    with open(path, 'r') as f:
        return DegradeRecipe.from_dict(json.load(f))


class PatchSet(object):
    """
    Collection of 32x32 grayscale marine-snow patches in [0, 1].

    Parameters
    ----------
    patches: ndarray
        Array of shape (n, 32, 32).
    source: str
        One of 'loaded', 'generated' or 'procedural'.
    """

    def __init__(self, patches, source='loaded'):
        patches = np.asarray(patches, dtype=np.float32)
        if patches.ndim != 3 or patches.shape[1:] != (PATCH_SIZE, PATCH_SIZE):
            logger.error('Patch array shape {} is not (n, 32, 32)'
                         ''.format(patches.shape))
            raise ValueError('Patches must have shape (n, 32, 32).')
        if patches.shape[0] == 0:
            raise ValueError('A patch set must not be empty.')
        if patches.min() < 0 or patches.max() > 1:
            raise ValueError('Patch values must lie in [0, 1].')
        if source not in PATCH_SOURCES:
            raise ValueError('Unknown patch source: {}'.format(source))

        patches.setflags(write=False)
        self.patches = patches
        self.source = source

    def __len__(self):
        return self.patches.shape[0]

    def __getitem__(self, idx):
        return Ic.Image(self.patches[idx])

    @classmethod
    def from_directory(cls, directory):
        """
        Load every PNG/PPM/PGM patch in a directory, sorted by filename.
        RGB patches are converted to luma and other sizes resized to 32x32.
        """
        paths = Ic.list_images(directory)
        if not paths:
            logger.error('No patch images found in {}'.format(directory))
            raise ValueError('Patch directory is empty: {}'.format(directory))

        logger.info('Loading {:d} snow patches from {}'.format(len(paths),
                                                              directory))
        patches = []
        for path in paths:
            img = Ic.to_grayscale(Ic.load_image(path))
            if img.height != PATCH_SIZE or img.width != PATCH_SIZE:
                img = Ic.resize_bilinear(img, PATCH_SIZE, PATCH_SIZE)
            patches.append(img.data[:, :, 0])

        return cls(np.stack(patches), source='loaded')

    @classmethod
    def procedural(cls, n, seed):
        """
        Gaussian-blob placeholder patches: one bright blob per patch with a
        random center, width and peak brightness.
        """
        if n < 1:
            raise ValueError('Number of patches must be >= 1.')

        rng = make_rng(seed)
        coords = np.arange(PATCH_SIZE) - (PATCH_SIZE - 1) / 2.0
        yy, xx = np.meshgrid(coords, coords, indexing='ij')
        patches = np.empty((n, PATCH_SIZE, PATCH_SIZE), dtype=np.float32)
        for i in range(n):
            cy, cx = rng.uniform(-4, 4, size=2)
            width = rng.uniform(2.0, 7.0)
            peak = rng.uniform(0.6, 1.0)
            blob = peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) /
                                 (2 * width ** 2))
            patches[i] = np.clip(blob, 0, 1)

        return cls(patches, source='procedural')

    def save(self, directory):
        """Write every patch as snow_<index>.png; returns the paths."""
        os.makedirs(directory, exist_ok=True)
        paths = []
        for i in range(len(self)):
            path = os.path.join(directory, 'snow_{:05d}.png'.format(i))
            Ic.save_image(self[i], path, format='png')
            paths.append(path)
        return paths


def sample_recipe(rng, params, height, width, num_patches, seed=0):
    """
    Draw a placement plan for a height x width target.

    N ~ UniformInt(n_min, n_max), tau ~ Uniform(tau_min, tau_max],
    m ~ UniformInt(m_min, m_max) and the top-left corner uniform over the
    positions that keep the whole m x m patch inside the target.

    Parameters
    ----------
    rng: numpy.random.Generator
    params: DegradeParams
    height, width: int
        Target image extents.
    num_patches: int
        Size of the patch set indices are drawn from.
    seed: int or tuple of int, optional
        Stream key recorded in the recipe for provenance.

    Returns
    -------
    DegradeRecipe
    """
    if min(height, width) < params.m_max:
        logger.error('Target {}x{} smaller than the largest patch size {}'
                     ''.format(width, height, params.m_max))
        raise ValueError('Target image smaller than the maximum patch size.')
    if num_patches < 1:
        raise ValueError('Cannot sample placements from an empty patch set.')

    n = int(rng.integers(params.n_min, params.n_max + 1))
    placements = []
    for _ in range(n):
        idx = int(rng.integers(0, num_patches))
        m = int(rng.integers(params.m_min, params.m_max + 1))
        # (tau_min, tau_max]
        tau = float(params.tau_max -
                    rng.uniform(0.0, params.tau_max - params.tau_min))
        x = int(rng.integers(0, width - m + 1))
        y = int(rng.integers(0, height - m + 1))
        placements.append(Placement(idx, x, y, m, tau))

    return DegradeRecipe(placements=placements,
                         impulse_density=params.impulse_density,
                         gaussian_sigma=params.gaussian_sigma,
                         poisson_lambda=params.poisson_lambda,
                         seed=seed_key(seed))


def composite(img, patchset, recipe):
    """
    Additively composite the recipe's patches onto img and clip at 1.

    Each patch is resized to m x m, replicated across channels, scaled by
    tau and accumulated; the per-pixel minimum with 1 is taken once, after
    all placements.
    """
    snow = np.zeros(img.shape[:2], dtype=np.float64)
    resized = {}
    for p in recipe.placements:
        if p.x < 0 or p.y < 0 or p.x + p.m > img.width or \
                p.y + p.m > img.height:
            logger.error('Placement {} outside {}x{} image'.format(
                p, img.width, img.height))
            raise ValueError('Recipe placement out of bounds.')

        key = (p.patch_index, p.m)
        if key not in resized:
            patch = patchset[p.patch_index]
            resized[key] = Ic.resize_bilinear(patch, p.m, p.m).data[:, :, 0]
        snow[p.y:p.y + p.m, p.x:p.x + p.m] += p.tau * resized[key]

    base = img.data.astype(np.float64)
    snow = np.repeat(snow[:, :, None], img.channels, axis=2)
    out = ne.evaluate('where(base + snow > 1.0, 1.0, base + snow)')
    return Ic.Image(out)


def impulse_noise(img, density, rng):
    """Set each pixel location to 1.0 on all channels with prob. density."""
    if not 0 <= density <= 1:
        raise ValueError('Impulse density must lie in [0, 1].')
    if density == 0:
        return img

    hit = rng.random(img.shape[:2]) < density
    out = np.array(img.data)
    out[hit] = 1.0
    return Ic.Image(out)


def gaussian_noise(img, sigma, rng):
    """Add i.i.d. N(0, sigma^2) to every sample and clamp to [0, 1]."""
    if sigma < 0:
        raise ValueError('Gaussian sigma must be >= 0.')
    if sigma == 0:
        return img

    base = img.data.astype(np.float64)
    noise = rng.normal(0.0, sigma, size=img.shape)
    return Ic.Image(_clamp(ne.evaluate('base + noise')))


def poisson_noise(img, lam, rng):
    """
    Mean-preserving Poisson noise y = lam * Poisson(x / lam), clamped.

    The variance is lam * x, so the noise vanishes as lam -> 0.
    """
    if not lam > 0:
        logger.error('Poisson lambda must be > 0, got {}'.format(lam))
        raise ValueError('Poisson lambda must be > 0.')

    base = img.data.astype(np.float64)
    draws = rng.poisson(base / lam)
    return Ic.Image(_clamp(lam * draws))


def _clamp(arr):
    return np.clip(arr, 0.0, 1.0)


def degrade(img, patchset, params, seed):
    """
    Full pipeline: composite -> impulse -> Gaussian -> Poisson -> clamp.

    Parameters
    ----------
    img: Image
        Clean image.
    patchset: PatchSet
    params: DegradeParams
    seed: int or tuple of int
        Seed, or (seed, stream...) key, for the image's random stream.

    Returns
    -------
    J: Image
        Degraded image.
    recipe: DegradeRecipe
        The sampled plan, for provenance.
    """
    key = seed_key(seed)
    rng = make_rng(*key)

    recipe = sample_recipe(rng, params, img.height, img.width, len(patchset),
                           seed=key)
    out = composite(img, patchset, recipe)
    out = impulse_noise(out, params.impulse_density, rng)
    out = gaussian_noise(out, params.gaussian_sigma, rng)
    if params.poisson_lambda > 0:
        out = poisson_noise(out, params.poisson_lambda, rng)

    return Ic.Image(_clamp(out.data)), recipe
