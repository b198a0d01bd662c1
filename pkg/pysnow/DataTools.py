"""
Paired clean/degraded dataset construction, splitting and batch loading.

Each adequate source image yields four views (three crops plus a full-image
resize), each view is degraded with its own random stream, and both members
of every pair are flipped horizontally, giving eight pairs per source.

Author: pysnow developers
"""

import os
import json
import logging
from dataclasses import dataclass, field, asdict, replace

import numpy as np
import dask
from tqdm import tqdm

from . import ImageCore as Ic
from . import Degrade as Dg
from .SnowUtils import make_rng, dask_scheduler, largest_remainder

logger = logging.getLogger(__name__)

TARGET_SIZE = 384

VIEWS = ('top_left', 'bottom_right', 'center', 'resized')
FLIPS = ('original', 'flipped')
SPLITS = ('train', 'val', 'test')

DEFAULT_FRACTIONS = (0.683, 0.171, 0.146)

MANIFEST_NAME = 'manifest.jsonl'


@dataclass
class PairRecord(object):
    """One clean/distorted pair; paths are relative to the manifest dir."""
    clean_path: str
    distorted_path: str
    recipe_path: str
    source_id: str
    view: str
    flip: str
    split: str = ''


@dataclass
class Manifest(object):
    records: list = field(default_factory=list)
    seed: int = 0
    params: dict = field(default_factory=dict)
    target: int = TARGET_SIZE
    root: str = field(default='', compare=False)

    @property
    def counts(self):
        counts = {name: 0 for name in SPLITS}
        for rec in self.records:
            if rec.split:
                counts[rec.split] += 1
        return counts

    @property
    def source_ids(self):
        """Source ids in order of first appearance."""
        seen = {}
        for rec in self.records:
            seen.setdefault(rec.source_id, None)
        return list(seen)

    def resolve(self, rel_path):
        return os.path.join(self.root, rel_path)

    def select(self, split):
        return [rec for rec in self.records if rec.split == split]

    def summary(self):
        views = {}
        for rec in self.records:
            views[rec.view] = views.get(rec.view, 0) + 1
        lines = ['{:d} pairs from {:d} sources'.format(len(self.records),
                                                      len(self.source_ids))]
        counts = self.counts
        if any(counts.values()):
            lines.append('  splits: ' + ', '.join(
                '{}={:d}'.format(k, counts[k]) for k in SPLITS))
        lines.append('  views: ' + ', '.join(
            '{}={:d}'.format(k, views[k]) for k in VIEWS if k in views))
        return '\n'.join(lines)


def write_manifest(manifest, path):
    """
    Write a manifest as JSON lines: one header object followed by one
    record per line, keys sorted.
    """
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)

    header = {'header': {'seed': manifest.seed,
                         'params': manifest.params,
                         'target': manifest.target,
                         'counts': manifest.counts,
                         'num_records': len(manifest.records)}}
    with open(path, 'w') as f:
        f.write(json.dumps(header, sort_keys=True) + '\n')
        for rec in manifest.records:
            f.write(json.dumps(asdict(rec), sort_keys=True) + '\n')

    logger.debug('Wrote manifest with {:d} records to {}'.format(
        len(manifest.records), path))


def read_manifest(path):
    if not os.path.exists(path):
        logger.error('Manifest not found: {}'.format(path))
        raise FileNotFoundError('No such manifest: {}'.format(path))

    with open(path, 'r') as f:
        lines = [line for line in f if line.strip()]

    if not lines:
        raise ValueError('Empty manifest file: {}'.format(path))

    try:
        header = json.loads(lines[0])['header']
        records = [PairRecord(**json.loads(line)) for line in lines[1:]]
    except (KeyError, TypeError, ValueError) as e:
        logger.error('Malformed manifest {}: {}'.format(path, e))
        raise ValueError('Malformed manifest file: {}'.format(path))

    if header.get('num_records', len(records)) != len(records):
        raise ValueError('Manifest {} is truncated: header lists {} records, '
                         'found {}'.format(path, header['num_records'],
                                           len(records)))

    return Manifest(records=records, seed=header['seed'],
                    params=header['params'], target=header['target'],
                    root=os.path.dirname(os.path.abspath(path)))


def derive_views(src, target=TARGET_SIZE):
    """
    Derive the training views of one source image.

    Parameters
    ----------
    src: Image
        Source image.
    target: int, optional
        Side length of the square views.

    Returns
    -------
    list of (str, Image)
        (view name, view) for top-left, bottom-right and center crops plus
        the full-image resize.  Sources smaller than target on either side
        contribute only the resized view.
    """
    if target < 1:
        raise ValueError('Target size must be >= 1.')

    resized = Ic.resize_bilinear(src, target, target)
    if src.height < target or src.width < target:
        logger.debug('Source {}x{} below {}; resized view only'.format(
            src.width, src.height, target))
        return [('resized', resized)]

    right = src.width - target
    bottom = src.height - target
    rects = [('top_left', Ic.PixelRect(0, 0, target, target)),
             ('bottom_right', Ic.PixelRect(right, bottom, target, target)),
             ('center', Ic.PixelRect(right // 2, bottom // 2, target,
                                     target))]

    views = [(name, Ic.crop(src, rect)) for name, rect in rects]
    views.append(('resized', resized))
    return views


def _build_source(source_idx, path, patchset, params, out_dir, seed, target,
                  pbar=None):
    src = Ic.to_rgb(Ic.load_image(path))
    source_id = os.path.basename(path)
    stem = '{:05d}'.format(source_idx)

    records = []
    for name, view in derive_views(src, target):
        view_idx = VIEWS.index(name)
        distorted, recipe = Dg.degrade(view, patchset, params,
                                       (seed, source_idx, view_idx))

        recipe_rel = os.path.join('recipes', '{}_{}.json'.format(stem, name))
        Dg.save_recipe(recipe, os.path.join(out_dir, recipe_rel))

        pair = {'original': (view, distorted),
                'flipped': (Ic.flip_horizontal(view),
                            Ic.flip_horizontal(distorted))}
        for flip in FLIPS:
            clean_img, dist_img = pair[flip]
            fname = '{}_{}_{}.png'.format(stem, name, flip)
            clean_rel = os.path.join('clean', fname)
            dist_rel = os.path.join('distorted', fname)
            Ic.save_image(clean_img, os.path.join(out_dir, clean_rel))
            Ic.save_image(dist_img, os.path.join(out_dir, dist_rel))
            records.append(PairRecord(clean_path=clean_rel,
                                      distorted_path=dist_rel,
                                      recipe_path=recipe_rel,
                                      source_id=source_id,
                                      view=name, flip=flip))

    if pbar is not None:
        pbar.update(1)
    return records


def build_dataset(src_dir, patchset, params, out_dir, seed, target=TARGET_SIZE,
                  deterministic=True, threads=1, progress=True):
    """
    Build the paired dataset from every image in src_dir.

    Parameters
    ----------
    src_dir: str
        Directory of clean source images.
    patchset: PatchSet
        Marine-snow patches to composite.
    params: DegradeParams
        Degradation settings.
    out_dir: str
        Output directory; receives clean/, distorted/, recipes/ and the
        manifest.
    seed: int
        Dataset seed; view v of source s uses stream (seed, s, v).
    target: int, optional
        Side length of the views.
    deterministic: bool, optional
        Run source tasks sequentially.
    threads: int, optional
        Worker threads when not deterministic.
    progress: bool, optional
        Show a progress bar on stderr.

    Returns
    -------
    Manifest
        Records in source order with no split assigned.
    """
    problems = params.validate()
    if problems:
        logger.error('Invalid degrade parameters: {}'.format(problems))
        raise ValueError('; '.join(problems))

    paths = Ic.list_images(src_dir)
    if not paths:
        logger.error('Source directory {} holds no images'.format(src_dir))
        raise ValueError('Source directory is empty: {}'.format(src_dir))

    for sub in ('clean', 'distorted', 'recipes'):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    logger.info('Building dataset from {:d} sources in {}'.format(len(paths),
                                                                 src_dir))

    with tqdm(total=len(paths), desc='build-dataset', unit='src',
              disable=not progress) as pbar:
        tasks = [dask.delayed(_build_source)(i, path, patchset, params,
                                             out_dir, seed, target, pbar)
                 for i, path in enumerate(paths)]
        results = dask.compute(*tasks,
                               **dask_scheduler(deterministic, threads))

    records = [rec for source_records in results for rec in source_records]
    snapshot = params.to_dict()
    snapshot['patch_source'] = patchset.source
    snapshot['num_patches'] = len(patchset)

    manifest = Manifest(records=records, seed=int(seed), params=snapshot,
                        target=int(target),
                        root=os.path.abspath(out_dir))
    write_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    logger.info('Dataset holds {:d} pairs'.format(len(records)))
    return manifest


def split(manifest, fractions=DEFAULT_FRACTIONS, seed=0):
    """
    Assign train/val/test splits by source image.

    Sources are shuffled with the seed and apportioned with the
    largest-remainder rule, so all pairs of a source share one split.

    Parameters
    ----------
    manifest: Manifest
    fractions: sequence of 3 float, optional
        Train, validation and test fractions summing to 1.
    seed: int, optional

    Returns
    -------
    Manifest
        Copy with every record's split set.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != len(SPLITS) or min(fractions) < 0:
        raise ValueError('Need three non-negative split fractions.')
    if abs(sum(fractions) - 1.0) > 1e-6:
        logger.error('Split fractions {} sum to {}'.format(fractions,
                                                           sum(fractions)))
        raise ValueError('Split fractions must sum to 1.')

    sources = manifest.source_ids
    counts = largest_remainder(len(sources), fractions)
    order = make_rng(seed).permutation(len(sources))

    assignment = {}
    start = 0
    for name, count in zip(SPLITS, counts):
        for i in order[start:start + count]:
            assignment[sources[i]] = name
        start += count

    logger.info('Split {:d} sources: train={:d}, val={:d}, test={:d}'
                ''.format(len(sources), *counts))

    records = [replace(rec, split=assignment[rec.source_id])
               for rec in manifest.records]
    return replace(manifest, records=records)


def _load_pair(manifest, rec):
    clean = Ic.load_image(manifest.resolve(rec.clean_path))
    distorted = Ic.load_image(manifest.resolve(rec.distorted_path))
    return Ic.image_to_tensor(clean), Ic.image_to_tensor(distorted)


def load_batches(manifest, split, batch_size, shuffle_seed=None,
                 threads=1):
    """
    Iterate over (clean, distorted) batches of one split.

    Parameters
    ----------
    manifest: Manifest
    split: str
        'train', 'val' or 'test'.
    batch_size: int
    shuffle_seed: int or tuple of int, optional
        Permute the records with this seed (or stream key); None keeps
        manifest order.
    threads: int, optional
        Decoding threads per batch.

    Yields
    ------
    clean, distorted: ndarray
        float32 arrays of shape (batch, channels, height, width) in [0, 1].
        The final batch may be partial.
    """
    if batch_size < 1:
        raise ValueError('Batch size must be >= 1.')
    if split not in SPLITS:
        raise ValueError('Unknown split: {}'.format(split))

    records = manifest.select(split)
    if not records:
        logger.warning('Split {} holds no pairs'.format(split))
        return

    missing = [p for rec in records
               for p in (rec.clean_path, rec.distorted_path)
               if not os.path.exists(manifest.resolve(p))]
    if missing:
        logger.error('{:d} files referenced by the manifest are missing, '
                     'e.g. {}'.format(len(missing), missing[0]))
        raise FileNotFoundError('Missing dataset file: {}'.format(
            manifest.resolve(missing[0])))

    if shuffle_seed is None:
        order = np.arange(len(records))
    else:
        key = tuple(shuffle_seed) if isinstance(shuffle_seed, (tuple, list)) \
            else (shuffle_seed,)
        order = make_rng(*key).permutation(len(records))

    scheduler = dask_scheduler(threads <= 1, threads)
    for start in range(0, len(order), batch_size):
        batch = [records[i] for i in order[start:start + batch_size]]
        pairs = dask.compute(*[dask.delayed(_load_pair)(manifest, rec)
                               for rec in batch], **scheduler)
        clean = np.stack([p[0] for p in pairs])
        distorted = np.stack([p[1] for p in pairs])
        yield clean, distorted
