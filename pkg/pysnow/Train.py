"""
Training loops for the WGAN marine-snow patch generator and the U-Net
remover, with per-epoch loss history and checkpointing.

Author: pysnow developers
"""

import os
import time
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd
from tqdm import tqdm

from . import Tensor as T
from . import Models as Mdl
from . import DataTools as Dt
from .Degrade import PatchSet
from .SnowUtils import make_rng

logger = logging.getLogger(__name__)

WGAN_LOSSES = ('critic_loss', 'generator_loss')
UNET_LOSSES = ('train_loss', 'val_loss')


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss."""


class _ConfigBase(object):

    @classmethod
    def from_dict(cls, values):
        known = {k: v for k, v in values.items()
                 if k in cls.__dataclass_fields__}
        unknown = set(values) - set(known)
        if unknown:
            logger.warning('Ignoring unknown {} keys: {}'.format(
                cls.__name__, sorted(unknown)))
        return cls(**known)

    def to_dict(self):
        return asdict(self)

    def _common_problems(self, prefix):
        problems = []
        if self.epochs < 1:
            problems.append('{}: epochs must be >= 1'.format(prefix))
        if self.batch_size < 1:
            problems.append('{}: batch_size must be >= 1'.format(prefix))
        if not self.learning_rate > 0:
            problems.append('{}: learning_rate must be > 0'.format(prefix))
        if self.max_steps is not None and self.max_steps < 1:
            problems.append('{}: max_steps must be >= 1'.format(prefix))
        if self.checkpoint_every < 0:
            problems.append('{}: checkpoint_every must be >= 0'.format(
                prefix))
        return problems


@dataclass
class WGANConfig(_ConfigBase):
    """
    WGAN settings.  max_steps caps the number of generator updates; each
    generator update follows n_critic critic updates.
    """
    epochs: int = 1
    batch_size: int = 64
    seed: int = 0
    optimizer: str = 'rmsprop'
    learning_rate: float = 5e-5
    n_critic: int = 5
    clip: float = 0.01
    z_dim: int = 100
    generator_channels: int = 128
    critic_channels: int = 32
    max_steps: int = None
    checkpoint_every: int = 0
    deterministic: bool = True

    def validate(self):
        problems = self._common_problems('train_gan')
        if self.optimizer not in ('rmsprop', 'adam'):
            problems.append('train_gan: optimizer must be rmsprop or adam')
        if self.n_critic < 1:
            problems.append('train_gan: n_critic must be >= 1')
        if not self.clip > 0:
            problems.append('train_gan: clip must be > 0')
        if self.z_dim < 1:
            problems.append('train_gan: z_dim must be >= 1')
        if self.generator_channels < 4 or self.generator_channels % 4:
            problems.append('train_gan: generator_channels must be a '
                            'positive multiple of 4')
        if self.critic_channels < 1:
            problems.append('train_gan: critic_channels must be >= 1')
        return problems


@dataclass
class UNetConfig(_ConfigBase):
    """U-Net settings; gamma weights the perceptual term."""
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    gamma: float = 1.0
    depth: int = 4
    base_channels: int = 16
    feature_seed: int = 0
    max_steps: int = None
    checkpoint_every: int = 0
    deterministic: bool = True
    threads: int = 1

    def validate(self):
        problems = self._common_problems('train_unet')
        if self.gamma < 0:
            problems.append('train_unet: gamma must be >= 0')
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            problems.append('train_unet: beta1 and beta2 must lie in [0, 1)')
        if not self.eps > 0:
            problems.append('train_unet: eps must be > 0')
        if self.depth < 1 or self.base_channels < 1:
            problems.append('train_unet: depth and base_channels must be '
                            '>= 1')
        return problems


def _check_config(cfg):
    problems = cfg.validate()
    if problems:
        logger.error('Invalid training configuration: {}'.format(problems))
        raise ValueError('; '.join(problems))


@dataclass
class History(object):
    """
    Per-epoch loss records; loss_names labels the two loss columns.

    Columns named in optional may hold NaN for an epoch in which that loss
    was not measured, e.g. a WGAN epoch shorter than n_critic batches has
    no generator update.  Infinite values are always rejected.
    """
    loss_names: tuple = UNET_LOSSES
    records: list = field(default_factory=list)
    optional: tuple = field(default=(), compare=False)

    def append(self, epoch, first, second, seconds):
        for name, value in zip(self.loss_names, (first, second)):
            if name in self.optional and np.isnan(value):
                continue
            if not np.isfinite(value):
                raise NonFiniteLossError('Non-finite {} in epoch {:d}'.format(
                    name, epoch))
        self.records.append({'epoch': int(epoch),
                             self.loss_names[0]: float(first),
                             self.loss_names[1]: float(second),
                             'seconds': float(seconds)})

    def column(self, name):
        return [rec[name] for rec in self.records]

    @property
    def columns(self):
        return ['epoch'] + list(self.loss_names) + ['seconds']

    def __len__(self):
        return len(self.records)


def export_history(history, path):
    """Write the history as CSV: epoch, the two loss columns, seconds."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    frame = pd.DataFrame(history.records, columns=history.columns)
    frame.to_csv(path, index=False, float_format='%.17g')


def read_history(path):
    frame = pd.read_csv(path)
    if len(frame.columns) != 4 or frame.columns[0] != 'epoch' or \
            frame.columns[-1] != 'seconds':
        logger.error('Unexpected history columns in {}: {}'.format(
            path, list(frame.columns)))
        raise ValueError('Not a loss history file: {}'.format(path))

    names = tuple(frame.columns[1:3])
    history = History(loss_names=names,
                      optional=tuple(n for n in names
                                     if frame[n].isna().any()))
    for row in frame.itertuples(index=False):
        history.records.append({'epoch': int(row[0]),
                                history.loss_names[0]: float(row[1]),
                                history.loss_names[1]: float(row[2]),
                                'seconds': float(row[3])})
    return history


def _finite(loss, what, step):
    value = loss.item()
    if not np.isfinite(value):
        logger.error('{} became {} at step {:d}'.format(what, value, step))
        raise NonFiniteLossError('Non-finite {} at step {:d}; aborting.'
                                 ''.format(what, step))
    return value


def _optimizer_step(cfg_optimizer, net, state, lr):
    params = net.parameters()
    arrays = [p.data for p in params]
    grads = [p.grad for p in params]
    if cfg_optimizer == 'adam':
        T.adam_step(arrays, grads, state, lr=lr)
    else:
        T.rmsprop_step(arrays, grads, state, lr=lr)


def _checkpoint(net, run_dir, fname):
    if run_dir is None:
        return
    Mdl.save_weights(net.to_store(), os.path.join(run_dir, fname))


def train_wgan(patches, cfg, run_dir=None, on_step=None, progress=False):
    """
    Train the patch generator against a weight-clipped critic.

    Every batch drives one critic update (minimizing the Wasserstein critic
    loss, followed by weight clipping); every n_critic critic updates are
    followed by one generator update.  Real patches are mapped from [0, 1]
    to [-1, 1].

    Parameters
    ----------
    patches: PatchSet or ndarray
        Real 32x32 patches in [0, 1].
    cfg: WGANConfig
    run_dir: str, optional
        Receives epoch_<k>.msnw generator checkpoints, generator.msnw,
        critic.msnw and history.csv.
    on_step: callable, optional
        Called as on_step(kind, step, generator, critic) after every update,
        kind being 'critic' or 'generator'.
    progress: bool, optional
        Show a progress bar on stderr.

    Returns
    -------
    generator: WeightStore
    critic: WeightStore
    history: History
    """
    _check_config(cfg)
    if isinstance(patches, PatchSet):
        patches = patches.patches
    patches = np.asarray(patches, dtype=np.float32)
    if patches.ndim != 3 or patches.shape[0] == 0 or \
            patches.shape[1:] != (32, 32):
        logger.error('WGAN training needs a non-empty (n, 32, 32) patch '
                     'array, got {}'.format(patches.shape))
        raise ValueError('Empty or malformed patch dataset.')

    real = (patches[:, None] * 2.0 - 1.0).astype(np.float32)
    n = real.shape[0]

    rng = make_rng(cfg.seed)
    generator = Mdl.Network(Mdl.build_generator(cfg.generator_channels,
                                                cfg.z_dim), seed=cfg.seed)
    critic = Mdl.Network(Mdl.build_critic(cfg.critic_channels),
                         seed=cfg.seed + 1)
    critic_arrays = [p.data for p in critic.parameters()]
    T.clip_weights(critic_arrays, cfg.clip)

    g_state = T.OptimizerState(cfg.optimizer)
    c_state = T.OptimizerState(cfg.optimizer)
    history = History(loss_names=WGAN_LOSSES, optional=WGAN_LOSSES[1:])

    logger.info('Training WGAN on {:d} patches: generator {:d} params, '
                'critic {:d} params'.format(n, generator.num_parameters(),
                                            critic.num_parameters()))

    critic_steps = 0
    gen_steps = 0
    done = False
    total = cfg.max_steps * cfg.n_critic if cfg.max_steps else \
        cfg.epochs * int(np.ceil(n / cfg.batch_size))

    with tqdm(total=total, desc='train-gan', unit='step',
              disable=not progress) as pbar:
        for epoch in range(1, cfg.epochs + 1):
            start_time = time.time()
            c_losses, g_losses = [], []
            order = rng.permutation(n)

            for start in range(0, n, cfg.batch_size):
                batch = real[order[start:start + cfg.batch_size]]
                m = batch.shape[0]

                z = rng.standard_normal((m, cfg.z_dim)).astype(np.float32)
                with T.no_grad():
                    fake = generator.forward(z, training=True).data
                d_fake = critic.forward(fake, training=True, rng=rng)
                d_real = critic.forward(batch, training=True, rng=rng)
                loss = T.critic_loss(d_fake, d_real)
                c_losses.append(_finite(loss, 'critic loss', critic_steps))

                critic.zero_grad()
                loss.backward()
                _optimizer_step(cfg.optimizer, critic, c_state,
                                cfg.learning_rate)
                T.clip_weights(critic_arrays, cfg.clip)
                critic_steps += 1
                pbar.update(1)
                if on_step is not None:
                    on_step('critic', critic_steps, generator, critic)

                if critic_steps % cfg.n_critic:
                    continue

                z = rng.standard_normal((m, cfg.z_dim)).astype(np.float32)
                fake = generator.forward(z, training=True)
                g_loss = T.generator_loss(critic.forward(fake, training=True,
                                                         rng=rng))
                g_losses.append(_finite(g_loss, 'generator loss', gen_steps))

                generator.zero_grad()
                g_loss.backward()
                _optimizer_step(cfg.optimizer, generator, g_state,
                                cfg.learning_rate)
                gen_steps += 1
                if on_step is not None:
                    on_step('generator', gen_steps, generator, critic)

                if cfg.max_steps and gen_steps >= cfg.max_steps:
                    done = True
                    break

            # NaN marks an epoch without a generator update
            g_mean = np.mean(g_losses) if g_losses else np.nan
            history.append(epoch, np.mean(c_losses), g_mean,
                           time.time() - start_time)
            logger.info('epoch {:d}: critic {:.5f} generator {:.5f}'.format(
                epoch, np.mean(c_losses), g_mean))

            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                _checkpoint(generator, run_dir, 'epoch_{:d}.msnw'.format(
                    epoch))
            if done:
                break

    if run_dir is not None:
        _checkpoint(generator, run_dir, 'generator.msnw')
        _checkpoint(critic, run_dir, 'critic.msnw')
        export_history(history, os.path.join(run_dir, 'history.csv'))

    return generator.to_store(), critic.to_store(), history


def _unet_loss(net, clean, distorted, phi, gamma, training):
    y_hat = net.forward(distorted, training=training)
    return T.combined_loss(T.Tensor(clean), y_hat, phi, gamma)


def evaluate_unet(net, batches, phi, gamma):
    """Mean combined loss over batches in eval mode, without a graph."""
    total, count = 0.0, 0
    with T.no_grad():
        for clean, distorted in batches:
            loss = _unet_loss(net, clean, distorted, phi, gamma, False)
            total += loss.item() * clean.shape[0]
            count += clean.shape[0]
    if count == 0:
        raise ValueError('No validation pairs to evaluate.')
    return total / count


def _fit_unet(train_batches, val_batches, cfg, phi, run_dir, progress):
    net = Mdl.Network(Mdl.build_unet(cfg.depth, cfg.base_channels),
                      seed=cfg.seed)
    if phi is None and cfg.gamma > 0:
        phi = Mdl.build_feature_net(cfg.feature_seed)

    state = T.OptimizerState('adam')
    history = History(loss_names=UNET_LOSSES)
    best_loss = np.inf
    best_store = None
    steps = 0
    done = False

    logger.info('Training U-Net (depth {:d}, base {:d}, {:d} params), '
                'gamma={}'.format(cfg.depth, cfg.base_channels,
                                  net.num_parameters(), cfg.gamma))

    with tqdm(total=cfg.max_steps, desc='train-unet', unit='step',
              disable=not progress) as pbar:
        for epoch in range(1, cfg.epochs + 1):
            start_time = time.time()
            total, count = 0.0, 0

            for clean, distorted in train_batches(epoch):
                loss = _unet_loss(net, clean, distorted, phi, cfg.gamma,
                                  True)
                value = _finite(loss, 'training loss', steps)
                net.zero_grad()
                loss.backward()
                params = net.parameters()
                T.adam_step([p.data for p in params],
                            [p.grad for p in params], state,
                            lr=cfg.learning_rate, beta1=cfg.beta1,
                            beta2=cfg.beta2, eps=cfg.eps)
                steps += 1
                pbar.update(1)
                total += value * clean.shape[0]
                count += clean.shape[0]
                if cfg.max_steps and steps >= cfg.max_steps:
                    done = True
                    break

            if count == 0:
                raise ValueError('Training split holds no pairs.')

            train_loss = total / count
            val_loss = evaluate_unet(net, val_batches(), phi, cfg.gamma)
            history.append(epoch, train_loss, val_loss,
                           time.time() - start_time)
            logger.info('epoch {:d}: train {:.6f} val {:.6f}'.format(
                epoch, train_loss, val_loss))

            if val_loss < best_loss:
                best_loss = val_loss
                best_store = net.to_store()
                if run_dir is not None:
                    Mdl.save_weights(best_store,
                                     os.path.join(run_dir, 'best.msnw'))
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                _checkpoint(net, run_dir, 'epoch_{:d}.msnw'.format(epoch))
            if done:
                break

    if run_dir is not None:
        export_history(history, os.path.join(run_dir, 'history.csv'))
    return best_store, history


def train_unet(manifest, cfg, phi=None, run_dir=None, progress=False):
    """
    Train the U-Net remover on a split manifest.

    Minimizes L_MSE + gamma * L_p with Adam; the train split is reshuffled
    every epoch from (seed, epoch) and the validation loss is evaluated in
    eval mode after every epoch.

    Parameters
    ----------
    manifest: Manifest
        Must hold train and val pairs.
    cfg: UNetConfig
    phi: Network, optional
        Frozen feature extractor; built from cfg.feature_seed if omitted.
    run_dir: str, optional
        Receives best.msnw, epoch_<k>.msnw and history.csv.

    Returns
    -------
    best: WeightStore
        Weights with the lowest validation loss.
    history: History
    """
    _check_config(cfg)
    for name in ('train', 'val'):
        if not manifest.select(name):
            logger.error('Manifest has no {} pairs'.format(name))
            raise ValueError('Manifest split {} is empty.'.format(name))

    def train_batches(epoch):
        return Dt.load_batches(manifest, 'train', cfg.batch_size,
                               shuffle_seed=(cfg.seed, epoch),
                               threads=1 if cfg.deterministic
                               else cfg.threads)

    def val_batches():
        return Dt.load_batches(manifest, 'val', cfg.batch_size)

    return _fit_unet(train_batches, val_batches, cfg, phi, run_dir, progress)


def train_unet_on_arrays(clean, distorted, cfg, phi=None, val=None,
                         run_dir=None, progress=False):
    """
    Train the U-Net on in-memory (N, C, H, W) arrays.

    val is an optional (clean, distorted) pair of arrays; the training
    arrays are used for validation when it is omitted.
    """
    _check_config(cfg)
    clean = np.asarray(clean, dtype=np.float32)
    distorted = np.asarray(distorted, dtype=np.float32)
    if clean.shape != distorted.shape or clean.ndim != 4 or not len(clean):
        raise ValueError('Need matching non-empty (N, C, H, W) arrays.')
    val_clean, val_dist = (clean, distorted) if val is None else val

    def train_batches(epoch):
        order = make_rng(cfg.seed, epoch).permutation(len(clean))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            yield clean[idx], distorted[idx]

    def val_batches():
        for start in range(0, len(val_clean), cfg.batch_size):
            yield (val_clean[start:start + cfg.batch_size],
                   val_dist[start:start + cfg.batch_size])

    return _fit_unet(train_batches, val_batches, cfg, phi, run_dir, progress)
