"""
Network definitions for marine-snow synthesis and removal.

A network is an ordered list of layer descriptors interpreted by Network.
The U-Net's skip connections are expressed in the same list: every max-pool
saves its input and every concat layer joins the most recently saved
activation to the current one along the channel axis.

Weights serialize to the MSNW format: magic b'MSNW', version u16,
architecture fingerprint u64, tensor count u32, then per tensor a u16-length
UTF-8 name, rank u8, u32 dims and little-endian float32 values.

Author: pysnow developers
"""

import os
import struct
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import Tensor as T
from .Degrade import PatchSet, PATCH_SIZE
from .SnowUtils import make_rng

logger = logging.getLogger(__name__)

WEIGHT_MAGIC = b'MSNW'
WEIGHT_VERSION = 1

ARCHITECTURES = ('generator', 'critic', 'unet', 'feature')

_PARAM_NAMES = {'dense': ('W', 'b'), 'conv': ('W', 'b'), 'convT': ('W', 'b'),
                'bn': ('gamma', 'beta')}
_BUFFER_NAMES = ('running_mean', 'running_var')


class WeightFileError(ValueError):
    """Base class for weight-file failures."""


class CorruptWeightFileError(WeightFileError):
    pass


class FingerprintMismatchError(WeightFileError):
    pass


class WeightVersionError(WeightFileError):
    pass


@dataclass(frozen=True)
class LayerSpec(object):
    """
    One layer descriptor.

    kind is one of dense, conv, convT, bn, act, dropout, flatten, reshape,
    maxpool, avgpool or concat; only the fields relevant to a kind are used.
    """
    kind: str
    name: str = ''
    cin: int = 0
    cout: int = 0
    k: int = 0
    stride: int = 1
    padding: int = 0
    act: str = ''
    rate: float = 0.0
    shape: tuple = ()

    def descriptor(self):
        return '{}({},{},{},{},{},{},{},{},{})'.format(
            self.kind, self.name, self.cin, self.cout, self.k, self.stride,
            self.padding, self.act, self.rate,
            'x'.join(str(s) for s in self.shape))

    def param_shapes(self):
        if self.kind == 'dense':
            return {'W': (self.cin, self.cout), 'b': (self.cout,)}
        if self.kind == 'conv':
            return {'W': (self.cout, self.cin, self.k, self.k),
                    'b': (self.cout,)}
        if self.kind == 'convT':
            return {'W': (self.cin, self.cout, self.k, self.k),
                    'b': (self.cout,)}
        if self.kind == 'bn':
            return {'gamma': (self.cin,), 'beta': (self.cin,)}
        return {}


@dataclass(frozen=True)
class NetworkSpec(object):
    """
    Architecture description: kind, hyper-parameters and the ordered layer
    descriptors.  The fingerprint is a 64-bit BLAKE2b hash of the
    descriptor string.
    """
    arch: str
    layers: tuple
    config: tuple = ()

    @property
    def options(self):
        return dict(self.config)

    def descriptor(self):
        return '{}|{}'.format(self.arch, ';'.join(layer.descriptor()
                                                  for layer in self.layers))

    @property
    def fingerprint(self):
        digest = hashlib.blake2b(self.descriptor().encode('utf-8'),
                                 digest_size=8).digest()
        return struct.unpack('<Q', digest)[0]

    def param_names(self):
        names = []
        for layer in self.layers:
            for pname in _PARAM_NAMES.get(layer.kind, ()):
                names.append('{}.{}'.format(layer.name, pname))
        return names

    def buffer_names(self):
        return ['{}.{}'.format(layer.name, bname) for layer in self.layers
                if layer.kind == 'bn' for bname in _BUFFER_NAMES]

    def check_input(self, shape):
        """Validate a batched input shape against the input contract."""
        opts = self.options
        if self.arch == 'generator':
            ok = len(shape) == 2 and shape[1] == opts['z_dim']
            expect = '(N, {})'.format(opts['z_dim'])
        elif self.arch == 'critic':
            ok = tuple(shape[1:]) == (1, PATCH_SIZE, PATCH_SIZE) and \
                len(shape) == 4
            expect = '(N, 1, 32, 32)'
        else:
            factor = 2 ** opts['depth']
            ok = len(shape) == 4 and shape[1] == opts['in_channels']
            expect = '(N, {}, H, W)'.format(opts['in_channels'])
            if ok and (shape[2] % factor or shape[3] % factor):
                logger.error('{} input {}x{} not divisible by {}'.format(
                    self.arch, shape[2], shape[3], factor))
                raise ValueError('Spatial extents must be divisible by '
                                 '{:d}.'.format(factor))
        if not ok:
            logger.error('{} input shape {} does not match {}'.format(
                self.arch, tuple(shape), expect))
            raise ValueError('Input shape {} does not match the {} contract '
                             '{}'.format(tuple(shape), self.arch, expect))

    def output_shape(self, input_shape):
        """
        Trace an unbatched input shape through the layers.

        Raises ValueError if adjacent layer shapes do not compose.
        """
        shape = tuple(input_shape)
        saved = []
        for layer in self.layers:
            shape = _trace_layer(layer, shape, saved)
        return shape

    def nominal_input(self):
        opts = self.options
        if self.arch == 'generator':
            return (opts['z_dim'],)
        if self.arch == 'critic':
            return (1, PATCH_SIZE, PATCH_SIZE)
        side = 2 ** opts['depth']
        return (opts['in_channels'], side, side)


def _trace_layer(layer, shape, saved):
    kind = layer.kind

    def fail(msg):
        logger.error('Layer {} ({}) rejects shape {}: {}'.format(
            layer.name, kind, shape, msg))
        raise ValueError('Layer shapes do not compose at {}: {}'.format(
            layer.name or kind, msg))

    if kind == 'dense':
        if shape != (layer.cin,):
            fail('expected ({},)'.format(layer.cin))
        return (layer.cout,)
    if kind == 'reshape':
        if int(np.prod(shape)) != int(np.prod(layer.shape)):
            fail('cannot reshape to {}'.format(layer.shape))
        return tuple(layer.shape)
    if kind == 'flatten':
        return (int(np.prod(shape)),)
    if kind in ('act', 'dropout'):
        return shape
    if len(shape) != 3:
        fail('expected (C, H, W)')

    c, h, w = shape
    if kind == 'bn':
        if c != layer.cin:
            fail('expected {} channels'.format(layer.cin))
        return shape
    if kind == 'conv':
        if c != layer.cin:
            fail('expected {} channels'.format(layer.cin))
        spans = [n + 2 * layer.padding - layer.k for n in (h, w)]
        if min(spans) < 0 or any(s % layer.stride for s in spans):
            fail('non-integral output extent')
        return (layer.cout,) + tuple(s // layer.stride + 1 for s in spans)
    if kind == 'convT':
        if c != layer.cin:
            fail('expected {} channels'.format(layer.cin))
        return (layer.cout,) + tuple(
            (n - 1) * layer.stride - 2 * layer.padding + layer.k
            for n in (h, w))
    if kind in ('maxpool', 'avgpool'):
        if h % 2 or w % 2:
            fail('extent not divisible by 2')
        if kind == 'maxpool':
            saved.append(shape)
        return (c, h // 2, w // 2)
    if kind == 'concat':
        if not saved:
            fail('no saved activation to concatenate')
        skip = saved.pop()
        if skip[1:] != shape[1:]:
            fail('skip extent {} differs'.format(skip[1:]))
        return (skip[0] + c, h, w)
    fail('unknown layer kind')


def _make_spec(arch, layers, **config):
    spec = NetworkSpec(arch=arch, layers=tuple(layers),
                       config=tuple(sorted(config.items())))
    spec.output_shape(spec.nominal_input())
    return spec


def build_generator(base_channels=128, z_dim=100):
    """
    Marine-snow patch generator.

    Dense z -> 4x4xbase, batchnorm, leaky ReLU, then three transposed
    convolutions (kernel 4, stride 2, padding 1) 4 -> 8 -> 16 -> 32 with
    channels base -> base/2 -> base/4 -> 1 and a tanh output.

    Parameters
    ----------
    base_channels: int, optional
        Channels of the 4x4 seed feature map; divisible by 4.
    z_dim: int, optional
        Latent dimension.

    Returns
    -------
    NetworkSpec
    """
    if z_dim < 1:
        raise ValueError('z_dim must be >= 1.')
    if base_channels < 4 or base_channels % 4:
        raise ValueError('Generator base_channels must be a positive '
                         'multiple of 4.')

    b = base_channels
    layers = [LayerSpec('dense', 'project', cin=z_dim, cout=16 * b),
              LayerSpec('reshape', shape=(b, 4, 4)),
              LayerSpec('bn', 'bn0', cin=b),
              LayerSpec('act', act='leaky_relu')]
    widths = [b, b // 2, b // 4, 1]
    for i in range(3):
        layers.append(LayerSpec('convT', 'up{:d}'.format(i + 1),
                                cin=widths[i], cout=widths[i + 1], k=4,
                                stride=2, padding=1))
        if i < 2:
            layers.append(LayerSpec('bn', 'bn{:d}'.format(i + 1),
                                    cin=widths[i + 1]))
            layers.append(LayerSpec('act', act='leaky_relu'))
    layers.append(LayerSpec('act', act='tanh'))

    return _make_spec('generator', layers, base_channels=b, z_dim=z_dim)


def build_critic(base_channels=32):
    """
    Wasserstein critic on 32x32 patches; unbounded scalar output.
    """
    if base_channels < 1:
        raise ValueError('Critic base_channels must be >= 1.')

    b = base_channels
    layers = [LayerSpec('conv', 'conv1', cin=1, cout=b, k=4, stride=2,
                        padding=1),
              LayerSpec('act', act='leaky_relu'),
              LayerSpec('dropout', rate=0.3),
              LayerSpec('conv', 'conv2', cin=b, cout=2 * b, k=4, stride=2,
                        padding=1),
              LayerSpec('act', act='leaky_relu'),
              LayerSpec('dropout', rate=0.3),
              LayerSpec('flatten'),
              LayerSpec('dense', 'score', cin=2 * b * 8 * 8, cout=1)]

    return _make_spec('critic', layers, base_channels=b)


def build_unet(depth=4, base_channels=16, in_channels=3, out_channels=3):
    """
    U-Net remover.

    Each encoder level applies two 3x3 convolutions with ReLU and a 2x2
    max-pool, doubling channels per level; the bottleneck applies two more
    convolutions.  Each decoder level upsamples with a transposed
    convolution (kernel 2, stride 2), concatenates the matching encoder
    activation and applies two convolutions.  A 1x1 convolution with a
    sigmoid produces the output.

    Parameters
    ----------
    depth: int, optional
        Number of pooling levels; inputs must be divisible by 2**depth.
    base_channels: int, optional
        Channels of the first level.
    in_channels, out_channels: int, optional

    Returns
    -------
    NetworkSpec
    """
    if depth < 1 or base_channels < 1:
        raise ValueError('U-Net depth and base_channels must be >= 1.')

    widths = [base_channels * 2 ** lvl for lvl in range(depth + 1)]
    layers = []

    def double_conv(prefix, cin, cout):
        return [LayerSpec('conv', prefix + 'a', cin=cin, cout=cout, k=3,
                          padding=1),
                LayerSpec('act', act='relu'),
                LayerSpec('conv', prefix + 'b', cin=cout, cout=cout, k=3,
                          padding=1),
                LayerSpec('act', act='relu')]

    cin = in_channels
    for lvl in range(depth):
        layers += double_conv('enc{:d}'.format(lvl), cin, widths[lvl])
        layers.append(LayerSpec('maxpool'))
        cin = widths[lvl]

    layers += double_conv('mid', widths[depth - 1], widths[depth])

    for lvl in reversed(range(depth)):
        layers.append(LayerSpec('convT', 'up{:d}'.format(lvl),
                                cin=widths[lvl + 1], cout=widths[lvl], k=2,
                                stride=2))
        layers.append(LayerSpec('concat'))
        layers += double_conv('dec{:d}'.format(lvl), 2 * widths[lvl],
                              widths[lvl])

    layers.append(LayerSpec('conv', 'head', cin=widths[0], cout=out_channels,
                            k=1))
    layers.append(LayerSpec('act', act='sigmoid'))

    return _make_spec('unet', layers, depth=depth,
                      base_channels=base_channels, in_channels=in_channels,
                      out_channels=out_channels)


FEATURE_WIDTHS = (16, 32, 64)


def feature_net_spec(in_channels=3):
    layers = []
    cin = in_channels
    for i, width in enumerate(FEATURE_WIDTHS):
        layers += [LayerSpec('conv', 'feat{:d}'.format(i + 1), cin=cin,
                             cout=width, k=3, padding=1),
                   LayerSpec('act', act='relu'),
                   LayerSpec('avgpool')]
        cin = width
    return _make_spec('feature', layers, depth=len(FEATURE_WIDTHS),
                      in_channels=in_channels)


def build_feature_net(seed=0, weights_path=None, in_channels=3):
    """
    Frozen feature extractor for the perceptual loss.

    Three conv3x3 + ReLU stages each followed by 2x average pooling, with
    16/32/64 channels.  Weights come from a seeded He-normal draw, or from
    an MSNW file when weights_path is given.

    Returns
    -------
    Network
        Non-trainable network; a 64x64 input yields (64, 8, 8) features.
    """
    spec = feature_net_spec(in_channels)
    if weights_path is not None:
        logger.info('Loading feature-net weights from {}'.format(
            weights_path))
        return Network.from_store(spec, load_weights(weights_path, spec))
    return Network(spec, seed=seed)


class Network(object):
    """
    Parameters and running buffers for a NetworkSpec, plus the forward
    interpreter.

    Parameters
    ----------
    spec: NetworkSpec
    seed: int, optional
        Seed for He-normal initialization.
    dtype: numpy dtype, optional
        Parameter precision.
    """

    def __init__(self, spec, seed=0, dtype=np.float32):
        self.spec = spec
        self.trainable = spec.arch != 'feature'
        self.params = {}
        self.buffers = {}

        rng = make_rng(seed, spec.fingerprint & 0xFFFFFFFF)
        for layer in spec.layers:
            shapes = layer.param_shapes()
            if layer.kind in ('dense', 'conv', 'convT'):
                fan_in = layer.cin * max(layer.k, 1) ** 2
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shapes['W'])
                self._add(layer.name, 'W', w, dtype)
                self._add(layer.name, 'b', np.zeros(shapes['b']), dtype)
            elif layer.kind == 'bn':
                self._add(layer.name, 'gamma', np.ones(layer.cin), dtype)
                self._add(layer.name, 'beta', np.zeros(layer.cin), dtype)
                self.buffers[layer.name + '.running_mean'] = \
                    np.zeros(layer.cin, dtype=dtype)
                self.buffers[layer.name + '.running_var'] = \
                    np.ones(layer.cin, dtype=dtype)

    def _add(self, layer_name, pname, values, dtype):
        name = '{}.{}'.format(layer_name, pname)
        self.params[name] = T.parameter(np.asarray(values, dtype=dtype),
                                        name=name, trainable=self.trainable)

    def __repr__(self):
        return 'Network(arch={}, params={:d})'.format(self.spec.arch,
                                                      self.num_parameters())

    @property
    def arch(self):
        return self.spec.arch

    def parameters(self):
        """Parameter tensors in layer order."""
        return [self.params[name] for name in self.spec.param_names()]

    def num_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        T.zero_grad(self.parameters())

    def forward(self, x, training=False, rng=None):
        """
        Run the network.

        Parameters
        ----------
        x: Tensor or ndarray
            Batched input matching the network's input shape.
        training: bool, optional
            Batch statistics and active dropout when True.
        rng: numpy.random.Generator, optional
            Required for training-mode dropout.

        Returns
        -------
        Tensor
        """
        if not isinstance(x, T.Tensor):
            x = T.Tensor(np.asarray(x))
        self.spec.check_input(x.shape)

        p = self.params
        saved = []
        for layer in self.spec.layers:
            kind = layer.kind
            if kind == 'dense':
                x = T.dense(x, p[layer.name + '.W'], p[layer.name + '.b'])
            elif kind == 'conv':
                x = T.conv2d(x, p[layer.name + '.W'], p[layer.name + '.b'],
                             stride=layer.stride, padding=layer.padding)
            elif kind == 'convT':
                x = T.conv_transpose2d(x, p[layer.name + '.W'],
                                       p[layer.name + '.b'],
                                       stride=layer.stride,
                                       padding=layer.padding)
            elif kind == 'bn':
                x = T.batchnorm2d(x, p[layer.name + '.gamma'],
                                  p[layer.name + '.beta'], training,
                                  self.buffers[layer.name + '.running_mean'],
                                  self.buffers[layer.name + '.running_var'])
            elif kind == 'act':
                x = T.activation(x, layer.act)
            elif kind == 'dropout':
                x = T.dropout(x, layer.rate, training, rng)
            elif kind == 'reshape':
                x = T.reshape(x, (x.shape[0],) + tuple(layer.shape))
            elif kind == 'flatten':
                x = T.flatten(x)
            elif kind == 'maxpool':
                saved.append(x)
                x = T.maxpool2d(x)
            elif kind == 'avgpool':
                x = T.avgpool2d(x)
            elif kind == 'concat':
                x = T.concat([saved.pop(), x], axis=1)
            else:
                raise ValueError('Unknown layer kind: {}'.format(kind))
        return x

    def __call__(self, x):
        return self.forward(x, training=False)

    def astype(self, dtype):
        """Copy of the network with parameters and buffers cast to dtype."""
        out = Network.__new__(Network)
        out.spec = self.spec
        out.trainable = self.trainable
        out.params = {name: T.parameter(t.data.astype(dtype), name=name,
                                        trainable=self.trainable)
                      for name, t in self.params.items()}
        out.buffers = {name: b.astype(dtype)
                       for name, b in self.buffers.items()}
        return out

    def copy(self):
        return self.astype(self.params[self.spec.param_names()[0]].data.dtype)

    def to_store(self):
        tensors = {}
        for name in self.spec.param_names():
            tensors[name] = np.array(self.params[name].data,
                                     dtype=np.float32)
        for name in self.spec.buffer_names():
            tensors[name] = np.array(self.buffers[name], dtype=np.float32)
        return WeightStore(tensors=tensors,
                           fingerprint=self.spec.fingerprint)

    @classmethod
    def from_store(cls, spec, store, dtype=np.float32):
        """Rebuild a network for spec from a WeightStore."""
        if store.fingerprint != spec.fingerprint:
            logger.error('Weight fingerprint {:016x} does not match {} '
                         'architecture {:016x}'.format(
                             store.fingerprint, spec.arch, spec.fingerprint))
            raise FingerprintMismatchError(
                'Weights were saved for a different architecture.')

        expected = spec.param_names() + spec.buffer_names()
        if sorted(expected) != sorted(store.tensors):
            raise CorruptWeightFileError('Weight names do not match the '
                                         '{} architecture.'.format(spec.arch))

        net = cls(spec, dtype=dtype)
        for name in spec.param_names():
            values = store.tensors[name]
            if values.shape != net.params[name].shape:
                raise CorruptWeightFileError(
                    'Tensor {} has shape {}, expected {}'.format(
                        name, values.shape, net.params[name].shape))
            net.params[name].data = np.array(values, dtype=dtype)
        for name in spec.buffer_names():
            net.buffers[name] = np.array(store.tensors[name], dtype=dtype)
        return net


@dataclass
class WeightStore(object):
    """Named float32 tensors plus the fingerprint of their architecture."""
    tensors: dict = field(default_factory=dict)
    fingerprint: int = 0
    version: int = WEIGHT_VERSION

    def __eq__(self, other):
        if not isinstance(other, WeightStore):
            return NotImplemented
        return (self.fingerprint == other.fingerprint and
                self.version == other.version and
                list(self.tensors) == list(other.tensors) and
                all(np.array_equal(self.tensors[k], other.tensors[k])
                    for k in self.tensors))


def save_weights(store, path):
    """Write a WeightStore in MSNW format."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)

    chunks = [WEIGHT_MAGIC,
              struct.pack('<HQI', store.version, store.fingerprint,
                          len(store.tensors))]
    for name, values in store.tensors.items():
        encoded = name.encode('utf-8')
        values = np.asarray(values)
        chunks.append(struct.pack('<H', len(encoded)) + encoded)
        chunks.append(struct.pack('<B', values.ndim))
        chunks.append(struct.pack('<{:d}I'.format(values.ndim),
                                  *values.shape))
        chunks.append(values.astype('<f4').tobytes())

    with open(path, 'wb') as f:
        f.write(b''.join(chunks))
    logger.debug('Saved {:d} tensors to {}'.format(len(store.tensors), path))


class _Reader(object):

    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.buf):
            logger.error('Weight file {} truncated at byte {:d}'.format(
                self.path, self.pos))
            raise CorruptWeightFileError('Truncated weight file: {}'.format(
                self.path))
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path, spec=None):
    """
    Read an MSNW weight file.

    Parameters
    ----------
    path: str
    spec: NetworkSpec, optional
        When given, the stored fingerprint must match it.

    Returns
    -------
    WeightStore
    """
    if not os.path.exists(path):
        logger.error('Weight file not found: {}'.format(path))
        raise FileNotFoundError('No such weight file: {}'.format(path))

    with open(path, 'rb') as f:
        reader = _Reader(f.read(), path)

    if reader.take(4) != WEIGHT_MAGIC:
        raise CorruptWeightFileError('Not an MSNW weight file: {}'.format(
            path))
    version, fingerprint, count = reader.unpack('<HQI')
    if version != WEIGHT_VERSION:
        logger.error('Weight file version {:d}, supported {:d}'.format(
            version, WEIGHT_VERSION))
        raise WeightVersionError('Unsupported weight file version {:d}'
                                 ''.format(version))

    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack('<H')
        try:
            name = reader.take(name_len).decode('utf-8')
        except UnicodeDecodeError:
            raise CorruptWeightFileError('Invalid tensor name in {}'.format(
                path))
        if name in tensors:
            raise CorruptWeightFileError('Duplicate tensor {} in {}'.format(
                name, path))
        (rank,) = reader.unpack('<B')
        dims = reader.unpack('<{:d}I'.format(rank))
        size = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(reader.take(4 * size), dtype='<f4')
        tensors[name] = values.reshape(dims).astype(np.float32)

    if reader.pos != len(reader.buf):
        raise CorruptWeightFileError('Trailing bytes in weight file {}'
                                     ''.format(path))

    store = WeightStore(tensors=tensors, fingerprint=fingerprint,
                        version=version)
    if spec is not None and fingerprint != spec.fingerprint:
        logger.error('{} holds fingerprint {:016x}, expected {:016x}'.format(
            path, fingerprint, spec.fingerprint))
        raise FingerprintMismatchError('Weights in {} do not match the {} '
                                       'architecture'.format(path, spec.arch))
    return store


def spec_from_store(store):
    """Infer the architecture of stored weights from names and shapes."""
    t = store.tensors
    try:
        if 'project.W' in t:
            z_dim, width = t['project.W'].shape
            return build_generator(base_channels=width // 16, z_dim=z_dim)
        if 'score.W' in t:
            return build_critic(base_channels=t['conv1.W'].shape[0])
        if 'head.W' in t:
            depth = sum(1 for name in t if name.startswith('enc') and
                        name.endswith('a.W'))
            return build_unet(depth=depth,
                              base_channels=t['enc0a.W'].shape[0],
                              in_channels=t['enc0a.W'].shape[1],
                              out_channels=t['head.W'].shape[0])
        if 'feat1.W' in t:
            return feature_net_spec(in_channels=t['feat1.W'].shape[1])
    except (KeyError, ValueError, IndexError) as e:
        logger.error('Cannot infer architecture: {}'.format(e))
        raise CorruptWeightFileError('Stored tensors do not describe a '
                                     'known architecture.')
    raise CorruptWeightFileError('Stored tensors do not describe a known '
                                 'architecture.')


def network_from_store(store, arch=None):
    """
    Rebuild a Network from a WeightStore, inferring its architecture.

    Parameters
    ----------
    store: WeightStore
    arch: str, optional
        Required architecture; a different one raises
        FingerprintMismatchError.
    """
    spec = spec_from_store(store)
    if arch is not None and spec.arch != arch:
        logger.error('Expected {} weights, found {}'.format(arch, spec.arch))
        raise FingerprintMismatchError('Expected {} weights, found {}'
                                       ''.format(arch, spec.arch))
    return Network.from_store(spec, store)


def load_network(path, arch=None):
    return network_from_store(load_weights(path), arch=arch)


def generate_patches(generator, n, seed, batch_size=64):
    """
    Sample n marine-snow patches from a trained generator.

    Parameters
    ----------
    generator: Network or WeightStore
    n: int
    seed: int
        Seed for the latent draws z ~ N(0, 1).

    Returns
    -------
    PatchSet
        Generator outputs mapped from [-1, 1] to [0, 1] via (x + 1) / 2.
    """
    if n < 1:
        raise ValueError('Number of patches must be >= 1.')
    if isinstance(generator, WeightStore):
        generator = network_from_store(generator, arch='generator')
    elif generator.arch != 'generator':
        raise FingerprintMismatchError('Expected generator weights, found '
                                       '{}'.format(generator.arch))

    z_dim = generator.spec.options['z_dim']
    z = make_rng(seed).standard_normal((n, z_dim)).astype(np.float32)

    outputs = []
    with T.no_grad():
        for start in range(0, n, batch_size):
            out = generator.forward(z[start:start + batch_size],
                                    training=False)
            outputs.append(out.data[:, 0])

    patches = np.clip((np.concatenate(outputs) + 1.0) / 2.0, 0.0, 1.0)
    logger.info('Generated {:d} patches'.format(n))
    return PatchSet(patches, source='generated')
