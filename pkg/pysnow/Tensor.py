"""
Minimal reverse-mode differentiable tensor engine on numpy arrays.

Provides the layers, losses and optimizers needed by the marine-snow
generator, the WGAN critic and the U-Net remover.  Data layout is batch-major
and channels-first: (batch, channels, height, width).

Every op builds a node holding its parents and a backward closure that maps
the output gradient to one gradient per parent.  Tensor.backward() walks the
graph in reverse topological order once; a consumed graph cannot be walked
again.

Author: pysnow developers
"""

import logging
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .SnowUtils import make_rng

logger = logging.getLogger(__name__)

_GRAD_ENABLED = True
_BRANCH_LOG = None

ACTIVATIONS = ('leaky_relu', 'relu', 'tanh', 'sigmoid', 'linear')


@contextmanager
def no_grad():
    """Build no graph inside the block (inference, validation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def record_branches():
    """
    Collect the branch pattern of piecewise-linear ops executed in the block
    (ReLU-family sign masks, max-pool argmax indices).
    """
    global _BRANCH_LOG
    prev = _BRANCH_LOG
    _BRANCH_LOG = []
    try:
        yield _BRANCH_LOG
    finally:
        _BRANCH_LOG = prev


def _log_branch(pattern):
    if _BRANCH_LOG is not None:
        _BRANCH_LOG.append(pattern)


class Tensor(object):
    """
    Array value with an optional gradient and the graph node that made it.

    Parameters
    ----------
    data: array-like
        Values; converted to a floating ndarray.
    requires_grad: bool, optional
        Whether gradients should flow to (and accumulate in) this tensor.
    name: str, optional
        Label used in diagnostics.
    """

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = ' name={}'.format(self.name) if self.name else ''
        return 'Tensor(shape={}{}, requires_grad={})'.format(
            self.shape, label, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self, grad=None):
        """
        Propagate gradients from this tensor to every leaf requiring them.

        Parameters
        ----------
        grad: ndarray, optional
            Seed gradient; defaults to 1 for a single-element tensor.
        """
        if self._consumed:
            logger.error('backward() called twice on the same graph')
            raise RuntimeError('Graph already consumed by a previous '
                               'backward(); run the forward pass again.')
        if not self.requires_grad:
            raise RuntimeError('Tensor does not require gradients.')

        if grad is None:
            if self.size != 1:
                raise ValueError('Gradient seed required for non-scalar '
                                 'output of shape {}'.format(self.shape))
            grad = np.ones_like(self.data)

        order = _topological_order(self)
        pending = {id(self): np.asarray(grad, dtype=self.data.dtype)}

        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue

            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None \
                        else node.grad + g
                continue

            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

            # Free closures so the graph cannot silently be reused.
            node._backward = _consumed_backward
            node._consumed = True


def _consumed_backward(grad):
    raise RuntimeError('Graph already consumed by a previous backward().')


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _make(data, parents, backward):
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def parameter(data, name=None, trainable=True):
    """Leaf tensor for a network parameter."""
    return Tensor(data, requires_grad=trainable, name=name)


def zero_grad(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Elementwise arithmetic and reductions
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    a_shape, b_shape = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    a_shape, b_shape = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, a_shape), -_unbroadcast(g, b_shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        scale = float(b)

        def backward_scalar(g):
            return (g * scale,)

        return _make(a.data * scale, (a,), backward_scalar)

    a_data, b_data = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * b_data, a.shape),
                _unbroadcast(g * a_data, b.shape))

    return _make(a_data * b_data, (a, b), backward)


def tsum(x):
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum()), (x,), backward)


def mean(x):
    shape, n = x.shape, x.size

    def backward(g):
        return (np.full(shape, g / n, dtype=x.data.dtype),)

    return _make(np.asarray(x.data.mean()), (x,), backward)


def reshape(x, shape):
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), backward)


def flatten(x):
    """(batch, ...) -> (batch, features)."""
    return reshape(x, (x.shape[0], -1))


def concat(tensors, axis=1):
    """Concatenate along an axis (channel concatenation for skips)."""
    tensors = [_as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        grads = []
        for start, stop in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            grads.append(g[tuple(idx)])
        return tuple(grads)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def _out_extent(n_in, k, stride, padding):
    span = n_in + 2 * padding - k
    if span < 0 or span % stride:
        logger.error('Convolution geometry not integral: in={}, k={}, '
                     'stride={}, padding={}'.format(n_in, k, stride, padding))
        raise ValueError('Convolution output extent (in + 2p - k)/s + 1 is '
                         'not a positive integer.')
    return span // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding),
                      (padding, padding)))


def _windows(xp, kh, kw, stride, ho, wo):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :ho, :wo]


def _conv_forward(x, w, stride, padding):
    n, c, h, wd = x.shape
    o, c_w, kh, kw = w.shape
    if c != c_w:
        logger.error('conv2d channel mismatch: input {} vs weights {}'
                     ''.format(x.shape, w.shape))
        raise ValueError('Input channels do not match kernel channels.')

    ho = _out_extent(h, kh, stride, padding)
    wo = _out_extent(wd, kw, stride, padding)
    cols = _windows(_pad(x, padding), kh, kw, stride, ho, wo)
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_grad_input(g, w, stride, padding, in_hw):
    """Adjoint of _conv_forward with respect to its input."""
    n, o, ho, wo = g.shape
    o_w, c, kh, kw = w.shape
    if o != o_w:
        raise ValueError('Gradient channels do not match kernel outputs.')

    h, wd = in_hw
    dcols = np.tensordot(g, w, axes=([1], [0]))
    dxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding),
                   dtype=np.result_type(g, w))
    row_end = stride * (ho - 1) + 1
    col_end = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + row_end:stride, j:j + col_end:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, padding:padding + h, padding:padding + wd]


def _conv_grad_weight(x, g, stride, padding, khw):
    kh, kw = khw
    ho, wo = g.shape[2:]
    cols = _windows(_pad(x, padding), kh, kw, stride, ho, wo)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))


def _bias_shape(b, channels):
    if b is not None and b.shape != (channels,):
        raise ValueError('Bias shape {} does not match {} channels'
                         ''.format(b.shape, channels))


def conv2d(x, w, b=None, stride=1, padding=0):
    """
    2D cross-correlation with zero padding.

    Parameters
    ----------
    x: Tensor
        Input of shape (N, C, H, W).
    w: Tensor
        Kernels of shape (O, C, kh, kw).
    b: Tensor, optional
        Bias of shape (O,).
    stride, padding: int

    Returns
    -------
    Tensor of shape (N, O, Ho, Wo), Ho = (H + 2p - kh)/s + 1.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError('conv2d expects 4D input and weights.')
    _bias_shape(b, w.shape[0])

    x_data, w_data = x.data, w.data
    out = _conv_forward(x_data, w_data, stride, padding)
    if b is not None:
        out = out + b.data[None, :, None, None]

    in_hw = x.shape[2:]
    khw = w.shape[2:]

    def backward(g):
        gx = _conv_grad_input(g, w_data, stride, padding, in_hw)
        gw = _conv_grad_weight(x_data, g, stride, padding, khw)
        grads = (gx, gw)
        if b is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def conv_transpose2d(x, w, b=None, stride=1, padding=0):
    """
    Transposed convolution, the adjoint of conv2d with the same kernels.

    Parameters
    ----------
    x: Tensor
        Input of shape (N, Cin, H, W).
    w: Tensor
        Kernels of shape (Cin, Cout, kh, kw) -- the layout of the conv2d
        whose adjoint this is.
    b: Tensor, optional
        Bias of shape (Cout,).

    Returns
    -------
    Tensor of shape (N, Cout, (H - 1)s - 2p + kh, (W - 1)s - 2p + kw).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError('conv_transpose2d expects 4D input and weights.')
    if x.shape[1] != w.shape[0]:
        logger.error('conv_transpose2d channel mismatch: input {} vs '
                     'weights {}'.format(x.shape, w.shape))
        raise ValueError('Input channels do not match kernel inputs.')
    _bias_shape(b, w.shape[1])

    h, wd = x.shape[2:]
    kh, kw = w.shape[2:]
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (wd - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ValueError('Transposed convolution output would be empty.')

    x_data, w_data = x.data, w.data
    out = _conv_grad_input(x_data, w_data, stride, padding, (ho, wo))
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gx = _conv_forward(g, w_data, stride, padding)
        gw = _conv_grad_weight(g, x_data, stride, padding, (kh, kw))
        grads = (gx, gw)
        if b is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


# ---------------------------------------------------------------------------
# Pooling and normalization
# ---------------------------------------------------------------------------

def maxpool2d(x, k=2, stride=2):
    """
    Max pooling without padding; gradient routes to the first argmax.
    """
    n, c, h, w = x.shape
    if h % stride or w % stride or h < k or w < k:
        logger.error('maxpool2d extent {}x{} not divisible by stride {}'
                     ''.format(h, w, stride))
        raise ValueError('Spatial extents must be divisible by the stride.')

    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = _windows(x.data, k, k, stride, ho, wo).reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)
    _log_branch(idx)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        row_end = stride * (ho - 1) + 1
        col_end = stride * (wo - 1) + 1
        for q in range(k * k):
            di, dj = divmod(q, k)
            dx[:, :, di:di + row_end:stride, dj:dj + col_end:stride] += \
                g * (idx == q)
        return (dx,)

    return _make(out, (x,), backward)


def avgpool2d(x, k=2):
    """Non-overlapping k x k average pooling."""
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ValueError('Spatial extents must be divisible by {}'.format(k))

    blocks = x.data.reshape(n, c, h // k, k, w // k, k)
    out = blocks.mean(axis=(3, 5))

    def backward(g):
        up = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return (up / (k * k),)

    return _make(out, (x,), backward)


def batchnorm2d(x, gamma, beta, training, running_mean, running_var,
                momentum=0.9, eps=1e-5):
    """
    Per-channel batch normalization of an (N, C, H, W) tensor.

    Training mode normalizes with the biased batch statistics and updates
    the running buffers in place as
    running = momentum * running + (1 - momentum) * batch.
    Evaluation mode uses the running buffers.

    Parameters
    ----------
    x: Tensor
    gamma, beta: Tensor
        Scale and shift of shape (C,).
    training: bool
    running_mean, running_var: ndarray
        Buffers of shape (C,), modified in place during training.
    """
    n, c, h, w = x.shape
    axes = (0, 2, 3)
    g_data = gamma.data[None, :, None, None]
    b_data = beta.data[None, :, None, None]

    if not training:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None, None]) * \
            inv_std[None, :, None, None]

        def backward_eval(g):
            return (g * g_data * inv_std[None, :, None, None],
                    (g * xhat).sum(axis=axes), g.sum(axis=axes))

        return _make(g_data * xhat + b_data, (x, gamma, beta), backward_eval)

    count = n * h * w
    if count <= 1:
        logger.error('batchnorm2d needs more than one value per channel in '
                     'training mode (got batch={}, {}x{})'.format(n, h, w))
        raise ValueError('Degenerate batch for training-mode batchnorm.')

    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]

    running_mean *= momentum
    running_mean += (1 - momentum) * mu
    running_var *= momentum
    running_var += (1 - momentum) * var

    def backward(g):
        dxhat = g * g_data
        sum_dxhat = dxhat.sum(axis=axes, keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=axes, keepdims=True)
        dx = (inv_std[None, :, None, None] / count) * \
            (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
        return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(g_data * xhat + b_data, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# Dense, activations, dropout
# ---------------------------------------------------------------------------

def dense(x, w, b=None):
    """Affine map x @ W + b for x of shape (N, in) and W of shape (in, out)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        logger.error('dense shape mismatch: x {} W {}'.format(x.shape,
                                                              w.shape))
        raise ValueError('Inner dimensions of dense layer do not agree.')
    _bias_shape(b, w.shape[1])

    x_data, w_data = x.data, w.data
    out = x_data @ w_data
    if b is not None:
        out = out + b.data[None, :]

    def backward(g):
        grads = (g @ w_data.T, x_data.T @ g)
        if b is not None:
            grads += (g.sum(axis=0),)
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def activation(x, kind, alpha=0.2):
    """
    Elementwise activation.

    Parameters
    ----------
    x: Tensor
    kind: {'leaky_relu', 'relu', 'tanh', 'sigmoid', 'linear'}
    alpha: float, optional
        Negative slope of the leaky ReLU.
    """
    d = x.data
    if kind == 'leaky_relu':
        pos = d >= 0
        _log_branch(pos)
        slope = np.where(pos, 1.0, alpha).astype(d.dtype)
        out = d * slope
    elif kind == 'relu':
        pos = d > 0
        _log_branch(pos)
        slope = pos.astype(d.dtype)
        out = d * slope
    elif kind == 'tanh':
        out = np.tanh(d)
        slope = 1.0 - out ** 2
    elif kind == 'sigmoid':
        out = _sigmoid(d)
        slope = out * (1.0 - out)
    elif kind == 'linear':
        return x
    else:
        raise ValueError('Unknown activation: {}'.format(kind))

    def backward(g):
        return (g * slope,)

    return _make(out, (x,), backward)


def _sigmoid(d):
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dropout(x, rate=0.3, training=False, rng=None):
    """
    Inverted dropout: training zeroes elements with probability rate and
    scales survivors by 1 / (1 - rate); evaluation is the identity.
    """
    if not 0 <= rate < 1:
        raise ValueError('Dropout rate must lie in [0, 1).')
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError('Training-mode dropout needs a random generator.')

    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1 - rate)

    def backward(g):
        return (g * keep,)

    return _make(x.data * keep, (x,), backward)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(y, y_hat):
    """Mean of squared differences over all elements."""
    y, y_hat = _as_tensor(y), _as_tensor(y_hat)
    if y.shape != y_hat.shape:
        logger.error('mse_loss shape mismatch {} vs {}'.format(y.shape,
                                                               y_hat.shape))
        raise ValueError('Loss inputs must have equal shapes.')

    diff = y_hat.data - y.data
    n = diff.size

    def backward(g):
        gd = (2.0 / n) * g * diff
        return -gd, gd

    return _make(np.asarray((diff ** 2).mean()), (y, y_hat), backward)


def perceptual_loss(phi, y, y_hat):
    """
    Mean squared error between feature maps phi(y) and phi(y_hat).

    The target features are computed without a graph, so gradients flow
    only through y_hat.
    """
    y, y_hat = _as_tensor(y), _as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError('Loss inputs must have equal shapes.')

    with no_grad():
        target = phi(Tensor(y.data))
    return mse_loss(Tensor(target.data), phi(y_hat))


def combined_loss(y, y_hat, phi, gamma=1.0):
    """L_MSE + gamma * L_p."""
    if gamma < 0:
        raise ValueError('Perceptual weight gamma must be >= 0.')

    pixel = mse_loss(y, y_hat)
    if gamma == 0:
        return pixel
    return pixel + mul(perceptual_loss(phi, y, y_hat), gamma)


def critic_loss(d_fake, d_real):
    """Wasserstein critic loss (1/N) sum(D(G(z_i)) - D(x_i))."""
    d_fake, d_real = _as_tensor(d_fake), _as_tensor(d_real)
    if d_fake.size == 0 or d_real.size == 0:
        raise ValueError('Critic loss needs a non-empty batch.')
    if d_fake.shape != d_real.shape:
        logger.error('critic_loss batch mismatch {} vs {}'.format(
            d_fake.shape, d_real.shape))
        raise ValueError('Fake and real critic outputs must have equal '
                         'batch sizes.')
    return mean(sub(d_fake, d_real))


def generator_loss(d_fake):
    """Generator loss -(1/N) sum D(G(z_i))."""
    d_fake = _as_tensor(d_fake)
    if d_fake.size == 0:
        raise ValueError('Generator loss needs a non-empty batch.')
    return mul(mean(d_fake), -1.0)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

class OptimizerState(object):
    """
    Per-parameter moment buffers and the step counter.

    Adam keeps first and second moments ('m', 'v'); RMSprop keeps the running
    mean square ('v').
    """

    def __init__(self, kind):
        if kind not in ('adam', 'rmsprop'):
            raise ValueError('Unknown optimizer: {}'.format(kind))
        self.kind = kind
        self.step = 0
        self.buffers = {}

    def ensure(self, name, params):
        if name not in self.buffers:
            self.buffers[name] = [np.zeros_like(p) for p in params]
        bufs = self.buffers[name]
        if len(bufs) != len(params) or \
                any(b.shape != p.shape for b, p in zip(bufs, params)):
            logger.error('Optimizer state does not match the parameters')
            raise ValueError('Optimizer state shapes do not match parameters.')
        return bufs


def _check_grads(params, grads):
    if len(params) != len(grads):
        raise ValueError('Number of gradients does not match parameters.')
    out = []
    for p, g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            logger.error('Gradient shape {} vs parameter {}'.format(g.shape,
                                                                   p.shape))
            raise ValueError('Gradient shape does not match parameter.')
        out.append(g)
    return out


def adam_step(params, grads, state, lr=0.001, beta1=0.9, beta2=0.999,
              eps=1e-7):
    """
    Bias-corrected Adam update, in place.

    Parameters
    ----------
    params: list of ndarray
        Parameter arrays, updated in place.
    grads: list of ndarray or None
        Gradients matching params (None counts as zero).
    state: OptimizerState
    """
    grads = _check_grads(params, grads)
    m_bufs = state.ensure('m', params)
    v_bufs = state.ensure('v', params)
    state.step += 1
    t = state.step
    m_corr = 1.0 - beta1 ** t
    v_corr = 1.0 - beta2 ** t

    for p, g, m, v in zip(params, grads, m_bufs, v_bufs):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / m_corr
        v_hat = v / v_corr
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)


def rmsprop_step(params, grads, state, lr=5e-5, rho=0.9, eps=1e-8):
    """RMSprop update, in place: v = rho v + (1 - rho) g^2, p -= lr g/(sqrt(v)+eps)."""
    grads = _check_grads(params, grads)
    v_bufs = state.ensure('v', params)
    state.step += 1

    for p, g, v in zip(params, grads, v_bufs):
        v *= rho
        v += (1.0 - rho) * g * g
        p -= (lr * g / (np.sqrt(v) + eps)).astype(p.dtype)


def clip_weights(params, c=0.01):
    """Clamp every parameter element to [-c, c] in place."""
    if not c > 0:
        raise ValueError('Clipping constant must be > 0.')
    for p in params:
        np.clip(p, -c, c, out=p)


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------

def _same_branches(base, other):
    if len(base) != len(other):
        return False
    return all(np.array_equal(a, b) for a, b in zip(base, other))


def grad_check(fn, tensors, eps=1e-4, max_entries=None, seed=0,
               max_shrink=3):
    """
    Compare analytic gradients against central finite differences.

    Parameters
    ----------
    fn: callable
        Builds a fresh graph from the current values of tensors and returns
        a single-element Tensor.  Any randomness inside fn must be reseeded
        on every call.
    tensors: list of Tensor
        Leaves (inputs and parameters) to check; should be float64.
    eps: float, optional
        Central-difference step.
    max_entries: int, optional
        Check at most this many randomly chosen entries per tensor
        (all entries when None).
    seed: int, optional
        Seed for choosing the checked entries.
    max_shrink: int, optional
        Times an entry's step is divided by 10 when it crosses a kink of a
        piecewise-linear op before the entry is skipped.

    Returns
    -------
    float
        Worst per-tensor relative error
        max|a - n| / max(max|a|, max|n|, 1e-10).
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            logger.warning('grad_check on {} data; use float64 for tight '
                           'tolerances'.format(t.data.dtype))
        t.grad = None

    with record_branches() as base_pattern:
        loss = fn()
    if loss.size != 1:
        raise ValueError('grad_check needs a scalar-valued function.')
    loss.backward()
    base_pattern = list(base_pattern)

    rng = make_rng(seed)
    worst = 0.0
    skipped = 0

    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        if max_entries is None or max_entries >= flat.size:
            entries = np.arange(flat.size)
        else:
            entries = rng.choice(flat.size, size=max_entries, replace=False)

        a_vals, n_vals = [], []
        for idx in entries:
            orig = flat[idx]
            step = eps
            numeric = None
            for _ in range(max_shrink + 1):
                with no_grad():
                    flat[idx] = orig + step
                    with record_branches() as plus_pattern:
                        f_plus = float(fn().data)
                    flat[idx] = orig - step
                    with record_branches() as minus_pattern:
                        f_minus = float(fn().data)
                    flat[idx] = orig
                if _same_branches(base_pattern, plus_pattern) and \
                        _same_branches(base_pattern, minus_pattern):
                    numeric = (f_plus - f_minus) / (2 * step)
                    break
                step *= 0.1

            if numeric is None:
                skipped += 1
                continue
            a_vals.append(analytic.reshape(-1)[idx])
            n_vals.append(numeric)

        if not a_vals:
            continue
        a_vals, n_vals = np.array(a_vals), np.array(n_vals)
        scale = max(np.abs(a_vals).max(), np.abs(n_vals).max(), 1e-10)
        err = np.abs(a_vals - n_vals).max() / scale
        logger.debug('grad_check {}: rel err {:.3e}'.format(t, err))
        worst = max(worst, err)

    if skipped:
        logger.info('grad_check skipped {:d} entries crossing a kink'
                    ''.format(skipped))
    for t in tensors:
        t.grad = None

    return worst
