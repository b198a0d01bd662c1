import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import matplotlib.gridspec as gs
import numpy as np


INTERACTIVE_PLOT = False


def _finish(fig, savefile):
    plt.tight_layout()

    if savefile is not None:
        plt.savefig(savefile, format='png', dpi=150)

    if INTERACTIVE_PLOT:
        plt.show()

    plt.close(fig)


def plot_history(history, savefile=None, title=None):
    """Both loss columns of a History against epoch."""
    epochs = history.column('epoch')
    first, second = history.loss_names

    fig = plt.figure(figsize=(6, 4))
    ax = fig.add_subplot(111)
    ax.plot(epochs, history.column(first), color='C0', marker='o',
            label=first.replace('_', ' '))
    ax.plot(epochs, history.column(second), color='C1', marker='s',
            label=second.replace('_', ' '))
    ax.set_xlabel('Epoch')
    ax.set_ylabel('Loss')
    if title is not None:
        ax.set_title(title)
    ax.legend(loc='best')

    _finish(fig, savefile)


def _show(ax, data, label=None):
    if data.shape[2] == 1:
        ax.imshow(data[:, :, 0], cmap='gray', vmin=0, vmax=1,
                  interpolation='nearest')
    else:
        ax.imshow(np.clip(data, 0, 1), interpolation='nearest')
    ax.set_xticks([])
    ax.set_yticks([])
    if label is not None:
        ax.set_title(label, fontsize=9)


def plot_patch_grid(patchset, savefile=None, ncols=4, title=None):
    """Grid preview of snow patches, ncols per row."""
    n = len(patchset)
    nrows = int(np.ceil(n / ncols))

    fig = plt.figure(figsize=(1.5 * ncols, 1.5 * nrows))
    spec = gs.GridSpec(nrows, ncols, wspace=0.05, hspace=0.05)
    for i in range(n):
        ax = plt.subplot(spec[i])
        _show(ax, patchset[i].data)
    if title is not None:
        fig.suptitle(title)

    _finish(fig, savefile)


def plot_comparison(images, labels, savefile=None):
    """Side-by-side panels, e.g. clean / distorted / restored."""
    if len(images) != len(labels):
        raise ValueError('Need one label per image.')

    fig = plt.figure(figsize=(3 * len(images), 3.3))
    spec = gs.GridSpec(1, len(images))
    for i, (img, label) in enumerate(zip(images, labels)):
        _show(plt.subplot(spec[i]), img.data, label)

    _finish(fig, savefile)
