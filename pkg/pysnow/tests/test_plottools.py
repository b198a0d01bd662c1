import os

import pytest
import numpy as np

import pysnow.ImageCore as Ic
import pysnow.Degrade as Dg
import pysnow.Restore as Rs
import pysnow.Train as Tr
import pysnow.PlotTools as Pt


@pytest.fixture()
def scene(request):
    rng = np.random.default_rng(4)
    clean = Ic.Image(rng.uniform(0.1, 0.5, (32, 32, 3)))
    params = Dg.DegradeParams(n_min=2, n_max=4, m_min=4, m_max=8)
    distorted, _ = Dg.degrade(clean, Dg.PatchSet.procedural(4, seed=0),
                              params, seed=1)
    return clean, distorted


def test_plot_history(tmp_path):
    history = Tr.History(loss_names=Tr.UNET_LOSSES)
    for epoch, (a, b) in enumerate([(0.3, 0.35), (0.2, 0.26)], start=1):
        history.append(epoch, a, b, 1.0)
    path = str(tmp_path / 'history.png')
    Pt.plot_history(history, path, title='U-Net losses')
    assert os.path.getsize(path) > 0


def test_plot_patch_grid(tmp_path):
    path = str(tmp_path / 'grid.png')
    Pt.plot_patch_grid(Dg.PatchSet.procedural(6, seed=2), path, ncols=4)
    assert os.path.getsize(path) > 0


def test_plot_comparison(tmp_path, scene):
    clean, distorted = scene
    restored = Rs.median_filter(distorted, 3)
    path = str(tmp_path / 'compare.png')
    Pt.plot_comparison([clean, distorted, restored, Ic.to_grayscale(clean)],
                       ['clean', 'distorted', 'median 3x3', 'luma'], path)
    assert os.path.getsize(path) > 0


def test_plot_comparison_needs_labels(scene):
    with pytest.raises(ValueError):
        Pt.plot_comparison(list(scene), ['clean'])
