import os

import pytest
import numpy as np
from scipy import ndimage

import pysnow.ImageCore as Ic
import pysnow.Degrade as Dg
import pysnow.DataTools as Dt
import pysnow.Models as Mdl
import pysnow.Metrics as Mt
import pysnow.Restore as Rs
import pysnow.Tensor as T
import pysnow.Train as Tr


@pytest.fixture()
def wgan_cfg(request):
    return Tr.WGANConfig(epochs=2, batch_size=8, n_critic=2, z_dim=8,
                         generator_channels=8, critic_channels=4, seed=3)


@pytest.fixture()
def patches(request):
    return Dg.PatchSet.procedural(16, seed=0)


@pytest.fixture()
def unet_cfg(request):
    return Tr.UNetConfig(epochs=2, batch_size=2, depth=2, base_channels=4,
                         gamma=0.0, seed=1)


@pytest.fixture()
def pairs(request):
    rng = np.random.default_rng(5)
    clean = rng.uniform(0.2, 0.6, (4, 3, 8, 8)).astype(np.float32)
    distorted = np.clip(clean + rng.uniform(0, 0.4, clean.shape), 0, 1)
    return clean, distorted.astype(np.float32)


def test_default_configs_are_valid():
    assert Tr.WGANConfig().validate() == []
    assert Tr.UNetConfig().validate() == []
    assert Tr.WGANConfig().learning_rate == 5e-5
    assert Tr.UNetConfig().eps == 1e-7


def test_config_validation_collects_problems():
    cfg = Tr.WGANConfig(epochs=0, batch_size=0, optimizer='sgd', clip=0.0)
    assert len(cfg.validate()) == 4

    cfg = Tr.UNetConfig(gamma=-1.0, beta1=1.0, max_steps=0)
    assert len(cfg.validate()) == 3


def test_config_from_dict_ignores_unknown_keys():
    cfg = Tr.UNetConfig.from_dict({'gamma': 0.25, 'color': 'blue'})
    assert cfg.gamma == 0.25
    assert cfg.to_dict()['gamma'] == 0.25


def test_history_rejects_non_finite():
    history = Tr.History(loss_names=Tr.WGAN_LOSSES)
    history.append(1, -0.5, 0.2, 1.0)
    with pytest.raises(Tr.NonFiniteLossError):
        history.append(2, np.nan, 0.2, 1.0)
    assert len(history) == 1


def test_history_optional_column_takes_nan_only():
    history = Tr.History(loss_names=Tr.WGAN_LOSSES,
                         optional=('generator_loss',))
    history.append(1, -0.5, np.nan, 1.0)
    with pytest.raises(Tr.NonFiniteLossError):
        history.append(2, -0.5, np.inf, 1.0)
    with pytest.raises(Tr.NonFiniteLossError):
        history.append(2, np.nan, 0.1, 1.0)
    assert len(history) == 1


def test_wgan_epoch_without_generator_update_records_nan(tmp_path, patches,
                                                          wgan_cfg):
    # 16 patches in batches of 8: two critic steps per epoch
    cfg = Tr.WGANConfig(**dict(wgan_cfg.to_dict(), n_critic=3))
    steps = []
    _, _, history = Tr.train_wgan(
        patches, cfg, run_dir=str(tmp_path),
        on_step=lambda kind, step, g, c: steps.append(kind))

    assert steps.count('generator') == 1
    g_col = history.column('generator_loss')
    assert np.isnan(g_col[0])
    assert np.isfinite(g_col[1])
    assert all(np.isfinite(history.column('critic_loss')))

    loaded = Tr.read_history(str(tmp_path / 'history.csv'))
    assert loaded.optional == ('generator_loss',)
    assert np.isnan(loaded.column('generator_loss')[0])
    assert loaded.column('generator_loss')[1] == g_col[1]


def test_history_csv_round_trip(tmp_path):
    history = Tr.History(loss_names=Tr.UNET_LOSSES)
    history.append(1, 0.125, 0.25, 3.5)
    history.append(2, 0.1 / 3, 0.2, 3.25)
    path = str(tmp_path / 'history.csv')
    Tr.export_history(history, path)

    with open(path) as f:
        assert f.readline().strip() == 'epoch,train_loss,val_loss,seconds'
    loaded = Tr.read_history(path)
    assert loaded == history


def test_train_wgan_clips_critic(tmp_path, patches, wgan_cfg):
    seen = {'critic': 0, 'generator': 0}

    def on_step(kind, step, generator, critic):
        seen[kind] += 1
        if kind == 'critic':
            for p in critic.parameters():
                assert np.abs(p.data).max() <= wgan_cfg.clip

    gen, critic, history = Tr.train_wgan(patches, wgan_cfg,
                                         run_dir=str(tmp_path),
                                         on_step=on_step)

    assert seen == {'critic': 4, 'generator': 2}
    assert len(history) == 2
    assert history.loss_names == Tr.WGAN_LOSSES
    assert all(np.isfinite(history.column('critic_loss')))
    for name in ('generator.msnw', 'critic.msnw', 'history.csv'):
        assert os.path.exists(str(tmp_path / name))
    assert Mdl.load_weights(str(tmp_path / 'generator.msnw')) == gen
    assert all(np.abs(v).max() <= wgan_cfg.clip
               for v in critic.tensors.values())


def test_train_wgan_is_reproducible(patches, wgan_cfg):
    a, _, hist_a = Tr.train_wgan(patches, wgan_cfg)
    b, _, hist_b = Tr.train_wgan(patches, wgan_cfg)
    assert a == b
    assert hist_a.column('critic_loss') == hist_b.column('critic_loss')


def test_train_wgan_max_steps(patches, wgan_cfg):
    cfg = Tr.WGANConfig(**dict(wgan_cfg.to_dict(), epochs=5, max_steps=1))
    _, _, history = Tr.train_wgan(patches, cfg)
    assert len(history) == 1


def test_train_wgan_checkpoints(tmp_path, patches, wgan_cfg):
    cfg = Tr.WGANConfig(**dict(wgan_cfg.to_dict(), checkpoint_every=1))
    Tr.train_wgan(patches, cfg, run_dir=str(tmp_path))
    assert os.path.exists(str(tmp_path / 'epoch_1.msnw'))
    assert os.path.exists(str(tmp_path / 'epoch_2.msnw'))


def test_train_wgan_rejects_empty_patches(wgan_cfg):
    with pytest.raises(ValueError):
        Tr.train_wgan(np.zeros((0, 32, 32)), wgan_cfg)


def test_train_wgan_rejects_bad_config(patches):
    with pytest.raises(ValueError):
        Tr.train_wgan(patches, Tr.WGANConfig(n_critic=0))


def test_train_unet_on_arrays(tmp_path, pairs, unet_cfg):
    clean, distorted = pairs
    best, history = Tr.train_unet_on_arrays(clean, distorted, unet_cfg,
                                            run_dir=str(tmp_path))

    assert len(history) == 2
    assert history.loss_names == Tr.UNET_LOSSES
    assert os.path.exists(str(tmp_path / 'best.msnw'))
    assert Mdl.load_weights(str(tmp_path / 'best.msnw')) == best
    assert min(history.column('val_loss')) == pytest.approx(
        Tr.evaluate_unet(Mdl.network_from_store(best),
                         [(clean[:2], distorted[:2]),
                          (clean[2:], distorted[2:])], None, 0.0), rel=1e-5)


def test_train_unet_max_steps(pairs, unet_cfg):
    cfg = Tr.UNetConfig(**dict(unet_cfg.to_dict(), epochs=4, max_steps=3))
    _, history = Tr.train_unet_on_arrays(*pairs, cfg)
    assert len(history) == 2


def test_train_unet_rejects_mismatched_arrays(unet_cfg):
    with pytest.raises(ValueError):
        Tr.train_unet_on_arrays(np.zeros((2, 3, 8, 8)),
                                np.zeros((2, 3, 4, 4)), unet_cfg)


@pytest.mark.slow
def test_unet_overfits_tiny_set(pairs):
    cfg = Tr.UNetConfig(epochs=40, batch_size=4, depth=2, base_channels=4,
                        gamma=0.0, learning_rate=0.01, seed=0)
    _, history = Tr.train_unet_on_arrays(*pairs, cfg)
    losses = history.column('train_loss')
    assert losses[-1] < losses[0]


@pytest.mark.slow
def test_train_unet_from_manifest(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / 'src'
    src.mkdir()
    for name in ('a.png', 'b.png', 'c.png'):
        Ic.save_image(Ic.Image(rng.random((20, 24, 3))), str(src / name))

    params = Dg.DegradeParams(n_min=1, n_max=2, m_min=2, m_max=8)
    manifest = Dt.build_dataset(str(src), Dg.PatchSet.procedural(3, seed=0),
                                params, str(tmp_path / 'data'), seed=1,
                                target=16, progress=False)
    manifest = Dt.split(manifest, (0.34, 0.33, 0.33), seed=0)

    cfg = Tr.UNetConfig(epochs=1, batch_size=4, depth=2, base_channels=4,
                        gamma=1.0, seed=0)
    best, history = Tr.train_unet(manifest, cfg,
                                  run_dir=str(tmp_path / 'run'))
    assert best is not None
    assert len(history) == 1
    assert os.path.exists(str(tmp_path / 'run' / 'history.csv'))


def test_train_unet_needs_val_split(tmp_path):
    manifest = Dt.Manifest(records=[Dt.PairRecord('c.png', 'd.png', 'r.json',
                                                  'src.png', 'resized',
                                                  'original', 'train')])
    with pytest.raises(ValueError):
        Tr.train_unet(manifest, Tr.UNetConfig())


def _scene(rng, size):
    """Smooth blue-green scene in [0.05, 0.5]."""
    field = ndimage.gaussian_filter(rng.random((size, size, 3)),
                                    sigma=(6, 6, 0))
    field = (field - field.min()) / (field.max() - field.min())
    return Ic.Image((0.1 + 0.4 * field) * np.array([0.5, 0.9, 1.0]))


def _as_batch(images):
    return np.stack([img.data.transpose(2, 0, 1)
                     for img in images]).astype(np.float32)


@pytest.fixture(scope='module')
def overfit_run(request):
    """Depth-4, 16-channel U-Net fitted for 300 Adam steps to 8 pairs."""
    rng = np.random.default_rng(0)
    snow = Dg.PatchSet.procedural(16, seed=0)
    clean = [_scene(rng, 64) for _ in range(8)]
    distorted = [Dg.degrade(img, snow, Dg.DegradeParams(), seed=(0, i))[0]
                 for i, img in enumerate(clean)]

    cfg = Tr.UNetConfig(epochs=300, max_steps=300, batch_size=8, depth=4,
                        base_channels=16, gamma=1.0, seed=0)
    best, history = Tr.train_unet_on_arrays(_as_batch(clean),
                                            _as_batch(distorted), cfg)
    return clean, distorted, cfg, best, history


@pytest.mark.slow
def test_unet_overfits_eight_pairs(overfit_run):
    clean, distorted, cfg, best, history = overfit_run
    assert len(history) == 300

    phi = Mdl.build_feature_net(cfg.feature_seed)
    batches = [(_as_batch(clean), _as_batch(distorted))]
    initial = Mdl.Network(Mdl.build_unet(cfg.depth, cfg.base_channels),
                          seed=cfg.seed)
    start = Tr.evaluate_unet(initial, batches, phi, cfg.gamma)
    final = Tr.evaluate_unet(Mdl.network_from_store(best), batches, phi,
                             cfg.gamma)
    assert final <= 0.1 * start

    before = np.mean([Mt.psnr(c, d) for c, d in zip(clean, distorted)])
    after = np.mean([Mt.psnr(c, Rs.unet_denoise(best, d))
                     for c, d in zip(clean, distorted)])
    assert after >= before + 3.0


@pytest.mark.slow
def test_fitted_unet_beats_median_on_its_pairs(overfit_run):
    clean, distorted, _, best, _ = overfit_run
    unet = np.mean([Mt.psnr(c, Rs.unet_denoise(best, d))
                    for c, d in zip(clean, distorted)])
    median = np.mean([Mt.psnr(c, Rs.median_filter(d, 3))
                      for c, d in zip(clean, distorted)])
    assert unet > median


def _brightness(net, z):
    """Mean generated brightness on [0, 1] with batch statistics."""
    with T.no_grad():
        out = net.copy().forward(z, training=True).data
    return float(((out + 1.0) / 2.0).mean())


@pytest.mark.slow
def test_wgan_mechanics_and_brightness_matching():
    # 160 patches in batches of 32: one generator update per epoch
    patches = Dg.PatchSet.procedural(160, seed=0)
    real = float(patches.patches.mean())
    z_eval = np.random.default_rng(99).standard_normal((256, 16)).astype(
        np.float32)

    shrunk = 0
    for seed in range(3):
        cfg = Tr.WGANConfig(epochs=200, max_steps=200, batch_size=32,
                            z_dim=16, generator_channels=16,
                            critic_channels=8, seed=seed)
        watch_z = z_eval[:8]
        seen = {'critic': 0, 'generator': 0}

        def on_step(kind, step, generator, critic):
            seen[kind] += 1
            for p in critic.parameters():
                assert np.abs(p.data).max() <= cfg.clip
            with T.no_grad():
                out = generator.forward(watch_z, training=False).data
            assert np.all(np.abs(out) < 1.0)

        initial = Mdl.Network(Mdl.build_generator(cfg.generator_channels,
                                                  cfg.z_dim), seed=seed)
        gap_start = abs(_brightness(initial, z_eval) - real)

        gen, _, history = Tr.train_wgan(patches, cfg, on_step=on_step)
        assert seen == {'critic': 1000, 'generator': 200}
        assert all(np.isfinite(history.column('critic_loss')))
        assert all(np.isfinite(history.column('generator_loss')))

        gap_end = abs(_brightness(Mdl.network_from_store(gen), z_eval) -
                      real)
        if gap_end <= 0.8 * gap_start:
            shrunk += 1

    assert shrunk >= 2
