"""
Command-line entry point: pysnow <subcommand> [options].

Every subcommand accepts --config (YAML or JSON, nested sections flattened
to dotted keys), --seed, --deterministic or --no-deterministic, --threads
and --verbose.  Flags override file values, and the effective configuration
is written as run_config.json into the output directory of every run.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import os
import sys
import logging
import argparse

from tqdm import tqdm

from . import ImageCore as Ic
from . import Degrade as Dg
from . import DataTools as Dt
from . import Models as Mdl
from . import Train as Tr
from . import Restore as Rs
from . import Metrics as Mt
from . import PlotTools as Pt
from .SnowUtils import ConfigError, load_config, merge_overrides, section, \
    write_config_snapshot, default_threads, THREADS_ENV

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

DEFAULT_SEED = 0


def _global_options():
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group('global options')
    group.add_argument('--config', help='YAML/JSON run configuration; flags '
                                        'override its values')
    group.add_argument('--seed', type=int, default=None,
                       help='root random seed (default {})'.format(
                           DEFAULT_SEED))
    group.add_argument('--deterministic', action='store_true', default=None,
                       help='sequential execution; identical seed and '
                            'inputs give bit-identical outputs')
    group.add_argument('--no-deterministic', dest='deterministic',
                       action='store_false', default=None,
                       help='allow threaded execution even when the '
                            'configuration sets deterministic')
    group.add_argument('--threads', type=int, default=None,
                       help='worker threads (default ${} or 1)'.format(
                           THREADS_ENV))
    group.add_argument('--verbose', action='store_true',
                       help='debug logging on stderr')
    return parent


def build_parser():
    parent = _global_options()
    parser = argparse.ArgumentParser(
        prog='pysnow',
        description='Marine-snow synthesis, removal and evaluation.')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('gen-snow', parents=[parent],
                       help='write synthetic marine-snow patches')
    p.add_argument('--weights', help='generator weights (.msnw); '
                                     'procedural blobs when omitted')
    p.add_argument('--n', type=int, default=None, help='number of patches')
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--preview', action='store_true',
                   help='also write preview.png')
    p.set_defaults(func=cmd_gen_snow)

    p = sub.add_parser('build-dataset', parents=[parent],
                       help='build and split the paired dataset')
    p.add_argument('--src', required=True, help='clean source images')
    p.add_argument('--patches', help='snow patch directory; procedural '
                                     'patches when omitted')
    p.add_argument('--out', required=True, help='dataset directory')
    p.add_argument('--target', type=int, default=None,
                   help='view side length (default 384)')
    p.add_argument('--fractions', type=float, nargs=3, default=None,
                   metavar=('TRAIN', 'VAL', 'TEST'))
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser('train-gan', parents=[parent],
                       help='train the WGAN patch generator')
    p.add_argument('--patches', help='real patch directory; procedural '
                                     'patches when omitted')
    p.add_argument('--run-dir', required=True)
    p.add_argument('--epochs', type=int, default=None)
    p.add_argument('--batch-size', type=int, default=None)
    p.add_argument('--max-steps', type=int, default=None)
    p.set_defaults(func=cmd_train_gan)

    p = sub.add_parser('train-unet', parents=[parent],
                       help='train the U-Net remover')
    p.add_argument('--manifest', required=True)
    p.add_argument('--run-dir', required=True)
    p.add_argument('--feature-weights',
                   help='feature-net weights (.msnw) for the perceptual loss')
    p.add_argument('--epochs', type=int, default=None)
    p.add_argument('--batch-size', type=int, default=None)
    p.add_argument('--gamma', type=float, default=None)
    p.add_argument('--max-steps', type=int, default=None)
    p.set_defaults(func=cmd_train_unet)

    for name, methods, helptext in (
            ('denoise', sorted(Rs.METHODS), 'remove marine snow'),
            ('baseline', list(Rs.CLASSICAL_METHODS),
             'classical filter baselines')):
        p = sub.add_parser(name, parents=[parent], help=helptext)
        p.add_argument('--method', required=True, choices=methods)
        p.add_argument('--in', dest='in_dir', required=True)
        p.add_argument('--out', required=True)
        p.add_argument('--weights', help='U-Net weights (.msnw)')
        p.add_argument('--s-max', type=int, default=None,
                       help='largest adaptive-median window (default 7)')
        p.set_defaults(func=cmd_denoise)

    p = sub.add_parser('evaluate', parents=[parent],
                       help='score candidates against references')
    p.add_argument('--ref', required=True)
    p.add_argument('--cand', required=True)
    p.add_argument('--label', default=None)
    p.add_argument('--out', required=True, help='report CSV path')
    p.set_defaults(func=cmd_evaluate)

    return parser


class RunContext(object):
    """Effective configuration of one invocation."""

    def __init__(self, args):
        flat = load_config(args.config) if args.config else {}
        self.flat = merge_overrides(flat, {'seed': args.seed,
                                           'deterministic':
                                               args.deterministic,
                                           'threads': args.threads})
        self.flat.setdefault('seed', DEFAULT_SEED)
        self.flat.setdefault('deterministic', False)
        self.flat.setdefault('threads', default_threads())
        self.flat['command'] = args.command

    @property
    def seed(self):
        return int(self.flat['seed'])

    @property
    def deterministic(self):
        return bool(self.flat['deterministic'])

    @property
    def threads(self):
        return 1 if self.deterministic else int(self.flat['threads'])

    def get(self, key, override=None, default=None):
        """Resolve a dotted key: flag override, then file, then default."""
        if override is not None:
            self.flat[key] = override
        elif key not in self.flat and default is not None:
            self.flat[key] = default
        return self.flat.get(key)

    def options(self, name, overrides):
        values = section(self.flat, name)
        for key, value in overrides.items():
            if value is not None:
                values[key] = value
                self.flat['{}.{}'.format(name, key)] = value
        return values

    def snapshot(self, out_dir):
        return write_config_snapshot(self.flat, out_dir)


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise ConfigError('{} directory not found: {}'.format(what, path))


def _patchset(ctx, patch_dir, n_default=64):
    if patch_dir:
        _require_dir(patch_dir, 'patch')
        return Dg.PatchSet.from_directory(patch_dir)
    n = int(ctx.get('patches.procedural_n', default=n_default))
    logger.info('No patch directory given; using {:d} procedural patches'
                ''.format(n))
    return Dg.PatchSet.procedural(n, ctx.seed)


def cmd_gen_snow(args, ctx):
    n = int(ctx.get('gen_snow.n', args.n, default=12))
    if n < 1:
        raise ConfigError('gen-snow: --n must be >= 1 (got {})'.format(n))

    weights = ctx.get('gen_snow.weights', args.weights)
    if weights:
        patches = Mdl.generate_patches(Mdl.load_weights(weights), n, ctx.seed)
    else:
        patches = Dg.PatchSet.procedural(n, ctx.seed)

    paths = patches.save(args.out)
    if args.preview:
        Pt.plot_patch_grid(patches, os.path.join(args.out, 'preview.png'))
    ctx.snapshot(args.out)
    print('wrote {:d} patches to {}'.format(len(paths), args.out))
    return EXIT_OK


def cmd_build_dataset(args, ctx):
    _require_dir(args.src, 'source')
    params = Dg.DegradeParams.from_dict(section(ctx.flat, 'degrade'))
    problems = params.validate()
    target = int(ctx.get('build_dataset.target', args.target,
                         default=Dt.TARGET_SIZE))
    fractions = ctx.get('build_dataset.fractions', args.fractions,
                        default=list(Dt.DEFAULT_FRACTIONS))
    if target < params.m_max:
        problems.append('build-dataset: target must be >= m_max ({})'.format(
            params.m_max))
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-6:
        problems.append('build-dataset: fractions must be three values '
                        'summing to 1')
    if problems:
        raise ConfigError(problems)
    for key, value in params.to_dict().items():
        ctx.flat['degrade.' + key] = value

    patches = _patchset(ctx, args.patches)
    manifest = Dt.build_dataset(args.src, patches, params, args.out,
                                ctx.seed, target=target,
                                deterministic=ctx.deterministic,
                                threads=ctx.threads)
    manifest = Dt.split(manifest, fractions, ctx.seed)
    Dt.write_manifest(manifest, os.path.join(args.out, Dt.MANIFEST_NAME))
    ctx.snapshot(args.out)
    print(manifest.summary())
    return EXIT_OK


def cmd_train_gan(args, ctx):
    values = ctx.options('train_gan', {'epochs': args.epochs,
                                       'batch_size': args.batch_size,
                                       'max_steps': args.max_steps})
    values.setdefault('seed', ctx.seed)
    values.setdefault('deterministic', ctx.deterministic)
    cfg = Tr.WGANConfig.from_dict(values)
    problems = cfg.validate()
    if problems:
        raise ConfigError(problems)

    patches = _patchset(ctx, args.patches)
    for key, value in cfg.to_dict().items():
        ctx.flat['train_gan.' + key] = value
    ctx.snapshot(args.run_dir)

    _, _, history = Tr.train_wgan(patches, cfg, run_dir=args.run_dir,
                                  progress=True)
    Pt.plot_history(history, os.path.join(args.run_dir, 'history.png'),
                    title='WGAN losses')
    print('trained {:d} epochs; weights in {}'.format(len(history),
                                                      args.run_dir))
    return EXIT_OK


def cmd_train_unet(args, ctx):
    values = ctx.options('train_unet', {'epochs': args.epochs,
                                        'batch_size': args.batch_size,
                                        'gamma': args.gamma,
                                        'max_steps': args.max_steps})
    values.setdefault('seed', ctx.seed)
    values.setdefault('deterministic', ctx.deterministic)
    values.setdefault('threads', ctx.threads)
    cfg = Tr.UNetConfig.from_dict(values)
    problems = cfg.validate()
    if not os.path.exists(args.manifest):
        problems.append('train-unet: manifest not found: {}'.format(
            args.manifest))
    if problems:
        raise ConfigError(problems)

    manifest = Dt.read_manifest(args.manifest)
    phi = None
    if cfg.gamma > 0:
        phi = Mdl.build_feature_net(cfg.feature_seed,
                                    weights_path=args.feature_weights)
    for key, value in cfg.to_dict().items():
        ctx.flat['train_unet.' + key] = value
    ctx.snapshot(args.run_dir)

    _, history = Tr.train_unet(manifest, cfg, phi=phi, run_dir=args.run_dir,
                               progress=True)
    Pt.plot_history(history, os.path.join(args.run_dir, 'history.png'),
                    title='U-Net losses')
    print('trained {:d} epochs; best weights in {}'.format(
        len(history), os.path.join(args.run_dir, 'best.msnw')))
    return EXIT_OK


def _output_format(fname):
    ext = os.path.splitext(fname)[1].lower().lstrip('.')
    return ext if ext in ('png', 'ppm', 'pgm') else 'png'


def cmd_denoise(args, ctx):
    _require_dir(args.in_dir, 'input')
    s_max = int(ctx.get('denoise.s_max', args.s_max, default=7))
    weights = ctx.get('denoise.weights', args.weights)
    spec = Rs.FilterSpec.from_method(args.method, s_max=s_max,
                                     weights=weights)
    problems = spec.validate()
    if problems:
        raise ConfigError(problems)
    ctx.flat['denoise.method'] = args.method

    restorer = Rs.Restorer(spec)
    paths = Ic.list_images(args.in_dir)
    os.makedirs(args.out, exist_ok=True)
    for path in tqdm(paths, desc=args.command, unit='img'):
        fname = os.path.basename(path)
        restored = restorer(Ic.load_image(path))
        Ic.save_image(restored, os.path.join(args.out, fname),
                      format=_output_format(fname))

    ctx.snapshot(args.out)
    print('{}: wrote {:d} images to {}'.format(args.method, len(paths),
                                               args.out))
    return EXIT_OK


def cmd_evaluate(args, ctx):
    _require_dir(args.ref, 'reference')
    _require_dir(args.cand, 'candidate')
    ref_names = {os.path.basename(p) for p in Ic.list_images(args.ref)}
    cand_names = {os.path.basename(p) for p in Ic.list_images(args.cand)}
    if ref_names != cand_names:
        problems = []
        if ref_names - cand_names:
            problems.append('missing from candidates: {}'.format(
                ', '.join(sorted(ref_names - cand_names))))
        if cand_names - ref_names:
            problems.append('missing from references: {}'.format(
                ', '.join(sorted(cand_names - ref_names))))
        raise ConfigError(problems)
    if not ref_names:
        raise ConfigError('evaluate: no images in {}'.format(args.ref))

    names = sorted(ref_names)
    pairs = [(Ic.load_image(os.path.join(args.ref, n)),
              Ic.load_image(os.path.join(args.cand, n))) for n in names]
    label = ctx.get('evaluate.label', args.label,
                    default=os.path.basename(os.path.normpath(args.cand)))
    report = Mt.evaluate_pairs(pairs, label=label, ids=names)

    report.to_csv(args.out)
    report.to_json(os.path.splitext(args.out)[0] + '.json')
    ctx.snapshot(os.path.dirname(os.path.abspath(args.out)))
    print(report.summary())
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        stream=sys.stderr,
                        format='%(asctime)s %(name)s %(levelname)s: '
                               '%(message)s')

    try:
        ctx = RunContext(args)
        return args.func(args, ctx)
    except ConfigError as e:
        logger.error(str(e))
        print('pysnow {}: {}'.format(args.command, e), file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.error('{} failed: {}'.format(args.command, e))
        logger.debug('Traceback', exc_info=True)
        print('pysnow {}: {}'.format(args.command, e), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
