"""Command line: python -m chromaquery {train,colorize,metrics,visualize-queries,ablate}.

Exit codes: 0 success, 1 usage error, 2 partial failure, 3 fatal.
"""
import argparse
import logging
import sys
from collections import Counter
from pathlib import Path

import torch.nn.functional as F

from chromaquery import cqcolorspace, cqfiles, cqfusion, cqmethods, cqmetrics, cqtrainer
from chromaquery.cqdata import ChromaQueryError, ConfigError, ExitCode, RgbImage

log = logging.getLogger(__name__)

MULTIPLE = 32


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def pad_to_multiple(x, multiple=MULTIPLE):
    """Reflect-pad the bottom/right edges of B×C×H×W up to the next multiple.
    Falls back to edge replication when the image is too small to reflect."""
    h, w = x.shape[-2:]
    pad_h = -h % multiple
    pad_w = -w % multiple
    if not pad_h and not pad_w:
        return x, (h, w)
    mode = 'reflect' if pad_h < h and pad_w < w else 'replicate'
    return F.pad(x, (0, pad_w, 0, pad_h), mode=mode), (h, w)


def luminance_of(rgb: RgbImage):
    """1×1×H×W luminance; color inputs lose their chroma here."""
    lab = cqcolorspace.rgb_to_lab(rgb.to_tensor().unsqueeze(0))
    return cqcolorspace.split_luminance(lab)[0]


def colorize_image(model, rgb: RgbImage):
    """3×H×W Lab result at the input's own size."""
    x_L, (h, w) = pad_to_multiple(luminance_of(rgb))
    return cqfusion.colorize(x_L, model)[0, :, :h, :w]


def _inputs(path):
    path = Path(path)
    if path.is_dir():
        return cqfiles.list_images(path)
    return [path]


def _output_stems(paths):
    """Output name per input: the stem, or stem_ext when two inputs share a stem."""
    counts = Counter(p.stem for p in paths)
    names = {}
    used = set()
    for p in paths:
        if counts[p.stem] > 1:
            name = base = '{}_{}'.format(p.stem, p.suffix.lstrip('.').lower())
            n = 1
            while name in used:
                # same stem and extension in different subfolders
                name = '{}_{}'.format(base, n)
                n += 1
            used.add(name)
            names[p] = name
            log.warning('%s shares its name with another input, writing %s.png', p, names[p])
        else:
            names[p] = p.stem
    return names


def cmd_train(args):
    cfg = cqmethods.load_cfg(config_file=args.config, overrides=args.set)
    output_dir = args.output_dir or cfg.train.output_dir
    if args.resume:
        if not Path(args.resume).is_file():
            raise _UsageError('checkpoint {} does not exist'.format(args.resume))
        if args.config:
            raise _UsageError('--config cannot be combined with --resume; the checkpoint carries its config')
        trainer = cqtrainer.Trainer.from_checkpoint(args.resume, output_dir=output_dir, show_progress=args.progress,
                                                    overrides=args.set)
    else:
        trainer = cqtrainer.Trainer(cfg, output_dir=output_dir, show_progress=args.progress)
    history = trainer.fit()
    if history:
        log.info('finished at iteration %d, L_total %.4f', trainer.iteration, history[-1]['L_total'])
    return ExitCode.SUCCESS


def cmd_colorize(args):
    if not Path(args.checkpoint).is_file():
        raise _UsageError('checkpoint {} does not exist'.format(args.checkpoint))
    if not Path(args.input).exists():
        raise _UsageError('input {} does not exist'.format(args.input))
    model, _ = cqtrainer.load_generator(args.checkpoint)
    out_dir = Path(args.output_dir)
    failures = 0
    paths = _inputs(args.input)
    names = _output_stems(paths)
    for path in paths:
        try:
            rgb = cqfiles.load_image(path)
        except (OSError, ValueError) as e:
            log.warning('skipping %s: %s', path, e)
            failures += 1
            continue
        lab = colorize_image(model, rgb)
        cqfiles.save_image(out_dir / (names[path] + '.png'), RgbImage.from_tensor(cqcolorspace.lab_to_rgb(lab)))
        if args.raw:
            cqfiles.save_raw(out_dir / (names[path] + '.npy'), lab.permute(1, 2, 0).numpy())
        log.info('colorized %s', path)
    if failures:
        log.warning('%d of %d inputs failed', failures, len(paths))
        return ExitCode.PARTIAL
    return ExitCode.SUCCESS


def cmd_visualize_queries(args):
    if not Path(args.checkpoint).is_file():
        raise _UsageError('checkpoint {} does not exist'.format(args.checkpoint))
    if not Path(args.image).is_file():
        raise _UsageError('image {} does not exist'.format(args.image))
    model, _ = cqtrainer.load_generator(args.checkpoint)
    rgb = cqfiles.load_image(args.image)
    x_L, (h, w) = pad_to_multiple(luminance_of(rgb))
    maps = model.query_maps(x_L)[0, :, :h, :w]
    out_dir = Path(args.output_dir)
    for k, heat in enumerate(maps):
        cqfiles.save_heatmap(out_dir / 'query_{:03d}.png'.format(k), heat.numpy())
    if args.raw:
        cqfiles.save_raw(out_dir / 'query_maps.npy', maps.numpy())
    lab = cqfusion.colorize(x_L, model)[0, :, :h, :w]
    cqfiles.save_image(out_dir / 'colorized.png', RgbImage.from_tensor(cqcolorspace.lab_to_rgb(lab)))
    log.info('wrote %d query maps to %s', maps.shape[0], out_dir)
    return ExitCode.SUCCESS


def cmd_metrics(args):
    for d in (args.gen_dir, args.gt_dir):
        if not Path(d).is_dir():
            raise _UsageError('{} is not a directory'.format(d))
    embedder = cqmetrics.RandomEmbedder(seed=args.seed) if args.embedder == 'random' else None
    report = cqmetrics.evaluate_directories(args.gen_dir, args.gt_dir, peak=args.peak, embedder=embedder)
    sys.stdout.write(cqfiles.format_report_lines(report))
    if args.output:
        cqfiles.write_report(args.output, report)
    if report['n_excluded'] or (embedder is not None and report['fid'] is None):
        return ExitCode.PARTIAL
    return ExitCode.SUCCESS


def cmd_ablate(args):
    cfg = cqmethods.load_cfg(config_file=args.config, overrides=args.set)
    total_iters = args.iters if args.iters is not None else cfg.train.total_iters
    report = cqtrainer.run_ablation(args.name, cfg, total_iters=total_iters, output_dir=args.output_dir)
    for label, variant in report['variants'].items():
        sys.stdout.write('{} cf_gen={:.4f} delta_cf={:.4f} final_loss={:.4f}\n'.format(
            label, variant['cf_gen'], variant['delta_cf'], variant['final_loss']))
    if not all(v['finite'] for v in report['variants'].values()):
        return ExitCode.PARTIAL
    return ExitCode.SUCCESS


def build_parser():
    parser = _Parser(prog='chromaquery', description='Dual-decoder image colorization.')
    parser.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    def with_config(p):
        p.add_argument('--config', help='flat "key = value" config file')
        p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                       help='override one config key; repeatable')

    p = sub.add_parser('train', help='train a colorizer')
    with_config(p)
    p.add_argument('--output-dir', help='run directory (default: train.output_dir)')
    p.add_argument('--resume', help='checkpoint to continue from; its config snapshot wins')
    p.add_argument('--progress', action='store_true', help='show a progress bar')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('colorize', help='colorize an image or a folder of images')
    p.add_argument('checkpoint')
    p.add_argument('input', help='image file or directory')
    p.add_argument('output_dir')
    p.add_argument('--raw', action='store_true', help='also write float Lab arrays as .npy')
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser('visualize-queries', help='per-query attention heatmaps for one image')
    p.add_argument('checkpoint')
    p.add_argument('image')
    p.add_argument('output_dir')
    p.add_argument('--raw', action='store_true', help='also write the K×H×W maps as .npy')
    p.set_defaults(func=cmd_visualize_queries)

    p = sub.add_parser('metrics', help='CF, ΔCF, PSNR and Fréchet distance between two folders')
    p.add_argument('gen_dir')
    p.add_argument('gt_dir')
    p.add_argument('--peak', type=float, default=255.0, help='PSNR peak: 255 for 8-bit, 1 for unit range')
    p.add_argument('--embedder', choices=('none', 'random'), default='none',
                   help='embedder for the Fréchet distance (none skips it)')
    p.add_argument('--seed', type=int, default=0, help='random embedder seed')
    p.add_argument('--output', help='write the report as JSON here (plus a .txt twin)')
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser('ablate', help='train every variant of one ablation')
    with_config(p)
    p.add_argument('name', choices=cqmethods.ABLATIONS)
    p.add_argument('--iters', type=int, help='iterations per variant (default: train.total_iters)')
    p.add_argument('--output-dir', default='', help='write per-variant runs and the report here')
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        sys.stderr.write('chromaquery: error: {}\n'.format(e))
        return ExitCode.USAGE.value
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args).value
    except (_UsageError, ConfigError) as e:
        log.error('%s', e)
        return ExitCode.USAGE.value
    except (ChromaQueryError, OSError, ValueError) as e:
        log.error('%s', e)
        return ExitCode.FATAL.value
