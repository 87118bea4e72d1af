"""Self-supervised GAN training: learning-rate schedule, the Trainer manager
object, checkpoints and ablation sweeps."""
import logging
import math
from pathlib import Path

import torch
from tqdm import tqdm

from chromaquery import cqcolorspace, cqfiles, cqlosses, cqmethods, cqmetrics
from chromaquery.cqdata import ConfigError, NonFiniteError
from chromaquery.cqdataset import DatasetSpec, build_dataset

log = logging.getLogger(__name__)

LOG_HEADER = ('iter', 'lr', 'L_pix', 'L_per', 'L_adv', 'L_col', 'L_total')
CHECKPOINT_NAME = 'checkpoint.pt'
RESUMABLE_PREFIX = 'train.'


def lr_at(iteration, cfg):
    """Piecewise-constant: lr until the first milestone, then ×gamma at it and
    every interval after."""
    if iteration < 0:
        raise ValueError('iteration must be non-negative, got {}'.format(iteration))
    t = cfg.train
    if iteration < t.first_milestone:
        return t.lr
    return t.lr * t.gamma ** (1 + (iteration - t.first_milestone) // t.milestone_interval)


def set_requires_grad(module, requires_grad=True):
    for p in module.parameters():
        p.requires_grad = requires_grad


class Trainer:
    """Owns generator, discriminator, both optimizers and the iteration counter.

    kwargs:
        new_record_callback: called with every per-iteration record dict
        device: torch device (default 'cpu')
        output_dir: where train.log and checkpoints go; '' writes nothing
        show_progress: tqdm bar during fit (default False)
    """

    def __init__(self, cfg, **kwargs):
        cqmethods.validate_cfg(cfg)
        self.cfg = cfg
        self.new_record_callback = kwargs.get('new_record_callback', None)
        self.device = torch.device(kwargs.get('device', 'cpu'))
        self.output_dir = kwargs.get('output_dir', cfg.train.output_dir)
        self.show_progress = kwargs.get('show_progress', False)
        self.iteration = 0
        self.history = []
        self.target_iters = cfg.train.total_iters

        torch.manual_seed(cfg.seed)
        self.generator = cqmethods.build_generator(cfg).to(self.device)
        self.discriminator = cqmethods.build_discriminator(cfg).to(self.device)
        self.extractor = cqmethods.build_extractor(cfg).to(self.device)
        self.gan_loss = cqmethods.build_gan_loss(cfg).to(self.device)
        self.weights = cqmethods.loss_weights(cfg)
        self.optim_g = cqmethods.build_optimizer(cfg, self.generator)
        self.optim_d = cqmethods.build_optimizer(cfg, self.discriminator)
        log.debug('generator has %d parameters', sum(p.numel() for p in self.generator.parameters()))

    @property
    def adversarial(self):
        return self.weights.adv > 0 and self.cfg.train.d_steps > 0

    def _set_lr(self, lr):
        for optim in (self.optim_g, self.optim_d):
            for group in optim.param_groups:
                group['lr'] = lr

    def train_step(self, batch):
        """One discriminator update (when the adversarial term is on), then one
        generator update. Returns the scalar record for this iteration."""
        batch = batch.to(self.device)
        lr = lr_at(self.iteration, self.cfg)
        self._set_lr(lr)
        self.generator.train()
        self.discriminator.train()

        target_ab = cqcolorspace.normalize_ab(batch.y_AB)
        real_rgb = cqcolorspace.lab_batch_to_rgb255(batch.x_L, target_ab, clamp=True) / 255.0
        fake_ab = self.generator(batch.x_L)
        fake_rgb255 = cqcolorspace.lab_batch_to_rgb255(batch.x_L, fake_ab)
        fake_rgb = fake_rgb255 / 255.0

        d_loss = torch.zeros((), device=self.device)
        if self.adversarial:
            set_requires_grad(self.discriminator, True)
            for _ in range(self.cfg.train.d_steps):
                self.optim_d.zero_grad()
                d_loss = self.gan_loss.discriminator_term(self.discriminator, fake_rgb, real_rgb)
                self._check(d_loss, 'discriminator loss')
                d_loss.backward()
                self.optim_d.step()
        set_requires_grad(self.discriminator, False)

        self.optim_g.zero_grad()
        if self.adversarial:
            adv = self.gan_loss.generator_term(self.discriminator, fake_rgb)
        else:
            adv = torch.zeros((), device=self.device)
        terms = cqlosses.LossTerms(
            pix=cqlosses.pixel_loss(fake_ab, target_ab),
            per=cqlosses.perceptual_loss(fake_rgb, real_rgb, self.extractor),
            adv=adv,
            col=cqlosses.colorfulness_loss(fake_rgb255),
        )
        total = cqlosses.total_loss(terms, self.weights)
        for name, value in zip(('L_pix', 'L_per', 'L_adv', 'L_col'), terms):
            self._check(value, name)
        self._check(total, 'L_total')
        total.backward()
        if self.cfg.train.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.generator.parameters(), self.cfg.train.grad_clip)
        self.optim_g.step()

        record = {
            'iter': self.iteration,
            'lr': lr,
            'L_pix': terms.pix.item(),
            'L_per': terms.per.item(),
            'L_adv': terms.adv.item(),
            'L_col': terms.col.item(),
            'L_total': total.item(),
            'L_disc': d_loss.item(),
        }
        self.iteration += 1
        self.history.append(record)
        log.debug('iter %(iter)d lr %(lr).3g total %(L_total).4f', record)
        if self.new_record_callback is not None:
            self.new_record_callback(record)
        return record

    def _check(self, value, name):
        if not torch.isfinite(value).all():
            raise NonFiniteError('{} is non-finite at iteration {}; last checkpoint kept'.format(
                name, self.iteration))

    def data_spec(self, **kwargs):
        return DatasetSpec.from_cfg(self.cfg, **kwargs)

    def fit(self, loader=None, **kwargs):
        """Train until cfg.train.total_iters (or `total_iters`) steps have run.

        Resumes from self.iteration, so a Trainer restored from a checkpoint
        continues where it stopped.
        """
        total_iters = kwargs.get('total_iters', self.cfg.train.total_iters)
        self.target_iters = total_iters
        loader = loader if loader is not None else build_dataset(self.data_spec())
        if len(loader) == 0:
            raise ConfigError('data loader yields no batches')
        if self.output_dir:
            cqfiles.write_config_file(Path(self.output_dir) / 'config.txt', cqmethods.flatten_cfg(self.cfg))
        progress = tqdm(total=total_iters, initial=self.iteration, disable=not self.show_progress,
                        desc='train', unit='it')
        epoch = self.iteration // len(loader)
        try:
            while self.iteration < total_iters:
                if hasattr(loader, 'set_epoch'):
                    loader.set_epoch(epoch)
                for batch in loader:
                    if self.iteration >= total_iters:
                        break
                    record = self.train_step(batch)
                    progress.update(1)
                    progress.set_postfix(loss='{:.4f}'.format(record['L_total']))
                    self._log_record(record)
                    if self.output_dir and self.cfg.train.checkpoint_every > 0 \
                            and self.iteration % self.cfg.train.checkpoint_every == 0:
                        self.save_checkpoint()
                epoch += 1
        except NonFiniteError:
            log.error('training aborted at iteration %d', self.iteration)
            raise
        finally:
            progress.close()
        if self.output_dir:
            self.save_checkpoint()
        return self.history

    def _log_record(self, record):
        if not self.output_dir:
            return
        every = max(1, self.cfg.train.log_every)
        if record['iter'] % every and self.iteration != self.target_iters:
            return
        cqfiles.append_log_line(Path(self.output_dir) / 'train.log',
                                [record[key] for key in LOG_HEADER], header=LOG_HEADER)

    def save_checkpoint(self, path=None):
        path = path or Path(self.output_dir) / CHECKPOINT_NAME
        return cqfiles.save_checkpoint(
            path,
            iteration=self.iteration,
            config=cqmethods.flatten_cfg(self.cfg),
            generator=self.generator.state_dict(),
            discriminator=self.discriminator.state_dict(),
            optim_g=self.optim_g.state_dict(),
            optim_d=self.optim_d.state_dict(),
        )

    def load_state(self, payload):
        self.generator.load_state_dict(payload['generator'])
        self.discriminator.load_state_dict(payload['discriminator'])
        self.optim_g.load_state_dict(payload['optim_g'])
        self.optim_d.load_state_dict(payload['optim_d'])
        self.iteration = payload['iteration']

    @classmethod
    def from_checkpoint(cls, path, **kwargs):
        """Rebuild a Trainer from a checkpoint. `overrides` ("key=value" strings)
        are merged over the stored config; only train.* keys may change."""
        overrides = list(kwargs.pop('overrides', ()))
        payload = cqfiles.load_checkpoint(path, map_location=kwargs.get('device', 'cpu'))
        cfg = cqmethods.cfg_from_snapshot(payload['config'])
        frozen = [item for item in overrides if not item.strip().startswith(RESUMABLE_PREFIX)]
        if frozen:
            raise ConfigError('only {}* keys can change on resume, got {}'.format(RESUMABLE_PREFIX, frozen))
        if overrides:
            cfg = cqmethods.merge_overrides(cfg, overrides)
        trainer = cls(cfg, **kwargs)
        trainer.load_state(payload)
        log.info('resumed from %s at iteration %d', path, trainer.iteration)
        return trainer

    @torch.no_grad()
    def evaluate_cf(self, loader=None, **kwargs):
        """Mean colorfulness of generated vs ground-truth RGB over a fixed,
        unshuffled, unaugmented slice of the data."""
        batches = kwargs.get('batches', self.cfg.train.eval_batches)
        if loader is None:
            loader = build_dataset(self.data_spec(shuffle=False, augment=False, prefetch=0))
        was_training = self.generator.training
        self.generator.eval()
        gen_cfs, gt_cfs = [], []
        try:
            for n, batch in enumerate(loader):
                if n >= batches:
                    break
                batch = batch.to(self.device)
                fake = cqcolorspace.lab_to_rgb(self.generator.colorize(batch.x_L)) * 255.0
                real = cqcolorspace.lab_to_rgb(cqcolorspace.merge_channels(batch.x_L, batch.y_AB)) * 255.0
                gen_cfs += cqlosses.colorfulness_score_tensor(fake).tolist()
                gt_cfs += cqlosses.colorfulness_score_tensor(real).tolist()
        finally:
            self.generator.train(was_training)
        return {
            'cf_gen': sum(gen_cfs) / len(gen_cfs),
            'cf_gt': sum(gt_cfs) / len(gt_cfs),
            'delta_cf': cqmetrics.delta_cf(gen_cfs, gt_cfs),
        }


def load_generator(path, device='cpu'):
    """(generator in eval mode, cfg) from a training checkpoint."""
    payload = cqfiles.load_checkpoint(path, map_location=device)
    cfg = cqmethods.cfg_from_snapshot(payload['config'])
    generator = cqmethods.build_generator(cfg).to(device)
    generator.load_state_dict(payload['generator'])
    generator.eval()
    return generator, cfg


def run_ablation(name, base_cfg, **kwargs):
    """Train every variant of one named ablation under the base seed and
    budget; report CF, ΔCF and the loss trace per variant."""
    total_iters = kwargs.get('total_iters', base_cfg.train.total_iters)
    output_dir = kwargs.get('output_dir', '')
    callback = kwargs.get('new_record_callback', None)
    report = {'ablation': name, 'total_iters': total_iters, 'variants': {}}
    for label, cfg in cqmethods.ablation_variants(name, base_cfg):
        log.info('ablation %s: training %s for %d iterations', name, label, total_iters)
        variant_dir = str(Path(output_dir) / label) if output_dir else ''
        trainer = Trainer(cfg, output_dir=variant_dir, new_record_callback=callback)
        history = trainer.fit(total_iters=total_iters)
        scores = trainer.evaluate_cf()
        losses = [r['L_total'] for r in history]
        tail = losses[-min(len(losses), 100):]
        report['variants'][label] = dict(scores, final_loss=sum(tail) / len(tail),
                                         finite=all(math.isfinite(v) for v in losses), losses=losses)
    if output_dir:
        cqfiles.write_report(Path(output_dir) / 'ablation_{}.json'.format(name), _summary(report))
    return report


def _summary(report):
    # the text twin of the JSON report only carries scalars
    flat = {'ablation': report['ablation'], 'total_iters': report['total_iters']}
    for label, variant in report['variants'].items():
        for key in ('cf_gen', 'cf_gt', 'delta_cf', 'final_loss'):
            flat['{}.{}'.format(label, key)] = variant[key]
    flat['variants'] = report['variants']
    return flat
