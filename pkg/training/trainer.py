"""
Two-stage supervised training.

Stage 1 trains the generation expert on instruction -> image pairs with
the understanding expert frozen. Stage 2 unfreezes everything and trains
on single-turn reasoning and refinement samples with the weighted loss
lambda_text * L_text + lambda_img * L_img. Each step draws fresh flow
points for the supervised images of one pack.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import pandas as pd
import torch
from loguru import logger
from tqdm import tqdm

from corpus.samples import Sample, Stage1Sample
from models.codec import CodecParams
from models.layout import concat_layouts
from models.losses import image_loss, text_loss, total_loss
from models.transformer import TwoExpertTransformer
from toyworld.vocab import Vocabulary
from training.packing import plan_packs
from training.schedule import lr_at
from training.sequences import check_masks, layout_length, to_layout
from utils.config import ModelConfig, TrainConfig
from utils.errors import ConfigurationError, RejectedInputError
from utils.seeding import derive_rng, seed_torch

METRIC_COLUMNS = ['step', 'lr', 'l_text', 'l_img', 'total']


def build_model(cfg: ModelConfig, vocab: Vocabulary, seed: int = 0) -> TwoExpertTransformer:
    """Freshly initialized model; identical for identical (cfg, vocab, seed)"""
    seed_torch(seed)
    return TwoExpertTransformer(cfg, len(vocab))


@dataclass
class TrainResult:
    model: TwoExpertTransformer
    metrics: pd.DataFrame
    steps: int
    snapshots: Dict[int, Dict[str, torch.Tensor]] = field(default_factory=dict)


class Trainer:
    """
    Runs one training stage

    Args:
        model: Model to train in place
        cfg: Stage settings
        vocab: Vocabulary
        codec: Fitted codec
        trainable: Partitions that receive updates
    """

    def __init__(self, model: TwoExpertTransformer, cfg: TrainConfig, vocab: Vocabulary, codec: CodecParams,
                 trainable: Sequence[str] = ('und', 'gen', 'shared')):
        if codec.latent_dim != model.cfg.latent_dim:
            raise ConfigurationError(f"Codec latent dim {codec.latent_dim} != model latent dim {model.cfg.latent_dim}")
        self.model = model
        self.cfg = cfg
        self.vocab = vocab
        self.codec = codec
        self.trainable = tuple(trainable)
        self.slots = model.cfg.slots_per_image

    def _parameters(self) -> List[torch.nn.Parameter]:
        params = []
        for name, p in self.model.named_parameters():
            p.requires_grad_(self.model.partition_labels[name] in self.trainable)
            if p.requires_grad:
                params.append(p)
        return params

    def _packs(self, samples: Sequence[Sample]):
        """Endless stream of index packs, reshuffled every epoch"""
        lengths = [layout_length(s, self.vocab, self.slots) for s in samples]
        epoch = 0
        while True:
            order = [int(i) for i in derive_rng(self.cfg.seed, 'epoch', epoch).permutation(len(samples))]
            for pack in plan_packs([lengths[i] for i in order], self.cfg.pack_len):
                yield [order[i] for i in pack]
            epoch += 1

    def step_loss(self, samples: Sequence[Sample], step: int):
        """Loss terms of one pack at one step"""
        rng = derive_rng(self.cfg.seed, 'step', step)
        layouts = [to_layout(s, self.vocab, self.codec, rng, self.slots) for s in samples]
        if self.cfg.debug_masking:
            for layout, sample in zip(layouts, samples):
                check_masks(layout, sample)
        packed = concat_layouts(layouts)
        logits, velocity = self.model(packed)
        l_text, _ = text_loss(logits, packed)
        l_img, _ = image_loss(velocity, packed.velocity_targets().to(velocity.dtype), packed)
        return l_text, l_img, total_loss(l_text, l_img, self.cfg.lambda_text, self.cfg.lambda_img)

    def fit(self, samples: Sequence[Sample], snapshot_at: Sequence[int] = ()) -> TrainResult:
        """
        Train for cfg.total_iters steps

        Args:
            samples: Training samples
            snapshot_at: Steps after which a copy of the weights is kept

        Returns:
            The trained model, its metric log and any snapshots
        """
        params = self._parameters()
        rows: List[Dict[str, float]] = []
        snapshots: Dict[int, Dict[str, torch.Tensor]] = {}
        if self.cfg.total_iters == 0:
            return TrainResult(self.model, pd.DataFrame(rows, columns=METRIC_COLUMNS), 0, snapshots)
        if not samples:
            raise RejectedInputError('Training needs at least one sample')
        optimizer = torch.optim.Adam(params, lr=0.0, betas=tuple(self.cfg.adam_betas), eps=self.cfg.adam_eps,
                                     weight_decay=self.cfg.weight_decay)
        packs = self._packs(samples)
        self.model.train()
        for step in tqdm(range(self.cfg.total_iters), desc=f"stage {self.cfg.stage}", disable=not self.cfg.progress):
            lr = lr_at(step, self.cfg)
            for group in optimizer.param_groups:
                group['lr'] = lr
            batch = [samples[i] for i in next(packs)]
            l_text, l_img, loss = self.step_loss(batch, step)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if self.cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(params, self.cfg.grad_clip)
            optimizer.step()
            rows.append({'step': step, 'lr': lr, 'l_text': float(l_text), 'l_img': float(l_img),
                         'total': float(loss)})
            if step % self.cfg.log_every == 0:
                logger.info(f"stage {self.cfg.stage} step {step}: lr {lr:.2e} text {float(l_text):.4f} "
                            f"img {float(l_img):.4f} total {float(loss):.4f}")
            if step + 1 in snapshot_at:
                snapshots[step + 1] = {k: v.detach().clone() for k, v in self.model.state_dict().items()}
        for p in self.model.parameters():
            p.requires_grad_(True)
        return TrainResult(self.model, pd.DataFrame(rows, columns=METRIC_COLUMNS), self.cfg.total_iters, snapshots)


def _stage1_partitions(cfg: TrainConfig) -> List[str]:
    return ['gen', 'shared'] if cfg.train_shared_in_stage1 else ['gen']


def train_stage1(model: TwoExpertTransformer, samples: Sequence[Sample], cfg: TrainConfig, vocab: Vocabulary,
                 codec: CodecParams, snapshot_at: Sequence[int] = ()) -> TrainResult:
    """
    Generation-only stage with the understanding expert frozen

    Raises:
        ConfigurationError: cfg is not a stage-1 config
        RejectedInputError: a sample carries reasoning
    """
    if cfg.stage != 1:
        raise ConfigurationError('train_stage1 needs a stage-1 config')
    if any(not isinstance(s, Stage1Sample) for s in samples):
        raise RejectedInputError('Stage-1 samples carry no reasoning')
    logger.info(f"Stage 1: {len(samples)} samples, training {_stage1_partitions(cfg)}")
    return Trainer(model, cfg, vocab, codec, _stage1_partitions(cfg)).fit(samples, snapshot_at)


def train_stage2(model: TwoExpertTransformer, samples: Sequence[Sample], cfg: TrainConfig, vocab: Vocabulary,
                 codec: CodecParams) -> TrainResult:
    """Joint stage over reasoning and refinement samples, every partition trained"""
    if cfg.stage != 2:
        raise ConfigurationError('train_stage2 needs a stage-2 config')
    logger.info(f"Stage 2: {len(samples)} samples, training every partition")
    return Trainer(model, cfg, vocab, codec).fit(samples)


def pretrain_base(model: TwoExpertTransformer, samples: Sequence[Sample], cfg: TrainConfig, vocab: Vocabulary,
                  codec: CodecParams) -> TrainResult:
    """Base model: every partition trained on compositional pairs, image loss only"""
    if any(not isinstance(s, Stage1Sample) for s in samples):
        raise RejectedInputError('Base pretraining uses instruction -> image pairs')
    logger.info(f"Base pretraining: {len(samples)} samples")
    return Trainer(model, cfg, vocab, codec).fit(samples)
