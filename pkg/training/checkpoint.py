"""
Checkpoint directories.

A checkpoint holds everything inference needs: the weights, the fitted
codec, the vocabulary, the model dimensions and a manifest naming the
step, the rule-table version and the hash of the config that produced it.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
import torch
from loguru import logger
from pydantic import BaseModel

from models.codec import CodecParams
from models.transformer import TwoExpertTransformer
from toyworld.vocab import Vocabulary
from utils.config import ModelConfig, write_resolved_config
from utils.errors import ConfigurationError

MODEL_FILE = 'model.pt'
CODEC_FILE = 'codec.npz'
VOCAB_FILE = 'vocab.json'
MANIFEST_FILE = 'manifest.json'
METRICS_FILE = 'metrics.csv'


@dataclass
class Checkpoint:
    model: TwoExpertTransformer
    codec: CodecParams
    vocab: Vocabulary
    model_cfg: ModelConfig
    manifest: Dict[str, Any]


def save_checkpoint(directory: Path, model: TwoExpertTransformer, codec: CodecParams, vocab: Vocabulary,
                    step: int, rule_table_version: str, config: Optional[BaseModel] = None,
                    metrics: Optional[pd.DataFrame] = None) -> Path:
    """
    Write a checkpoint directory

    Args:
        directory: Target directory, created if missing
        model: Trained model
        codec: Codec the model was trained with
        vocab: Vocabulary the model was trained with
        step: Total optimizer steps so far
        rule_table_version: Version of the world rules
        config: Resolved run config, written beside the weights
        metrics: Per-step training metrics

    Returns:
        The checkpoint directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), directory / MODEL_FILE)
    codec.save(directory / CODEC_FILE)
    vocab.save(directory / VOCAB_FILE)
    digest = write_resolved_config(config, directory) if config is not None else None
    manifest = {
        'step': step,
        'rule_table_version': rule_table_version,
        'config_hash': digest,
        'model_config': model.cfg.model_dump(mode='json'),
        'vocab_size': len(vocab),
        'latent_dim': codec.latent_dim
    }
    with open(directory / MANIFEST_FILE, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    if metrics is not None:
        metrics.to_csv(directory / METRICS_FILE, index=False)
    logger.info(f"Saved checkpoint at step {step} to {directory}")
    return directory


def load_checkpoint(directory: Path) -> Checkpoint:
    """Rebuild model, codec and vocabulary from a checkpoint directory"""
    directory = Path(directory)
    try:
        with open(directory / MANIFEST_FILE, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except OSError as e:
        raise ConfigurationError(f"No checkpoint manifest in {directory}: {e}") from e
    model_cfg = ModelConfig.model_validate(manifest['model_config'])
    vocab = Vocabulary.load(directory / VOCAB_FILE)
    codec = CodecParams.load(directory / CODEC_FILE)
    if codec.latent_dim != model_cfg.latent_dim:
        raise ConfigurationError(f"Checkpoint codec has latent dim {codec.latent_dim}, model expects "
                                 f"{model_cfg.latent_dim}")
    model = TwoExpertTransformer(model_cfg, len(vocab))
    model.load_state_dict(torch.load(directory / MODEL_FILE, map_location='cpu'))
    model.eval()
    return Checkpoint(model, codec, vocab, model_cfg, manifest)


def read_metrics(directory: Path) -> pd.DataFrame:
    return pd.read_csv(Path(directory) / METRICS_FILE)
