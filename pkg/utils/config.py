"""
Configuration Management

This module holds every configuration model of the pipeline and the
environment-driven settings. Structured configs are pydantic models that
reject unknown keys; run configs are loaded from YAML files and merged with
command-line overrides.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from utils.errors import ConfigurationError

# Load environment variables
load_dotenv()

# Evaluation seeds start here; every training seed stays below it.
EVAL_SEED_OFFSET = 1_000_000_000


class Settings:
    """Environment-level defaults"""

    def __init__(self):
        self.output_root = Path(os.getenv('REASONER_OUTPUT_ROOT', './runs'))
        self.log_level = os.getenv('REASONER_LOG_LEVEL', 'INFO')
        self.slow_tests = os.getenv('REASONER_SLOW_TESTS', '0') == '1'


class StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class WorldConfig(StrictModel):
    """Toy world dimensions and sampling bounds"""

    grid_h: int = Field(12, ge=3)
    grid_w: int = Field(12, ge=3)
    max_scene_attempts: int = Field(256, ge=1)
    maze_size: int = Field(6, ge=3)
    maze_wall_density: float = Field(0.3, ge=0.0, lt=1.0)


class ModelConfig(StrictModel):
    """Dimensions of the two-expert transformer"""

    vocab_size: int = Field(256, ge=8)
    d_model: int = Field(64, ge=4)
    n_layers: int = Field(4, ge=1)
    n_heads: int = Field(4, ge=1)
    ffn_mult: int = Field(4, ge=1)
    latent_dim: int = Field(32, ge=1)
    slots_per_image: int = Field(1, ge=1)
    max_positions: int = Field(512, ge=8)
    init_std: float = Field(0.02, gt=0.0)

    @model_validator(mode='after')
    def _check_heads(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError('d_model must be divisible by n_heads')
        return self


class SamplerConfig(StrictModel):
    """Euler sampler settings"""

    steps: int = Field(16, ge=1)
    seed: int = 0


class TrainConfig(StrictModel):
    """One training stage"""

    stage: Literal[1, 2] = 1
    total_iters: int = Field(2000, ge=0)
    warmup_iters: int = Field(100, ge=0)
    lr_max: float = Field(1e-3, ge=0.0)
    lr_min: float = Field(1e-4, ge=0.0)
    lambda_text: float = Field(2.0, ge=0.0)
    lambda_img: float = Field(1.0, ge=0.0)
    pack_len: int = Field(512, ge=1)
    seed: int = 0
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None
    train_shared_in_stage1: bool = False
    debug_masking: bool = False
    log_every: int = Field(50, ge=1)
    progress: bool = True

    @model_validator(mode='after')
    def _check_schedule(self):
        if self.warmup_iters > self.total_iters:
            raise ValueError('warmup_iters must not exceed total_iters')
        if self.lr_min > self.lr_max:
            raise ValueError('lr_min must not exceed lr_max')
        return self

    @classmethod
    def desk_stage1(cls, **overrides) -> 'TrainConfig':
        values = dict(stage=1, total_iters=2000, warmup_iters=100, lr_max=1e-3, lr_min=1e-4)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def desk_stage2(cls, **overrides) -> 'TrainConfig':
        values = dict(stage=2, total_iters=1000, warmup_iters=50, lr_max=5e-4, lr_min=5e-5)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def full_scale_stage1(cls, **overrides) -> 'TrainConfig':
        values = dict(stage=1, total_iters=30000, warmup_iters=3000, lr_max=5e-5, lr_min=1e-5,
                      pack_len=50000)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def full_scale_stage2(cls, **overrides) -> 'TrainConfig':
        values = dict(stage=2, total_iters=10000, warmup_iters=1000, lr_max=2e-5, lr_min=1e-6,
                      pack_len=50000)
        values.update(overrides)
        return cls(**values)


class CorpusConfig(StrictModel):
    """Desk-scale dataset sizes"""

    base_count: int = Field(1000, ge=0)
    stage1_count: int = Field(2000, ge=0)
    stage1_edit_fraction: float = Field(0.2, ge=0.0, le=1.0)
    single_turn_per_category: int = Field(200, ge=0)
    single_turn_edit_fraction: float = Field(0.1, ge=0.0, le=1.0)
    refinement_count: int = Field(500, ge=0)
    workers: int = Field(1, ge=1)


class PipelineConfig(StrictModel):
    """Agent pipeline settings"""

    backend: Literal['scripted', 'model', 'remote'] = 'scripted'
    corruption_levels: List[int] = Field(default_factory=lambda: [1, 2, 3])
    categories: Optional[List[str]] = None
    workers: int = Field(1, ge=1)
    audit_log: bool = True

    @field_validator('corruption_levels')
    @classmethod
    def _levels_inject(cls, value: List[int]) -> List[int]:
        # An uncorrupted draft leaves nothing to refine
        if any(level < 1 for level in value):
            raise ValueError('Corruption levels must be at least 1')
        return value


class EvalConfig(StrictModel):
    """Evaluation suite sizes and study settings"""

    suite_per_category: int = Field(20, ge=1)
    compositional_per_category: int = Field(20, ge=1)
    edit_suite_size: int = Field(50, ge=1)
    baseline_samples: int = Field(1000, ge=1)
    correlation_checkpoints: int = Field(4, ge=2)
    suites: List[Literal['knowledge', 'compositional', 'edit', 'correlation']] = Field(
        default_factory=lambda: ['knowledge', 'compositional', 'edit'])
    modes: List[Literal['direct', 'reason', 'reason_refine']] = Field(
        default_factory=lambda: ['direct', 'reason', 'reason_refine'])
    plot: bool = False


class RunConfig(StrictModel):
    """Command-scoped union of every section a subcommand may read"""

    seed: int = 0
    out: Optional[str] = None
    world: WorldConfig = Field(default_factory=WorldConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    base: TrainConfig = Field(default_factory=lambda: TrainConfig.desk_stage1(total_iters=1000))
    stage1: TrainConfig = Field(default_factory=TrainConfig.desk_stage1)
    stage2: TrainConfig = Field(default_factory=TrainConfig.desk_stage2)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    stages: List[Literal[1, 2]] = Field(default_factory=lambda: [1, 2])
    dataset_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    prompt: Optional[str] = None
    image: Optional[str] = None
    mode: Literal['direct', 'reason', 'reason_refine'] = 'reason_refine'
    latent_dim: Optional[int] = None
    # Fresh grids the codec must also reproduce exactly
    codec_fresh_grids: int = Field(1000, ge=0)

    @field_validator('base', 'stage1', 'stage2', mode='before')
    @classmethod
    def _stage_preset(cls, value: Any, info: ValidationInfo) -> Any:
        """Partial stage sections fill in from their desk preset"""
        if not isinstance(value, dict):
            return value
        presets = {
            'base': lambda: TrainConfig.desk_stage1(total_iters=1000),
            'stage1': TrainConfig.desk_stage1,
            'stage2': TrainConfig.desk_stage2
        }
        return {**presets[info.field_name]().model_dump(), **value}


# Role-specific remote adapter settings
ROLE_SETTINGS: Dict[str, Dict[str, Any]] = {
    'generator': {
        'timeout': 60.0,  # Drafting may render a full image
        'max_attempts': 3
    },
    'verifier': {
        'timeout': 30.0,
        'max_attempts': 3
    },
    'refiner': {
        'timeout': 60.0,  # Editing is as slow as drafting
        'max_attempts': 3
    },
    'judge': {
        'timeout': 30.0,
        'max_attempts': 2
    }
}


def configure_role(agent_role: str) -> Dict[str, Any]:
    """
    Remote adapter settings for a pipeline role

    Args:
        agent_role: One of generator, verifier, refiner, judge

    Returns:
        Timeout and retry settings for the role
    """
    if agent_role not in ROLE_SETTINGS:
        raise ConfigurationError(f"Unknown agent role '{agent_role}'")
    return dict(ROLE_SETTINGS[agent_role])


def _deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a run config from YAML and apply flag overrides

    Args:
        path: YAML file, or None for defaults
        overrides: Nested dict of values that win over the file

    Returns:
        Validated run config
    """
    raw: Dict[str, Any] = {}
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                raw = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigurationError(f"Cannot read config file {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigurationError(f"Config file {path} must hold a mapping")
    raw = _deep_merge(raw, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**raw)
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e


def config_hash(config: BaseModel) -> str:
    """Stable 16-hex-digit hash of a config's canonical JSON form"""
    canonical = json.dumps(config.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


def write_resolved_config(config: BaseModel, directory: Path) -> str:
    """
    Write the resolved config and its hash into an artifact directory

    Returns:
        The config hash
    """
    directory.mkdir(parents=True, exist_ok=True)
    digest = config_hash(config)
    with open(directory / 'resolved_config.yaml', 'w', encoding='utf-8') as f:
        yaml.safe_dump(config.model_dump(mode='json'), f, sort_keys=True)
    (directory / 'config_hash').write_text(digest + '\n', encoding='utf-8')
    return digest
