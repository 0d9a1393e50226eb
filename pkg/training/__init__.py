from .checkpoint import Checkpoint, load_checkpoint, read_metrics, save_checkpoint
from .packing import pack_sequences, plan_packs
from .schedule import lr_at
from .sequences import check_masks, layout_length, prompt_layout, to_layout
from .trainer import Trainer, TrainResult, build_model, pretrain_base, train_stage1, train_stage2

__all__ = [
    'Checkpoint',
    'load_checkpoint',
    'read_metrics',
    'save_checkpoint',
    'pack_sequences',
    'plan_packs',
    'lr_at',
    'check_masks',
    'layout_length',
    'prompt_layout',
    'to_layout',
    'Trainer',
    'TrainResult',
    'build_model',
    'pretrain_base',
    'train_stage1',
    'train_stage2'
]
