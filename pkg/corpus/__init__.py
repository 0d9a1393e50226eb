"""
Training corpora: stage-1 pairs, single-turn reasoning samples and
refinement samples, with JSONL persistence
"""

from .builders import build_all, build_base, build_refinement, build_single_turn, build_stage1
from .jsonl import read_corpus, read_jsonl, read_manifest, write_jsonl
from .samples import SCHEMA_VERSION, DatasetManifest, RefineSample, SingleTurnSample, Stage1Sample

__all__ = [
    'build_all',
    'build_base',
    'build_refinement',
    'build_single_turn',
    'build_stage1',
    'read_corpus',
    'read_jsonl',
    'read_manifest',
    'write_jsonl',
    'SCHEMA_VERSION',
    'DatasetManifest',
    'RefineSample',
    'SingleTurnSample',
    'Stage1Sample'
]
