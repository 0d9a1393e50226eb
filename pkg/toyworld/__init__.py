"""
Synthetic world-knowledge domain: grids, rule tables, instructions and oracles
"""

from .constraints import ConstraintSet, Constraint, Desc, check_constraint
from .edits import EDIT_FAMILIES, sample_edit
from .entities import COLORS, SHAPES, Entity, GridImage, KnowledgeCategory, Scene
from .instructions import (COMPOSITIONAL_CATEGORIES, InstructionSpec, compile_constraints, reasoning_text,
                           sample_compositional, sample_instruction)
from .oracle import independent_score, oracle_score, proxy_results
from .rules import RuleTable, load_rule_table
from .scenes import fresh_grids, ground_truth_for, ground_truth_scene, random_grid, random_scene, render
from .vocab import Vocabulary, build_vocabulary

__all__ = [
    'COLORS',
    'SHAPES',
    'Entity',
    'Scene',
    'GridImage',
    'KnowledgeCategory',
    'Constraint',
    'ConstraintSet',
    'Desc',
    'check_constraint',
    'InstructionSpec',
    'COMPOSITIONAL_CATEGORIES',
    'EDIT_FAMILIES',
    'compile_constraints',
    'reasoning_text',
    'sample_instruction',
    'sample_compositional',
    'sample_edit',
    'oracle_score',
    'independent_score',
    'proxy_results',
    'ground_truth_scene',
    'ground_truth_for',
    'random_grid',
    'fresh_grids',
    'random_scene',
    'render',
    'RuleTable',
    'load_rule_table',
    'Vocabulary',
    'build_vocabulary'
]
