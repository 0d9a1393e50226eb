"""
Held-out evaluation

This package contains:
- Suites: knowledge, compositional and editing prompts from the evaluation seed range
- Harness: oracle scoring of rollouts, the ablation ladder and the correlation study
- Reports: CSV, text tables and plots
"""

from .harness import (CorrelationResult, EvalReport, ReferenceEngine, correlation_study, eval_compositional,
                      eval_edit, eval_t2i, random_baseline, run_ablation, spearman)
from .reports import format_table, write_correlation, write_reports
from .suites import EvalSuite, check_seed_disjointness, compositional_suite, edit_suite, knowledge_suite

__all__ = [
    'CorrelationResult',
    'EvalReport',
    'ReferenceEngine',
    'correlation_study',
    'eval_compositional',
    'eval_edit',
    'eval_t2i',
    'random_baseline',
    'run_ablation',
    'spearman',
    'format_table',
    'write_correlation',
    'write_reports',
    'EvalSuite',
    'check_seed_disjointness',
    'compositional_suite',
    'edit_suite',
    'knowledge_suite'
]
