"""
Corpus builders.

Each sample index owns a random source derived from (seed, corpus,
category, index), so builds are identical for a given seed however many
workers share the work. Candidates that fail a filter are logged with the
reason and redrawn from the same source.
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from agents.coordinator import PipelineCoordinator
from corpus.samples import (BuildResult, DatasetManifest, RefineSample, Sample, SingleTurnSample, Stage1Sample,
                            count_by_category)
from toyworld.edits import sample_edit
from toyworld.entities import KnowledgeCategory
from toyworld.instructions import (COMPOSITIONAL_CATEGORIES, InstructionSpec, compile_constraints, reasoning_text,
                                   sample_compositional, sample_instruction)
from toyworld.oracle import oracle_score, proxy_results
from toyworld.rules import RuleTable, load_rule_table
from toyworld.scenes import ground_truth_for, render
from toyworld.vocab import Vocabulary
from utils.config import EVAL_SEED_OFFSET, CorpusConfig, PipelineConfig, WorldConfig
from utils.errors import ConfigurationError, ReasonerError
from utils.seeding import derive_rng

KNOWLEDGE_CATEGORIES = tuple(c.value for c in KnowledgeCategory)

Candidate = Callable[[np.random.Generator], Sample]


def _check_seed(seed: int) -> None:
    if not 0 <= seed < EVAL_SEED_OFFSET:
        raise ConfigurationError(f"Training seeds must lie in [0, {EVAL_SEED_OFFSET})")


def _filter_reason(spec: InstructionSpec, image, rules: RuleTable, vocab: Optional[Vocabulary],
                   reasoning: Optional[str] = None) -> Optional[str]:
    """Why a candidate is rejected, or None when it passes every filter"""
    cs = compile_constraints(spec, rules)
    if oracle_score(image, cs, rules) < 1.0:
        return 'instruction_alignment'
    if not all(proxy_results(image, cs, rules).values()):
        return 'visual_fidelity'
    if reasoning is not None:
        missing = [c for c in spec.hidden_constraints() if c.describe(rules) not in reasoning]
        if missing:
            return 'reasoning_correctness'
    if vocab is not None:
        texts = [spec.text] + ([reasoning] if reasoning else [])
        if any(vocab.unknown_words(t) for t in texts):
            return 'unknown_words'
    return None


def _draw(key: Tuple, seed: int, make: Candidate, max_attempts: int) -> Tuple[Optional[Sample], List[Dict]]:
    rng = derive_rng(seed, *key)
    rejects = []
    for attempt in range(max_attempts):
        try:
            sample, reason = make(rng)
        except ReasonerError as e:
            sample, reason = None, f"unsatisfiable: {type(e).__name__}"
        if reason is None:
            return sample, rejects
        rejects.append({'key': '-'.join(str(k) for k in key), 'attempt': attempt, 'reason': reason})
        logger.debug(f"Rejected candidate {rejects[-1]['key']} (attempt {attempt}): {reason}")
    return None, rejects


def _build(corpus: str, plan: List[Tuple[str, int]], seed: int, make_for: Callable[[str, str, int], Candidate],
           workers: int, max_attempts: int) -> Tuple[List[Sample], List[Dict]]:
    """Draw one sample per (category, index) in plan order"""

    def work(item: Tuple[str, int]):
        category, index = item
        sample_id = f"{corpus}-{category}-{index:05d}"
        return _draw((corpus, category, index), seed, make_for(category, sample_id, index), max_attempts)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(work, plan))
    samples = [s for s, _ in outcomes if s is not None]
    rejects = [r for _, rs in outcomes for r in rs]
    missing = sum(1 for s, _ in outcomes if s is None)
    if missing:
        logger.warning(f"{corpus}: {missing} sample(s) exhausted {max_attempts} attempts")
    return samples, rejects


def _plan(counts: Dict[str, int], edit_count: int = 0) -> List[Tuple[str, int]]:
    plan = [(category, i) for category, n in counts.items() for i in range(n)]
    return plan + [('edit', i) for i in range(edit_count)]


def _reject_summary(rejects: List[Dict]) -> Dict[str, int]:
    summary: Dict[str, int] = {}
    for r in rejects:
        summary[r['reason']] = summary.get(r['reason'], 0) + 1
    return dict(sorted(summary.items()))


def _manifest(corpus: str, sample_type: str, samples: List[Sample], seed: int, rules: RuleTable,
              rejects: List[Dict], **extra) -> DatasetManifest:
    return DatasetManifest(corpus=corpus, sample_type=sample_type, seed=seed, seed_range=(seed, seed),
                           rule_table_version=rules.version, counts=count_by_category(samples),
                           total=len(samples), rejected=_reject_summary(rejects), **extra)


def _edit_count(counts: Dict[str, int], fraction: float) -> int:
    """Edit samples so that they make up `fraction` of the whole corpus"""
    if fraction <= 0.0:
        return 0
    base = sum(counts.values())
    return int(round(base * fraction / (1.0 - fraction))) if fraction < 1.0 else base


def build_stage1(counts: Dict[str, int], seed: int, world: Optional[WorldConfig] = None,
                 rules: Optional[RuleTable] = None, edit_fraction: float = 0.0,
                 vocab: Optional[Vocabulary] = None, workers: int = 1, max_attempts: int = 20) -> BuildResult:
    """
    Instruction-to-image pairs without reasoning

    Args:
        counts: Samples per knowledge category
        seed: Base seed
        world: Grid configuration
        rules: Rule table
        edit_fraction: Share of editing samples in the result
        vocab: When given, texts with unknown words are rejected
        workers: Parallel builders
        max_attempts: Redraws per sample before giving up

    Returns:
        Samples, manifest and the reject log
    """
    _check_seed(seed)
    world = world or WorldConfig()
    rules = rules or load_rule_table()

    def make_for(category: str, sample_id: str, index: int) -> Candidate:
        def make(rng: np.random.Generator):
            if category == 'edit':
                spec = sample_edit(rng, world, rules)
            else:
                spec = sample_instruction(category, rng, world, rules)
            image = render(ground_truth_for(spec, rng, world, rules))
            return Stage1Sample(sample_id, spec, image, seed), _filter_reason(spec, image, rules, vocab)
        return make

    plan = _plan(counts, _edit_count(counts, edit_fraction))
    samples, rejects = _build('stage1', plan, seed, make_for, workers, max_attempts)
    return BuildResult(samples, _manifest('stage1', 'stage1', samples, seed, rules, rejects), rejects)


def build_base(counts: Dict[str, int], seed: int, world: Optional[WorldConfig] = None,
               rules: Optional[RuleTable] = None, vocab: Optional[Vocabulary] = None,
               workers: int = 1, max_attempts: int = 20) -> BuildResult:
    """Compositional (explicit-only) instruction-to-image pairs for base pretraining"""
    _check_seed(seed)
    world = world or WorldConfig()
    rules = rules or load_rule_table()
    unknown = set(counts) - set(COMPOSITIONAL_CATEGORIES)
    if unknown:
        raise ConfigurationError(f"Unknown compositional categories {sorted(unknown)}")

    def make_for(category: str, sample_id: str, index: int) -> Candidate:
        def make(rng: np.random.Generator):
            spec = sample_compositional(category, rng, world)
            image = render(ground_truth_for(spec, rng, world, rules))
            return Stage1Sample(sample_id, spec, image, seed, corpus='base'), _filter_reason(spec, image, rules, vocab)
        return make

    samples, rejects = _build('base', _plan(counts), seed, make_for, workers, max_attempts)
    return BuildResult(samples, _manifest('base', 'stage1', samples, seed, rules, rejects), rejects)


def build_single_turn(counts: Dict[str, int], seed: int, world: Optional[WorldConfig] = None,
                      rules: Optional[RuleTable] = None, edit_fraction: float = 0.0,
                      vocab: Optional[Vocabulary] = None, workers: int = 1, max_attempts: int = 20) -> BuildResult:
    """
    Knowledge-reasoning samples: instruction, reasoning, image

    The reasoning serializes the premises and every compiled constraint;
    a candidate whose reasoning misses a hidden constraint is rejected.
    """
    _check_seed(seed)
    world = world or WorldConfig()
    rules = rules or load_rule_table()

    def make_for(category: str, sample_id: str, index: int) -> Candidate:
        def make(rng: np.random.Generator):
            if category == 'edit':
                spec = sample_edit(rng, world, rules)
            else:
                spec = sample_instruction(category, rng, world, rules)
            image = render(ground_truth_for(spec, rng, world, rules))
            reasoning = reasoning_text(spec, rules)
            sample = SingleTurnSample(sample_id, spec, reasoning, image, seed)
            return sample, _filter_reason(spec, image, rules, vocab, reasoning)
        return make

    plan = _plan(counts, _edit_count(counts, edit_fraction))
    samples, rejects = _build('single_turn', plan, seed, make_for, workers, max_attempts)
    return BuildResult(samples, _manifest('single_turn', 'single_turn', samples, seed, rules, rejects), rejects)


def build_refinement(count: int, config: PipelineConfig, seed: int, world: Optional[WorldConfig] = None,
                     rules: Optional[RuleTable] = None, audit_dir: Optional[Path] = None,
                     engine=None, transport=None, progress: bool = False) -> BuildResult:
    """
    Refinement samples from the generate -> verify -> refine -> judge cycle

    Args:
        count: Candidate samples to run through the pipeline
        config: Backend, corruption levels, categories and workers
        seed: Base seed
        world: Grid configuration
        rules: Rule table
        audit_dir: Directory for per-level audit logs; enables resumption
        engine: Interleave engine for the model backend
        transport: Transport for the remote backend

    Returns:
        Retained samples only; the manifest records the retention rate
    """
    _check_seed(seed)
    world = world or WorldConfig()
    rules = rules or load_rule_table()
    categories = list(config.categories or KNOWLEDGE_CATEGORIES)
    levels = list(config.corruption_levels)
    if not levels:
        raise ConfigurationError('At least one corruption level is required')

    specs: Dict[int, List[Tuple[str, InstructionSpec]]] = {level: [] for level in levels}
    rejects: List[Dict] = []
    for index in range(count):
        category = categories[index % len(categories)]
        level = levels[index % len(levels)]
        sample_id = f"refine-{category}-{index:05d}"
        rng = derive_rng(seed, 'refine', category, index)
        spec = sample_edit(rng, world, rules) if category == 'edit' else sample_instruction(category, rng, world, rules)
        specs[level].append((sample_id, spec))

    samples: List[Sample] = []
    attempted = 0
    for level in levels:
        if not specs[level]:
            continue
        audit = Path(audit_dir) / f"audit_level{level}.jsonl" if audit_dir else None
        coordinator = PipelineCoordinator.from_config(config, seed, level, world, rules, engine, transport, audit)
        report = coordinator.run(specs[level], progress=progress)
        attempted += len(specs[level])
        for failure in report.failures:
            rejects.append({'key': failure.sample_id, 'attempt': 0, 'reason': f"pipeline_{failure.role}"})
        for record in report.records:
            if not record.verdict.retain:
                rejects.append({'key': record.sample_id, 'attempt': 0, 'reason': 'judge_not_retained'})
                continue
            samples.append(RefineSample(record.sample_id, record.spec, record.reasoning, record.draft,
                                        record.reflection, record.refined, record.directives, record.verdict,
                                        seed, level))
    samples.sort(key=lambda s: int(s.sample_id.rsplit('-', 1)[1]))
    rate = len(samples) / attempted if attempted else 0.0
    logger.info(f"Refinement corpus: retained {len(samples)} of {attempted} ({rate:.1%})")
    manifest = _manifest('refine', 'refine', samples, seed, rules, rejects, retention_rate=rate,
                         notes={'corruption_levels': levels, 'backend': config.backend})
    return BuildResult(samples, manifest, rejects)


def build_all(corpus_cfg: CorpusConfig, pipeline_cfg: PipelineConfig, seed: int,
              world: Optional[WorldConfig] = None, rules: Optional[RuleTable] = None,
              vocab: Optional[Vocabulary] = None, audit_dir: Optional[Path] = None,
              progress: bool = False) -> Dict[str, BuildResult]:
    """Every corpus a two-stage run needs, keyed by corpus name"""
    rules = rules or load_rule_table()
    per_category = {c: corpus_cfg.single_turn_per_category for c in KNOWLEDGE_CATEGORIES}
    stage1_each = _split(corpus_cfg.stage1_count, KNOWLEDGE_CATEGORIES, corpus_cfg.stage1_edit_fraction)
    base_each = _split(corpus_cfg.base_count, COMPOSITIONAL_CATEGORIES)
    return {
        'base': build_base(base_each, seed, world, rules, vocab, corpus_cfg.workers),
        'stage1': build_stage1(stage1_each, seed, world, rules, corpus_cfg.stage1_edit_fraction, vocab,
                               corpus_cfg.workers),
        'single_turn': build_single_turn(per_category, seed, world, rules, corpus_cfg.single_turn_edit_fraction,
                                         vocab, corpus_cfg.workers),
        'refine': build_refinement(corpus_cfg.refinement_count, pipeline_cfg, seed, world, rules, audit_dir,
                                   progress=progress)
    }


def _split(total: int, categories: Sequence[str], edit_fraction: float = 0.0) -> Dict[str, int]:
    """Per-category counts whose sum, plus the edit share, is close to `total`"""
    base = int(round(total * (1.0 - edit_fraction)))
    counts = {c: base // len(categories) for c in categories}
    for c in list(categories)[:base % len(categories)]:
        counts[c] += 1
    return counts
