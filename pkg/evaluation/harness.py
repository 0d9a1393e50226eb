"""
Evaluation harness.

Scores engines on the held-out suites with the constraint oracle:
- knowledge suite: mean oracle score per category
- compositional suite: pass/fail per prompt (every constraint satisfied)
- edit suite: oracle score of the edit goal plus preservation of the
  cells the edit does not target
It also builds the four-row ablation table and the study relating editing
ability after stage 1 to the gain refinement brings after stage 2.
"""

import copy
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from corpus.samples import Sample
from evaluation.suites import EvalSuite
from inference.interleave import InferenceMode, InterleaveEngine, Rollout
from models.codec import CodecParams
from models.transformer import TwoExpertTransformer
from toyworld.entities import GridImage
from toyworld.instructions import InstructionSpec, compile_constraints, reasoning_text
from toyworld.oracle import oracle_score
from toyworld.rules import RuleTable, load_rule_table
from toyworld.scenes import ground_truth_for, random_grid, render
from toyworld.vocab import Vocabulary
from training.trainer import train_stage2
from utils.config import SamplerConfig, TrainConfig, WorldConfig
from utils.errors import RejectedInputError
from utils.seeding import derive_rng


class EvalReport(BaseModel):
    """Per-category means; overall is their unweighted mean"""

    model_config = ConfigDict(extra='forbid')

    suite: str
    mode: str
    label: Optional[str] = None
    checkpoint: Optional[str] = None
    config_hash: Optional[str] = None
    per_category: Dict[str, float]
    overall: float
    n: int
    preservation: Optional[float] = None
    per_category_preservation: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _check_scores(self):
        scores = list(self.per_category.values()) + list(self.per_category_preservation.values())
        scores += [self.overall] + ([self.preservation] if self.preservation is not None else [])
        if any(not 0.0 <= s <= 1.0 for s in scores):
            raise ValueError('Scores must lie in [0, 1]')
        if self.per_category and abs(self.overall - float(np.mean(list(self.per_category.values())))) > 1e-12:
            raise ValueError('overall must be the unweighted mean of the per-category means')
        return self


def _means(values: Dict[str, List[float]]) -> Dict[str, float]:
    return {k: float(np.mean(v)) for k, v in values.items()}


def summarize(suite: EvalSuite, mode: str, scores: Sequence[float], preservation: Optional[Sequence[float]] = None,
              **extra) -> EvalReport:
    """Group per-spec scores by category into a report"""
    by_category: Dict[str, List[float]] = {c: [] for c in suite.categories()}
    kept: Dict[str, List[float]] = {c: [] for c in suite.categories()}
    for i, (spec, score) in enumerate(zip(suite.specs, scores)):
        by_category[suite.category_of(spec)].append(score)
        if preservation is not None:
            kept[suite.category_of(spec)].append(preservation[i])
    per_category = _means(by_category)
    overall = float(np.mean(list(per_category.values()))) if per_category else 0.0
    report = dict(suite=suite.name, mode=mode, per_category=per_category, overall=overall, n=len(suite.specs))
    if preservation is not None:
        report['per_category_preservation'] = _means(kept)
        report['preservation'] = float(np.mean(preservation)) if len(preservation) else 1.0
    return EvalReport(**report, **extra)


class ReferenceEngine:
    """
    Oracle-perfect stand-in for a model: answers every suite prompt with its
    ground-truth scene and the ground-truth reasoning
    """

    def __init__(self, specs: Sequence[InstructionSpec], world: Optional[WorldConfig] = None,
                 rules: Optional[RuleTable] = None):
        self.world = world or WorldConfig()
        self.rules = rules or load_rule_table()
        self.specs = {self._key(s.text, s.source): s for s in specs}

    @staticmethod
    def _key(text: str, source: Optional[GridImage]) -> Tuple:
        if source is None:
            return (text, None)
        return (text, source.shapes.tobytes(), source.colors.tobytes())

    def _answer(self, text: str, source: Optional[GridImage], mode, rng) -> Rollout:
        spec = self.specs.get(self._key(text, source))
        if spec is None:
            raise RejectedInputError(f"No reference answer for '{text}'")
        mode = InferenceMode.parse(mode)
        rng = rng if rng is not None else derive_rng(0, text)
        image = render(ground_truth_for(spec, rng, self.world, self.rules))
        t1 = '' if mode == InferenceMode.DIRECT else reasoning_text(spec, self.rules)
        rollout = Rollout(text, mode, t1, image, source=source)
        if mode == InferenceMode.REASON_REFINE:
            rollout.t2, rollout.i2 = 'check : no issues', image
        return rollout

    def run(self, text: str, mode=InferenceMode.REASON_REFINE, sampler=None, rng=None) -> Rollout:
        return self._answer(text, None, mode, rng)

    def edit(self, source: GridImage, text: str, mode=InferenceMode.REASON, sampler=None, rng=None) -> Rollout:
        return self._answer(text, source, mode, rng)


def _rollouts(engine, suite: EvalSuite, mode: InferenceMode, sampler: Optional[SamplerConfig],
              workers: int) -> List[Rollout]:
    def work(item: Tuple[int, InstructionSpec]) -> Rollout:
        i, spec = item
        rng = derive_rng(suite.seed, suite.name, mode.value, i)
        if suite.scoring == 'edit':
            return engine.edit(spec.source, spec.text, mode, sampler, rng)
        return engine.run(spec.text, mode, sampler, rng)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, enumerate(suite.specs)))


def eval_t2i(engine, suite: EvalSuite, mode=InferenceMode.REASON_REFINE, sampler: Optional[SamplerConfig] = None,
             rules: Optional[RuleTable] = None, workers: int = 1, **extra) -> EvalReport:
    """
    Mean oracle score of the final image per category

    Args:
        engine: Interleave engine, or any object with the same run/edit methods
        suite: Text-to-image suite
        mode: Inference mode
        sampler: Euler settings
        rules: Rule table
        workers: Concurrent rollouts
        **extra: label, checkpoint and config_hash for the report

    Returns:
        Report for the suite
    """
    if suite.scoring != 't2i':
        raise RejectedInputError(f"Suite {suite.name} is not a text-to-image suite")
    rules = rules or load_rule_table()
    mode = InferenceMode.parse(mode)
    rollouts = _rollouts(engine, suite, mode, sampler, workers)
    scores = [oracle_score(r.final_image, compile_constraints(s, rules), rules) for r, s in zip(rollouts, suite.specs)]
    report = summarize(suite, mode.value, scores, **extra)
    logger.info(f"{suite.name} [{mode.value}] overall {report.overall:.3f}")
    return report


def eval_compositional(engine, suite: EvalSuite, mode=InferenceMode.DIRECT, sampler: Optional[SamplerConfig] = None,
                       rules: Optional[RuleTable] = None, workers: int = 1, **extra) -> EvalReport:
    """Pass rate per compositional category: a prompt passes when every constraint holds"""
    if suite.scoring != 't2i':
        raise RejectedInputError(f"Suite {suite.name} is not a text-to-image suite")
    rules = rules or load_rule_table()
    mode = InferenceMode.parse(mode)
    rollouts = _rollouts(engine, suite, mode, sampler, workers)
    passed = [float(oracle_score(r.final_image, compile_constraints(s, rules), rules) == 1.0)
              for r, s in zip(rollouts, suite.specs)]
    report = summarize(suite, mode.value, passed, **extra)
    logger.info(f"{suite.name} [{mode.value}] pass rate {report.overall:.3f}")
    return report


def preservation_score(source: GridImage, output: GridImage, edit_cells: Sequence[Tuple[int, int]]) -> float:
    """Fraction of untargeted cells left exactly as they were"""
    targeted = set(tuple(c) for c in edit_cells)
    others = [(r, c) for r in range(source.grid_h) for c in range(source.grid_w) if (r, c) not in targeted]
    return output.cell_agreement(source, others)


def eval_edit(engine, suite: EvalSuite, mode=InferenceMode.REASON, sampler: Optional[SamplerConfig] = None,
              rules: Optional[RuleTable] = None, workers: int = 1, **extra) -> EvalReport:
    """Edit-goal oracle score per family, with preservation reported beside it"""
    if suite.scoring != 'edit':
        raise RejectedInputError(f"Suite {suite.name} is not an editing suite")
    rules = rules or load_rule_table()
    mode = InferenceMode.parse(mode)
    rollouts = _rollouts(engine, suite, mode, sampler, workers)
    scores, kept = [], []
    for rollout, spec in zip(rollouts, suite.specs):
        scores.append(oracle_score(rollout.final_image, compile_constraints(spec, rules), rules))
        kept.append(preservation_score(spec.source, rollout.final_image, spec.edit_cells))
    report = summarize(suite, mode.value, scores, kept, **extra)
    logger.info(f"{suite.name} [{mode.value}] overall {report.overall:.3f}, preservation {report.preservation:.3f}")
    return report


def random_baseline(suite: EvalSuite, n: int = 1000, seed: int = 0, codec: Optional[CodecParams] = None,
                    world: Optional[WorldConfig] = None, rules: Optional[RuleTable] = None) -> EvalReport:
    """
    Monte-Carlo base rate of the suite

    Draws n images, decoded standard-normal latents when a codec is given
    and random grids otherwise, and scores the i-th against spec i mod len(suite).
    """
    if not suite.specs:
        raise RejectedInputError(f"Suite {suite.name} is empty")
    rules = rules or load_rule_table()
    world = world or WorldConfig()
    rng = derive_rng(seed, 'baseline', suite.name)
    draws: Dict[int, List[float]] = {i: [] for i in range(len(suite.specs))}
    for k in range(n):
        i = k % len(suite.specs)
        image = codec.decode(rng.standard_normal(codec.latent_dim)) if codec is not None else random_grid(rng, world)
        draws[i].append(oracle_score(image, compile_constraints(suite.specs[i], rules), rules))
    scores = [float(np.mean(draws[i])) if draws[i] else 0.0 for i in range(len(suite.specs))]
    return summarize(suite, 'random', scores, label='random')


ABLATION_ROWS = (
    ('base', 'base', InferenceMode.DIRECT),
    ('two_stage', 'trained', InferenceMode.DIRECT),
    ('+reasoning', 'trained', InferenceMode.REASON),
    ('+refinement', 'trained', InferenceMode.REASON_REFINE)
)


def run_ablation(base, trained, suite: EvalSuite, sampler: Optional[SamplerConfig] = None,
                 rules: Optional[RuleTable] = None, workers: int = 1) -> List[EvalReport]:
    """
    Four-row ladder: base model, two-stage model, then reasoning and refinement switched on

    Args:
        base: Engine of the base model
        trained: Engine of the two-stage model
        suite: Text-to-image suite
        sampler: Euler settings
        rules: Rule table
        workers: Concurrent rollouts

    Returns:
        One report per row, in ladder order
    """
    engines = {'base': base, 'trained': trained}
    return [eval_t2i(engines[which], suite, mode, sampler, rules, workers, label=label)
            for label, which, mode in ABLATION_ROWS]


class CorrelationPoint(BaseModel):
    label: str
    step: int
    edit_score: float
    reason_score: float
    refine_score: float
    refine_gain: float


class CorrelationResult(BaseModel):
    points: List[CorrelationPoint]
    spearman: Optional[float] = None


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Rank correlation; None when either side is constant"""
    rx, ry = pd.Series(list(x), dtype=float).rank(), pd.Series(list(y), dtype=float).rank()
    if len(rx) < 2 or rx.nunique() < 2 or ry.nunique() < 2:
        return None
    return float(rx.corr(ry))


def snapshot_steps(total_iters: int, count: int) -> List[int]:
    """Evenly spaced stage-1 steps ending at the last one"""
    return sorted({max(1, round(total_iters * (k + 1) / count)) for k in range(count)})


def correlation_study(snapshots: Sequence[Tuple[int, TwoExpertTransformer]], stage2_samples: Sequence[Sample],
                      stage2_cfg: TrainConfig, vocab: Vocabulary, codec: CodecParams, knowledge: EvalSuite,
                      edits: EvalSuite, sampler: Optional[SamplerConfig] = None, rules: Optional[RuleTable] = None,
                      edit_mode=InferenceMode.REASON) -> CorrelationResult:
    """
    Score editing on several stage-1 checkpoints, apply the same stage-2 recipe
    to each, and relate that editing score to the gain refinement brings

    Args:
        snapshots: (stage-1 step, model) pairs; the models are not modified
        stage2_samples: Stage-2 corpus shared by every checkpoint
        stage2_cfg: Stage-2 recipe shared by every checkpoint
        vocab: Vocabulary
        codec: Codec
        knowledge: Suite for the refinement gain
        edits: Suite for the editing score
        sampler: Euler settings
        rules: Rule table
        edit_mode: Mode the editing suite runs in

    Returns:
        One point per checkpoint and the Spearman correlation of edit score and gain
    """
    rules = rules or load_rule_table()
    points = []
    for step, stage1_model in snapshots:
        label = f"stage1@{step}"
        # Editing ability is measured before the stage-2 recipe runs
        edit = eval_edit(InterleaveEngine(stage1_model, codec, vocab, sampler), edits, edit_mode, sampler, rules,
                         label=label).overall
        model = copy.deepcopy(stage1_model)
        train_stage2(model, stage2_samples, stage2_cfg, vocab, codec)
        engine = InterleaveEngine(model, codec, vocab, sampler)
        reason = eval_t2i(engine, knowledge, InferenceMode.REASON, sampler, rules, label=label).overall
        refine = eval_t2i(engine, knowledge, InferenceMode.REASON_REFINE, sampler, rules, label=label).overall
        points.append(CorrelationPoint(label=label, step=step, edit_score=edit, reason_score=reason,
                                       refine_score=refine, refine_gain=refine - reason))
        logger.info(f"{label}: edit {edit:.3f}, refinement gain {refine - reason:+.3f}")
    rho = spearman([p.edit_score for p in points], [p.refine_gain for p in points])
    return CorrelationResult(points=points, spearman=rho)
