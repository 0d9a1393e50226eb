"""
Held-out evaluation suites.

Suites are regenerated from seeds at or above EVAL_SEED_OFFSET, so they
never share a random source with a training corpus. Every spec in a suite
is checked to have a ground-truth scene before it is admitted.
"""

from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple

from loguru import logger

from corpus.builders import KNOWLEDGE_CATEGORIES
from corpus.samples import DatasetManifest
from toyworld.edits import sample_edit
from toyworld.instructions import COMPOSITIONAL_CATEGORIES, InstructionSpec, sample_compositional, sample_instruction
from toyworld.rules import RuleTable, load_rule_table
from toyworld.scenes import ground_truth_for
from utils.config import EVAL_SEED_OFFSET, WorldConfig
from utils.errors import ReasonerError, SeedOverlapError
from utils.seeding import derive_rng

MAX_DRAWS = 20


@dataclass
class EvalSuite:
    name: str
    specs: List[InstructionSpec]
    scoring: Literal['t2i', 'edit']
    seed: int

    @property
    def seed_range(self) -> Tuple[int, int]:
        return (self.seed, self.seed)

    def category_of(self, spec: InstructionSpec) -> str:
        return spec.family if self.scoring == 'edit' else spec.category

    def categories(self) -> List[str]:
        seen: Dict[str, None] = {}
        for spec in self.specs:
            seen.setdefault(self.category_of(spec), None)
        return list(seen)

    def __len__(self) -> int:
        return len(self.specs)


def eval_seed(seed: int) -> int:
    """Map a run seed into the evaluation range"""
    return seed if seed >= EVAL_SEED_OFFSET else EVAL_SEED_OFFSET + seed


def _admit(draw, key: Tuple, seed: int, world: WorldConfig, rules: RuleTable) -> Optional[InstructionSpec]:
    rng = derive_rng(seed, *key)
    for _ in range(MAX_DRAWS):
        try:
            spec = draw(rng)
            ground_truth_for(spec, rng, world, rules)
            return spec
        except ReasonerError as e:
            logger.debug(f"Suite draw {key} redrawn: {e}")
    logger.warning(f"Suite draw {key} gave up after {MAX_DRAWS} draws")
    return None


def knowledge_suite(per_category: int, seed: int = 0, world: Optional[WorldConfig] = None,
                    rules: Optional[RuleTable] = None, categories: Optional[Sequence[str]] = None) -> EvalSuite:
    """Knowledge-intensive prompts, `per_category` for each category"""
    world = world or WorldConfig()
    rules = rules or load_rule_table()
    seed = eval_seed(seed)
    specs = []
    for category in categories or KNOWLEDGE_CATEGORIES:
        for i in range(per_category):
            spec = _admit(lambda rng: sample_instruction(category, rng, world, rules),
                          ('knowledge', category, i), seed, world, rules)
            if spec is not None:
                specs.append(spec)
    return EvalSuite('knowledge', specs, 't2i', seed)


def compositional_suite(per_category: int, seed: int = 0, world: Optional[WorldConfig] = None,
                        rules: Optional[RuleTable] = None) -> EvalSuite:
    """Explicit prompts over the six compositional categories"""
    world = world or WorldConfig()
    rules = rules or load_rule_table()
    seed = eval_seed(seed)
    specs = []
    for category in COMPOSITIONAL_CATEGORIES:
        for i in range(per_category):
            spec = _admit(lambda rng: sample_compositional(category, rng, world),
                          ('compositional', category, i), seed, world, rules)
            if spec is not None:
                specs.append(spec)
    return EvalSuite('compositional', specs, 't2i', seed)


def edit_suite(size: int, seed: int = 0, world: Optional[WorldConfig] = None,
               rules: Optional[RuleTable] = None, family: Optional[str] = None) -> EvalSuite:
    """Editing cases with source, goal and targeted cells"""
    world = world or WorldConfig()
    rules = rules or load_rule_table()
    seed = eval_seed(seed)
    specs = []
    for i in range(size):
        spec = _admit(lambda rng: sample_edit(rng, world, rules, family), ('edit', i), seed, world, rules)
        if spec is not None:
            specs.append(spec)
    return EvalSuite('edit', specs, 'edit', seed)


def check_seed_disjointness(suite: EvalSuite, manifests: Sequence[DatasetManifest]) -> None:
    """
    Refuse to evaluate on seeds a training corpus used

    Raises:
        SeedOverlapError: the suite seed is a training seed, or a manifest reaches into the evaluation range
    """
    low, high = suite.seed_range
    if low < EVAL_SEED_OFFSET:
        raise SeedOverlapError(f"Suite {suite.name} uses training seed {low}")
    for manifest in manifests:
        m_low, m_high = manifest.seed_range
        if m_high >= EVAL_SEED_OFFSET or not (m_high < low or m_low > high):
            raise SeedOverlapError(f"Corpus {manifest.corpus} seeds {manifest.seed_range} overlap suite "
                                   f"{suite.name} seeds {suite.seed_range}")
