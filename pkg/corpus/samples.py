"""
Training sample types and the dataset manifest.

Every sample lists its segments as (name, kind, role) triples. The roles
say which parts are learned: context is read only, draft parts of a
refinement sample are read but never supervised, supervised parts carry
the loss. The triples are stored with the sample and re-derived on read,
so a file whose masks disagree with its sample type is rejected.
"""

from dataclasses import dataclass, field
from typing import Any, ClassVar, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from agents.directives import EditDirective
from agents.judge import JudgeVerdict
from toyworld.entities import GridImage
from toyworld.instructions import InstructionSpec

SCHEMA_VERSION = '1'

Segment = Tuple[str, str, str]


def _context_segments(spec: InstructionSpec) -> List[Segment]:
    segments: List[Segment] = []
    if spec.is_edit:
        segments.append(('SRC', 'image', 'context'))
    segments.append(('C', 'text', 'context'))
    return segments


@dataclass
class Stage1Sample:
    """Instruction to image, no reasoning; `spec.source` makes it an editing sample"""

    sample_id: str
    spec: InstructionSpec
    target: GridImage
    seed: int
    corpus: str = 'stage1'

    sample_type: ClassVar[str] = 'stage1'

    @property
    def category(self) -> str:
        return 'edit' if self.spec.is_edit else self.spec.category

    def segments(self) -> List[Segment]:
        return _context_segments(self.spec) + [('I', 'image', 'supervised')]

    def images(self) -> List[GridImage]:
        return [img for img in (self.spec.source, self.target) if img is not None]

    def to_dict(self) -> Dict[str, Any]:
        return {'sample_id': self.sample_id, 'spec': self.spec.to_dict(), 'target': self.target.to_codes(),
                'seed': self.seed, 'corpus': self.corpus}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Stage1Sample':
        return cls(data['sample_id'], InstructionSpec.from_dict(data['spec']), GridImage.from_codes(data['target']),
                   data['seed'], data.get('corpus', cls.sample_type))


@dataclass
class SingleTurnSample:
    """Instruction, supervised reasoning, supervised image"""

    sample_id: str
    spec: InstructionSpec
    reasoning: str
    target: GridImage
    seed: int

    sample_type: ClassVar[str] = 'single_turn'

    @property
    def category(self) -> str:
        return 'edit' if self.spec.is_edit else self.spec.category

    def segments(self) -> List[Segment]:
        return _context_segments(self.spec) + [('T', 'text', 'supervised'), ('I', 'image', 'supervised')]

    def images(self) -> List[GridImage]:
        return [img for img in (self.spec.source, self.target) if img is not None]

    def to_dict(self) -> Dict[str, Any]:
        return {'sample_id': self.sample_id, 'spec': self.spec.to_dict(), 'reasoning': self.reasoning,
                'target': self.target.to_codes(), 'seed': self.seed}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SingleTurnSample':
        return cls(data['sample_id'], InstructionSpec.from_dict(data['spec']), data['reasoning'],
                   GridImage.from_codes(data['target']), data['seed'])


@dataclass
class RefineSample:
    """Draft (T1, I1) read as context, reflection and refined image supervised"""

    sample_id: str
    spec: InstructionSpec
    draft_reasoning: str
    draft: GridImage
    reflection: str
    refined: GridImage
    directives: List[EditDirective]
    verdict: JudgeVerdict
    seed: int
    corruption_level: int = 0

    sample_type: ClassVar[str] = 'refine'

    @property
    def category(self) -> str:
        return 'edit' if self.spec.is_edit else self.spec.category

    def segments(self) -> List[Segment]:
        return _context_segments(self.spec) + [
            ('T1', 'text', 'draft'), ('I1', 'image', 'draft'),
            ('T2', 'text', 'supervised'), ('I2', 'image', 'supervised')
        ]

    def images(self) -> List[GridImage]:
        return [img for img in (self.spec.source, self.draft, self.refined) if img is not None]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sample_id': self.sample_id,
            'spec': self.spec.to_dict(),
            'draft_reasoning': self.draft_reasoning,
            'draft': self.draft.to_codes(),
            'reflection': self.reflection,
            'refined': self.refined.to_codes(),
            'directives': [d.model_dump(mode='json') for d in self.directives],
            'verdict': self.verdict.model_dump(mode='json'),
            'seed': self.seed,
            'corruption_level': self.corruption_level
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RefineSample':
        return cls(
            sample_id=data['sample_id'],
            spec=InstructionSpec.from_dict(data['spec']),
            draft_reasoning=data['draft_reasoning'],
            draft=GridImage.from_codes(data['draft']),
            reflection=data['reflection'],
            refined=GridImage.from_codes(data['refined']),
            directives=[EditDirective.model_validate(d) for d in data['directives']],
            verdict=JudgeVerdict.model_validate(data['verdict']),
            seed=data['seed'],
            corruption_level=data.get('corruption_level', 0)
        )


Sample = Union[Stage1Sample, SingleTurnSample, RefineSample]

SAMPLE_TYPES = {cls.sample_type: cls for cls in (Stage1Sample, SingleTurnSample, RefineSample)}


class DatasetManifest(BaseModel):
    """Sidecar describing one JSONL corpus"""

    model_config = ConfigDict(extra='forbid')

    schema_version: str = SCHEMA_VERSION
    corpus: str
    sample_type: str
    seed: int
    seed_range: Tuple[int, int]
    rule_table_version: str
    counts: Dict[str, int] = Field(default_factory=dict)
    total: int = 0
    rejected: Dict[str, int] = Field(default_factory=dict)
    retention_rate: Optional[float] = None
    config_hash: Optional[str] = None
    notes: Dict[str, Any] = Field(default_factory=dict)


def count_by_category(samples: List[Sample]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    for s in samples:
        counts[s.category] = counts.get(s.category, 0) + 1
    return dict(sorted(counts.items()))


@dataclass
class BuildResult:
    samples: List[Sample]
    manifest: DatasetManifest
    rejects: List[Dict[str, Any]] = field(default_factory=list)
