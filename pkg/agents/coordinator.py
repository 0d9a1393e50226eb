"""
Coordinator Agent for the interleaved refinement pipeline

The Coordinator Agent is responsible for:
- Running generate -> verify -> refine -> judge for every sample
- Spreading samples over a bounded worker pool with per-sample seeds
- Writing one audit line per stage per sample
- Resuming a run by skipping samples the audit log already finished
"""

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from loguru import logger
from tqdm import tqdm

from agents.directives import EditDirective, reflection_text
from agents.generator import GeneratorAgent, ModelBackend, ScriptedBackend
from agents.judge import JudgeAgent, JudgeVerdict
from agents.refiner import RefinerAgent
from agents.remote import LoopbackTransport, RemoteGenerator, RemoteJudge, RemoteRefiner, RemoteVerifier, Transport
from agents.verifier import VerifierAgent
from toyworld.entities import GridImage
from toyworld.instructions import InstructionSpec
from toyworld.rules import RuleTable, load_rule_table
from utils.config import PipelineConfig, WorldConfig
from utils.errors import ConfigurationError, PipelineStageError
from utils.seeding import derive_rng


@dataclass
class RefinementRecord:
    """Everything one pipeline cycle produced for a sample"""

    sample_id: str
    spec: InstructionSpec
    reasoning: str
    draft: GridImage
    directives: List[EditDirective]
    reflection: str
    refined: GridImage
    verdict: JudgeVerdict
    corruption_level: int = 0
    injected: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'sample_id': self.sample_id,
            'spec': self.spec.to_dict(),
            'reasoning': self.reasoning,
            'draft': self.draft.to_codes(),
            'directives': [d.model_dump(mode='json') for d in self.directives],
            'reflection': self.reflection,
            'refined': self.refined.to_codes(),
            'verdict': self.verdict.model_dump(mode='json'),
            'corruption_level': self.corruption_level,
            'injected': self.injected
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RefinementRecord':
        return cls(
            sample_id=data['sample_id'],
            spec=InstructionSpec.from_dict(data['spec']),
            reasoning=data['reasoning'],
            draft=GridImage.from_codes(data['draft']),
            directives=[EditDirective.model_validate(d) for d in data['directives']],
            reflection=data['reflection'],
            refined=GridImage.from_codes(data['refined']),
            verdict=JudgeVerdict.model_validate(data['verdict']),
            corruption_level=data.get('corruption_level', 0),
            injected=data.get('injected', 0)
        )


@dataclass
class PipelineReport:
    records: List[RefinementRecord] = field(default_factory=list)
    failures: List[PipelineStageError] = field(default_factory=list)
    resumed: int = 0

    @property
    def retained(self) -> List[RefinementRecord]:
        return [r for r in self.records if r.verdict.retain]

    @property
    def retention_rate(self) -> float:
        return len(self.retained) / len(self.records) if self.records else 0.0


class AuditLog:
    """Append-only JSONL audit trail shared by worker threads"""

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, sample_id: str, stage: str, status: str, **details: Any) -> None:
        if self.path is None:
            return
        line = {'time': datetime.now(timezone.utc).isoformat(), 'sample_id': sample_id,
                'stage': stage, 'status': status, **details}
        with self._lock, open(self.path, 'a', encoding='utf-8') as f:
            f.write(json.dumps(line, sort_keys=True) + '\n')

    def completed(self) -> Dict[str, RefinementRecord]:
        """Records of samples whose judge stage finished"""
        done: Dict[str, RefinementRecord] = {}
        if self.path is None or not self.path.exists():
            return done
        with open(self.path, 'r', encoding='utf-8') as f:
            for raw in f:
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    line = json.loads(raw)
                except json.JSONDecodeError:
                    # A crash can leave a torn final line
                    logger.warning(f"Skipping unreadable audit line in {self.path}")
                    continue
                if line.get('stage') == 'judge' and line.get('status') == 'ok' and 'record' in line:
                    done[line['sample_id']] = RefinementRecord.from_dict(line['record'])
        return done


class PipelineCoordinator:
    """
    Coordinator Agent that drives the four roles over a batch of specs
    """

    def __init__(self, generator: Any, verifier: Any, refiner: Any, judge: Any, seed: int = 0,
                 workers: int = 1, audit_path: Optional[Path] = None, corruption_level: int = 0):
        self.generator = generator
        self.verifier = verifier
        self.refiner = refiner
        self.judge = judge
        self.seed = seed
        self.workers = workers
        self.audit = AuditLog(audit_path)
        self.corruption_level = corruption_level

    @classmethod
    def from_config(cls, config: PipelineConfig, seed: int = 0, level: int = 1,
                    world: Optional[WorldConfig] = None, rules: Optional[RuleTable] = None,
                    engine: Any = None, transport: Optional[Transport] = None,
                    audit_path: Optional[Path] = None) -> 'PipelineCoordinator':
        """
        Build a coordinator for one corruption level

        Args:
            config: Pipeline section of the run config
            seed: Base seed for per-sample random sources
            level: Violations the scripted generator injects
            world: Grid configuration
            rules: Rule table
            engine: Interleave engine for the model backend
            transport: Transport for the remote backend; loopback when omitted
            audit_path: Audit JSONL file

        Returns:
            Configured coordinator
        """
        rules = rules or load_rule_table()
        if config.backend == 'remote':
            transport = transport or LoopbackTransport(level, rules, world=world)
            return cls(RemoteGenerator(transport), RemoteVerifier(transport), RemoteRefiner(transport),
                       RemoteJudge(transport), seed, config.workers, audit_path, level)
        if config.backend == 'model':
            if engine is None:
                raise ConfigurationError('The model backend needs a trained checkpoint')
            backend = ModelBackend(engine)
        else:
            backend = ScriptedBackend(level, world, rules)
        return cls(GeneratorAgent(backend), VerifierAgent(rules), RefinerAgent(rules), JudgeAgent(rules),
                   seed, config.workers, audit_path, level)

    def _stage(self, role: str, sample_id: str, fn, *args):
        try:
            return fn(*args)
        except Exception as e:
            self.audit.write(sample_id, role, 'error', error=f"{type(e).__name__}: {e}")
            raise PipelineStageError(role, sample_id, e) from e

    def run_sample(self, sample_id: str, spec: InstructionSpec) -> RefinementRecord:
        """
        One full generate -> verify -> refine -> judge cycle

        Raises:
            PipelineStageError: a role failed; the error names it
        """
        rng = derive_rng(self.seed, sample_id)
        draft = self._stage('generator', sample_id, self.generator.generate_draft, spec, rng)
        self.audit.write(sample_id, 'generator', 'ok', injected=len(draft.broken))

        directives = self._stage('verifier', sample_id, self.verifier.verify, draft.image, spec)
        self.audit.write(sample_id, 'verifier', 'ok', directives=[d.describe() for d in directives])

        if directives:
            refined = self._stage('refiner', sample_id, self.refiner.refine, draft.image, directives, spec)
        else:
            # A perfect draft needs no refinement
            refined = draft.image
        self.audit.write(sample_id, 'refiner', 'ok', applied=len(directives))

        verdict = self._stage('judge', sample_id, self.judge.judge, draft.image, refined, spec, directives)
        record = RefinementRecord(sample_id, spec, draft.reasoning, draft.image, directives,
                                  reflection_text(directives), refined, verdict,
                                  self.corruption_level, len(draft.broken))
        if draft.broken and not (verdict.retain and verdict.refined_score == 1.0):
            logger.warning(f"{sample_id}: {len(draft.broken)} injected violation(s) not fully repaired "
                           f"({verdict.initial_score:.3f} -> {verdict.refined_score:.3f})")
        self.audit.write(sample_id, 'judge', 'ok', retain=verdict.retain, record=record.to_dict())
        return record

    def run(self, items: Sequence[Tuple[str, InstructionSpec]], progress: bool = False) -> PipelineReport:
        """
        Run the pipeline over (sample_id, spec) pairs

        Args:
            items: Samples keyed by a unique id
            progress: Show a progress bar

        Returns:
            Report with records in input order, failures and the resumed count
        """
        ids = [sample_id for sample_id, _ in items]
        if len(set(ids)) != len(ids):
            raise ConfigurationError('Sample ids must be unique')
        done = self.audit.completed()
        pending = [(sid, spec) for sid, spec in items if sid not in done]
        report = PipelineReport(resumed=len(items) - len(pending))
        if report.resumed:
            logger.info(f"Resuming: {report.resumed} sample(s) already finished")

        results: Dict[str, RefinementRecord] = {sid: rec for sid, rec in done.items() if sid in set(ids)}

        def work(item: Tuple[str, InstructionSpec]):
            try:
                return item[0], self.run_sample(*item)
            except PipelineStageError as e:
                logger.warning(str(e))
                return item[0], e

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            for sample_id, outcome in tqdm(pool.map(work, pending), total=len(pending),
                                           desc='pipeline', disable=not progress):
                if isinstance(outcome, PipelineStageError):
                    report.failures.append(outcome)
                else:
                    results[sample_id] = outcome
        report.records = [results[sid] for sid in ids if sid in results]
        logger.info(f"Pipeline finished {len(report.records)} sample(s), retained {len(report.retained)}, "
                    f"failed {len(report.failures)}")
        return report
