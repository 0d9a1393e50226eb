"""
Judge Agent for the interleaved refinement pipeline

The Judge Agent is responsible for:
- Scoring the draft and the refined image with the oracle
- Measuring how faithfully the refined image follows the directives
- Re-checking the outcome with the independent oracle before retaining a sample
"""

from typing import Dict, List, Optional, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from agents.directives import EditDirective, apply_directive, directive_holds
from toyworld.constraints import ConstraintSet
from toyworld.entities import GridImage
from toyworld.instructions import InstructionSpec, compile_constraints
from toyworld.oracle import independent_score, oracle_score
from toyworld.rules import RuleTable, load_rule_table
from toyworld.scenes import render
from utils.errors import DirectiveApplicationError

ROLE_PROFILE = {
    'role': 'Quality Judge',
    'goal': 'Keep only refinements that measurably improve the draft and follow the feedback',
    'backstory': 'An impartial examiner who trusts scores, not descriptions.'
}


class JudgeVerdict(BaseModel):
    """Outcome of judging one (I1, I2) pair"""

    model_config = ConfigDict(frozen=True)

    initial_score: float = Field(ge=0.0, le=1.0)
    refined_score: float = Field(ge=0.0, le=1.0)
    faithfulness: float = Field(ge=0.0, le=1.0)
    recheck_initial: float = Field(ge=0.0, le=1.0)
    recheck_refined: float = Field(ge=0.0, le=1.0)
    retain: bool

    @model_validator(mode='after')
    def _retention_needs_improvement(self):
        if self.retain and not (self.refined_score > self.initial_score and self.faithfulness == 1.0):
            raise ValueError('A retained sample must improve and follow every directive')
        return self


def faithfulness(before: GridImage, after: GridImage, directives: List[EditDirective]) -> float:
    """
    Fraction of directives verifiably applied

    Directives are replayed in order on the draft. When the replay lands on the
    refined image, a directive counts if its effect showed right after it was
    applied, so a later directive may rework an earlier one's cells. Otherwise
    each directive must still show in the refined image itself.
    """
    if not directives:
        return 1.0
    source = before.to_scene()
    target = after.to_scene()
    scene, shown = source, 0
    try:
        for d in directives:
            previous, scene = scene, apply_directive(scene, d)
            shown += directive_holds(scene, d, previous)
    except DirectiveApplicationError:
        scene = None
    if scene is not None and render(scene) == after:
        return shown / len(directives)
    return sum(1 for d in directives if directive_holds(target, d, source)) / len(directives)


def judge(initial: GridImage, refined: GridImage, spec: Union[InstructionSpec, ConstraintSet],
          directives: List[EditDirective], rules: Optional[RuleTable] = None) -> JudgeVerdict:
    """
    Decide whether a refinement sample is kept

    Args:
        initial: Draft image I1
        refined: Refined image I2
        spec: Instruction or compiled constraints
        directives: Directives that produced I2

    Returns:
        Verdict; ties in score are not retained
    """
    rules = rules or load_rule_table()
    cs = compile_constraints(spec, rules)
    s1 = oracle_score(initial, cs, rules)
    s2 = oracle_score(refined, cs, rules)
    r1 = independent_score(initial, cs, rules)
    r2 = independent_score(refined, cs, rules)
    faith = faithfulness(initial, refined, directives)
    retain = s2 > s1 and faith == 1.0 and r2 > r1 and r2 == s2
    if s2 != r2 or s1 != r1:
        logger.warning(f"Oracles disagree: primary {s1:.3f}->{s2:.3f}, independent {r1:.3f}->{r2:.3f}")
    return JudgeVerdict(initial_score=s1, refined_score=s2, faithfulness=faith,
                        recheck_initial=r1, recheck_refined=r2, retain=retain)


class JudgeAgent:
    """
    Judge Agent that gates refinement samples
    """

    def __init__(self, rules: Optional[RuleTable] = None):
        self.rules = rules or load_rule_table()
        self.profile: Dict[str, str] = dict(ROLE_PROFILE)

    def judge(self, initial: GridImage, refined: GridImage, spec: Union[InstructionSpec, ConstraintSet],
              directives: List[EditDirective]) -> JudgeVerdict:
        return judge(initial, refined, spec, directives, self.rules)
