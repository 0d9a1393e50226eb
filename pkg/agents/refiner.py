"""
Refiner Agent for the interleaved refinement pipeline

The Refiner Agent is responsible for:
- Applying the verifier's directives to the draft, in order
- Refusing any directive that breaks a satisfied constraint it does not address
- Writing the reflection text that accompanies the refined image
"""

from typing import Dict, List, Optional, Union

from loguru import logger

from agents.directives import EditDirective, apply_directive, reflection_text
from toyworld.constraints import ConstraintSet
from toyworld.entities import GridImage
from toyworld.instructions import InstructionSpec, compile_constraints
from toyworld.rules import RuleTable, load_rule_table
from toyworld.scenes import render
from utils.errors import DirectiveConflictError

ROLE_PROFILE = {
    'role': 'Refinement Teacher',
    'goal': 'Carry out edit directives exactly and nothing more',
    'backstory': 'A careful editor that changes only what it is told to change.'
}


def refine_teacher(image: GridImage, directives: List[EditDirective],
                   constraints: Optional[Union[ConstraintSet, InstructionSpec]] = None,
                   rules: Optional[RuleTable] = None) -> GridImage:
    """
    Apply directives to a draft

    Args:
        image: Draft image I1
        directives: Directives in application order
        constraints: When given, every directive is checked for collateral damage
        rules: Rule table

    Returns:
        Refined image I2

    Raises:
        DirectiveApplicationError: a directive targets a cell it cannot act on
        DirectiveConflictError: a directive broke a constraint it does not address
    """
    rules = rules or load_rule_table()
    cs = compile_constraints(constraints, rules) if constraints is not None else None
    scene = image.to_scene()
    for directive in directives:
        before = cs.satisfied(scene, rules) if cs is not None else None
        scene = apply_directive(scene, directive)
        if cs is None:
            continue
        after = cs.satisfied(scene, rules)
        for constraint, held, holds in zip(cs, before, after):
            if held and not holds and constraint.describe(rules) != directive.addresses:
                raise DirectiveConflictError(
                    f"'{directive.describe()}' breaks '{constraint.describe(rules)}'")
    return render(scene)


class RefinerAgent:
    """
    Refiner Agent that produces (T2, I2) from a draft and directives
    """

    def __init__(self, rules: Optional[RuleTable] = None):
        self.rules = rules or load_rule_table()
        self.profile: Dict[str, str] = dict(ROLE_PROFILE)

    def refine(self, image: GridImage, directives: List[EditDirective],
               spec: Optional[Union[ConstraintSet, InstructionSpec]] = None) -> GridImage:
        refined = refine_teacher(image, directives, spec, self.rules)
        logger.debug(f"Refiner applied {len(directives)} directive(s)")
        return refined

    @staticmethod
    def reflect(directives: List[EditDirective]) -> str:
        return reflection_text(directives)
