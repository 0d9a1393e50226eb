"""
Agentic refinement pipeline

This package contains the four pipeline roles and their coordinator:
- Generator Agent: drafts reasoning and an image
- Verifier Agent: turns oracle failures into edit directives
- Refiner Agent: applies directives and writes the reflection
- Judge Agent: keeps only measurable, faithful improvements
- Coordinator Agent: runs the cycle over many samples
"""

from .coordinator import PipelineCoordinator, PipelineReport, RefinementRecord
from .directives import Action, Dimension, EditDirective, apply_directive, reflection_text
from .generator import GeneratorAgent, ModelBackend, ScriptedBackend, corrupt
from .judge import JudgeAgent, JudgeVerdict, judge
from .refiner import RefinerAgent, refine_teacher
from .remote import LoopbackTransport, RemoteAgent, RemoteAgentRequest, RemoteAgentResponse
from .verifier import VerifierAgent

__all__ = [
    'PipelineCoordinator',
    'PipelineReport',
    'RefinementRecord',
    'Action',
    'Dimension',
    'EditDirective',
    'apply_directive',
    'reflection_text',
    'GeneratorAgent',
    'ModelBackend',
    'ScriptedBackend',
    'corrupt',
    'JudgeAgent',
    'JudgeVerdict',
    'judge',
    'RefinerAgent',
    'refine_teacher',
    'LoopbackTransport',
    'RemoteAgent',
    'RemoteAgentRequest',
    'RemoteAgentResponse',
    'VerifierAgent'
]
