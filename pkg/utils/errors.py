"""
Exception hierarchy for the interleaved reasoning pipeline.

Every module raises a subclass of ReasonerError so the CLI can turn any
pipeline failure into a nonzero exit status with one handler.
"""

from typing import Optional


class ReasonerError(Exception):
    """Base class for all pipeline errors"""


class ConfigurationError(ReasonerError, ValueError):
    """Invalid or inconsistent configuration"""


class RejectedInputError(ReasonerError, ValueError):
    """Input violates an operation's precondition"""


class UnsatisfiableConstraintsError(ReasonerError):
    """No scene satisfies the constraint set"""


class SamplerDivergenceError(ReasonerError):
    """The Euler sampler produced a non-finite latent"""

    def __init__(self, step: int, stage: Optional[str] = None):
        self.step = step
        self.stage = stage
        where = f" during {stage}" if stage else ""
        super().__init__(f"Sampler diverged at step {step}{where}")


class ContextOverflowError(ReasonerError):
    """Sequence does not fit the model's context budget"""


class PackingError(ReasonerError, ValueError):
    """A sample cannot be packed"""


class DirectiveApplicationError(ReasonerError):
    """A directive references a target that does not exist"""


class DirectiveConflictError(ReasonerError):
    """Applying a directive broke a constraint it does not mention"""


class PipelineStageError(ReasonerError):
    """A pipeline role failed for one sample"""

    def __init__(self, role: str, sample_id: str, cause: Exception):
        self.role = role
        self.sample_id = sample_id
        self.cause = cause
        super().__init__(f"[{role}] sample {sample_id}: {cause}")


class SchemaVersionError(ReasonerError):
    """A persisted artifact has an unknown schema version"""


class MaskViolationError(ReasonerError):
    """Supervision masks do not match the sample type"""


class SeedOverlapError(ReasonerError):
    """Evaluation seeds overlap training seeds"""


class RemoteAgentError(ReasonerError):
    """A remote agent returned an unusable response"""
