"""
Remote adapter for pipeline roles

Any of the four roles can run behind a service that speaks the versioned
JSON schema below (documented in docs/remote_agent_schema.md). Only a
loopback transport ships; it routes requests to the local roles.
"""

import hashlib
import json
from typing import Any, Callable, Dict, List, Literal, Optional, Protocol

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from agents.directives import EditDirective
from agents.generator import Draft, GeneratorAgent, ScriptedBackend
from agents.judge import JudgeVerdict, judge
from agents.refiner import refine_teacher
from agents.verifier import VerifierAgent
from toyworld.entities import GridImage
from toyworld.instructions import InstructionSpec
from toyworld.rules import RuleTable, load_rule_table
from utils.config import WorldConfig, configure_role
from utils.errors import RemoteAgentError
from utils.seeding import derive_rng

SCHEMA_VERSION = '1'
RoleName = Literal['generator', 'verifier', 'refiner', 'judge']
Codes = List[List[int]]


class RemoteAgentRequest(BaseModel):
    model_config = ConfigDict(extra='forbid')

    version: str = SCHEMA_VERSION
    role: RoleName
    sample_id: str
    brief: Dict[str, str] = Field(default_factory=dict)
    instruction: Dict[str, Any]
    images: Dict[str, Codes] = Field(default_factory=dict)
    directives: List[EditDirective] = Field(default_factory=list)
    seed: Optional[int] = None


class RemoteAgentResponse(BaseModel):
    model_config = ConfigDict(extra='forbid')

    version: str
    role: RoleName
    sample_id: str
    output: str = ''
    directives: List[EditDirective] = Field(default_factory=list)
    image: Optional[Codes] = None
    verdict: Optional[JudgeVerdict] = None


class Transport(Protocol):
    def send(self, payload: Dict[str, Any], timeout: float) -> Dict[str, Any]:
        ...


# Fields a response must carry for each role
REQUIRED_OUTPUTS: Dict[str, str] = {
    'generator': 'image',
    'refiner': 'image',
    'judge': 'verdict'
}


def parse_response(raw: Any, request: RemoteAgentRequest) -> RemoteAgentResponse:
    """
    Validate a raw response against the request it answers

    Raises:
        RemoteAgentError: the response does not parse or does not match
    """
    try:
        response = RemoteAgentResponse.model_validate(raw)
    except ValidationError as e:
        raise RemoteAgentError(f"Malformed {request.role} response: {e}") from e
    if response.version != SCHEMA_VERSION:
        raise RemoteAgentError(f"Unsupported schema version '{response.version}'")
    if response.role != request.role or response.sample_id != request.sample_id:
        raise RemoteAgentError(f"Response for {response.role}/{response.sample_id} "
                               f"does not answer {request.role}/{request.sample_id}")
    needed = REQUIRED_OUTPUTS.get(request.role)
    if needed and getattr(response, needed) is None:
        raise RemoteAgentError(f"{request.role} response is missing '{needed}'")
    return response


class RemoteAgent:
    """
    Client for one remote role with timeout and retry from the role table
    """

    def __init__(self, role: RoleName, transport: Transport, settings: Optional[Dict[str, Any]] = None,
                 backoff: float = 0.5):
        self.role = role
        self.transport = transport
        self.settings = settings or configure_role(role)
        self.backoff = backoff

    def call(self, request: RemoteAgentRequest) -> RemoteAgentResponse:
        """
        Send a request, retrying transport failures and unusable responses

        Raises:
            RemoteAgentError: every attempt failed
        """
        retrying = Retrying(
            stop=stop_after_attempt(self.settings['max_attempts']),
            wait=wait_exponential(multiplier=self.backoff, max=10.0),
            retry=retry_if_exception_type((RemoteAgentError, ConnectionError, TimeoutError)),
            reraise=False
        )
        payload = request.model_dump(mode='json')
        try:
            for attempt in retrying:
                with attempt:
                    if attempt.retry_state.attempt_number > 1:
                        logger.warning(f"Retrying {self.role} request {request.sample_id} "
                                       f"(attempt {attempt.retry_state.attempt_number})")
                    raw = self.transport.send(payload, self.settings['timeout'])
                    return parse_response(raw, request)
        except RetryError as e:
            cause = e.last_attempt.exception()
            raise RemoteAgentError(f"{self.role} failed after {self.settings['max_attempts']} attempts: {cause}") from cause


def request_id(spec: InstructionSpec) -> str:
    return hashlib.sha256(spec.text.encode('utf-8')).hexdigest()[:12]


class RemoteGenerator:
    def __init__(self, transport: Transport, profile: Optional[Dict[str, str]] = None, backoff: float = 0.5):
        self.client = RemoteAgent('generator', transport, backoff=backoff)
        self.profile = profile or {}

    def generate_draft(self, spec: InstructionSpec, rng: np.random.Generator) -> Draft:
        request = RemoteAgentRequest(role='generator', sample_id=request_id(spec), brief=self.profile,
                                     instruction=spec.to_dict(), seed=int(rng.integers(0, 2**31 - 1)))
        response = self.client.call(request)
        return Draft(response.output, GridImage.from_codes(response.image))


class RemoteVerifier:
    def __init__(self, transport: Transport, profile: Optional[Dict[str, str]] = None, backoff: float = 0.5):
        self.client = RemoteAgent('verifier', transport, backoff=backoff)
        self.profile = profile or {}

    def verify(self, image: GridImage, spec: InstructionSpec,
               rng: Optional[np.random.Generator] = None) -> List[EditDirective]:
        request = RemoteAgentRequest(role='verifier', sample_id=request_id(spec), brief=self.profile,
                                     instruction=spec.to_dict(), images={'draft': image.to_codes()})
        return list(self.client.call(request).directives)


class RemoteRefiner:
    def __init__(self, transport: Transport, profile: Optional[Dict[str, str]] = None, backoff: float = 0.5):
        self.client = RemoteAgent('refiner', transport, backoff=backoff)
        self.profile = profile or {}

    def refine(self, image: GridImage, directives: List[EditDirective],
               spec: Optional[InstructionSpec] = None) -> GridImage:
        request = RemoteAgentRequest(role='refiner', sample_id=request_id(spec), brief=self.profile,
                                     instruction=spec.to_dict(), images={'draft': image.to_codes()},
                                     directives=directives)
        return GridImage.from_codes(self.client.call(request).image)


class RemoteJudge:
    def __init__(self, transport: Transport, profile: Optional[Dict[str, str]] = None, backoff: float = 0.5):
        self.client = RemoteAgent('judge', transport, backoff=backoff)
        self.profile = profile or {}

    def judge(self, initial: GridImage, refined: GridImage, spec: InstructionSpec,
              directives: List[EditDirective]) -> JudgeVerdict:
        request = RemoteAgentRequest(role='judge', sample_id=request_id(spec), brief=self.profile,
                                     instruction=spec.to_dict(), directives=directives,
                                     images={'draft': initial.to_codes(), 'refined': refined.to_codes()})
        return self.client.call(request).verdict


class LoopbackTransport:
    """
    Test double that serves requests with the local oracle roles

    Payloads pass through JSON both ways so the wire schema is exercised.
    `faults` makes the next N sends raise ConnectionError.
    """

    def __init__(self, level: int = 1, rules: Optional[RuleTable] = None, faults: int = 0,
                 tamper: Optional[Callable[[Dict[str, Any]], Dict[str, Any]]] = None,
                 world: Optional[WorldConfig] = None):
        self.rules = rules or load_rule_table()
        self.generator = GeneratorAgent(ScriptedBackend(level, world, self.rules))
        self.verifier = VerifierAgent(self.rules)
        self.faults = faults
        self.tamper = tamper
        self.requests: List[Dict[str, Any]] = []

    def send(self, payload: Dict[str, Any], timeout: float) -> Dict[str, Any]:
        self.requests.append(payload)
        if self.faults > 0:
            self.faults -= 1
            raise ConnectionError('loopback fault injected')
        request = RemoteAgentRequest.model_validate(json.loads(json.dumps(payload)))
        response = self._serve(request).model_dump(mode='json')
        if self.tamper is not None:
            response = self.tamper(response)
        return json.loads(json.dumps(response))

    def _serve(self, request: RemoteAgentRequest) -> RemoteAgentResponse:
        spec = InstructionSpec.from_dict(request.instruction)
        reply: Dict[str, Any] = {'version': SCHEMA_VERSION, 'role': request.role, 'sample_id': request.sample_id}
        draft = GridImage.from_codes(request.images['draft']) if 'draft' in request.images else None
        if request.role == 'generator':
            result = self.generator.generate_draft(spec, derive_rng(request.seed or 0, request.sample_id))
            reply.update(output=result.reasoning, image=result.image.to_codes())
        elif request.role == 'verifier':
            reply['directives'] = self.verifier.verify(draft, spec)
        elif request.role == 'refiner':
            reply['image'] = refine_teacher(draft, request.directives, spec, self.rules).to_codes()
        else:
            refined = GridImage.from_codes(request.images['refined'])
            reply['verdict'] = judge(draft, refined, spec, request.directives, self.rules)
        return RemoteAgentResponse(**reply)
