"""Gateway for every model call.

Templates load verbatim from the prompts directory. A provider turns a
rendered ``PromptRequest`` into text; the gateway adds retries, admission
control, structured extraction and the call log around it.
"""

import asyncio
import hashlib
import json
import logging
import re
import time
import uuid
from pathlib import Path
from string import Formatter
from typing import Any, Dict, List, Optional, Tuple, Type, Union

from pydantic import BaseModel, ValidationError

from sqlsynth.core.config import settings
from sqlsynth.core.exceptions import (
    AuthError,
    ExtractionError,
    GatewayError,
    MissingPlaceholder,
    PreconditionError,
    TransientError,
    UnknownPlaceholder,
)
from sqlsynth.schemas.gateway import TEMPLATE_NAMES, GatewayCall, PromptRequest, PromptTemplate
from sqlsynth.utils.record_io import append_jsonl


logger = logging.getLogger(__name__)

CALL_NAMESPACE = uuid.UUID("6f1c1a52-3f0e-4c55-9d8a-6d0e2b1f7c11")

FENCE = re.compile(r"```[a-zA-Z]*\s*(.*?)```", re.S)


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def load_template(name: str, prompts_dir: Union[str, Path, None] = None) -> PromptTemplate:
    """Read one template file verbatim and collect its placeholders"""
    if name not in TEMPLATE_NAMES:
        raise PreconditionError(f"Unknown template {name}", template=name)
    path = Path(prompts_dir or settings.prompts_path) / f"{name}.txt"
    if not path.exists():
        raise PreconditionError(f"Template file not found: {path}", template=name)
    body = path.read_text(encoding="utf-8")
    placeholders = []
    for _, field, _, _ in Formatter().parse(body):
        if field is not None and field not in placeholders:
            placeholders.append(field)
    return PromptTemplate(name=name, body=body, placeholders=tuple(placeholders))


def render_prompt(template: PromptTemplate, bindings: Dict[str, Any]) -> str:
    """Substitute every placeholder; unbound and undeclared names are errors"""
    for key in bindings:
        if key not in template.placeholders:
            raise UnknownPlaceholder(key, template.name)
    for name in template.placeholders:
        if name not in bindings:
            raise MissingPlaceholder(name, template.name)
    values = {key: value if isinstance(value, str) else json.dumps(value, ensure_ascii=False, default=str)
              for key, value in bindings.items()}
    return template.body.format_map(values)


def _first_block(text: str) -> Tuple[Any, str]:
    decoder = json.JSONDecoder()
    for match in re.finditer(r"[\[{]", text):
        try:
            value, end = decoder.raw_decode(text, match.start())
        except json.JSONDecodeError:
            continue
        return value, text[match.start():end]
    raise ValueError("no structured block")


def extract_structured(text: str, shape: Union[Type[BaseModel], type]) -> Any:
    """Parse the first well-formed JSON block of a response into the expected shape"""
    stripped = (text or "").strip()
    try:
        value, span = json.loads(stripped), stripped
    except json.JSONDecodeError:
        # Repair pass: drop prose and code fences around the block
        fenced = FENCE.findall(stripped)
        candidates = [block.strip() for block in fenced] + [stripped]
        value = span = None
        for candidate in candidates:
            try:
                value, span = _first_block(candidate)
                break
            except ValueError:
                continue
        if span is None:
            raise ExtractionError("No structured block in response", span=stripped[:200])

    if isinstance(shape, type) and issubclass(shape, BaseModel):
        try:
            return shape.model_validate(value)
        except ValidationError as e:
            raise ExtractionError(f"Structured block does not match {shape.__name__}: {e.error_count()} error(s)",
                                  span=span[:200])
    if not isinstance(value, shape):
        raise ExtractionError(f"Expected {shape.__name__}, got {type(value).__name__}", span=span[:200])
    return value


class RateLimiter:
    """Token bucket shared by all workers, plus a cap on calls in flight"""

    def __init__(self, concurrency: int, per_minute: int):
        self.capacity = max(per_minute, 1)
        self.rate = self.capacity / 60.0
        self.tokens = float(self.capacity)
        self.updated = time.monotonic()
        self._semaphore = asyncio.Semaphore(max(concurrency, 1))
        self._lock = asyncio.Lock()

    async def acquire(self) -> None:
        await self._semaphore.acquire()
        async with self._lock:
            while True:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                await asyncio.sleep((1 - self.tokens) / self.rate)

    def release(self) -> None:
        self._semaphore.release()


class RemoteProvider:
    """Chat-completion endpoint through the openai client"""

    name = "remote"

    def __init__(self, endpoint: Optional[str] = None, model: Optional[str] = None, key: Optional[str] = None):
        self.endpoint = endpoint or settings.LLM_ENDPOINT
        self.model = model or settings.LLM_MODEL
        self.key = key or settings.LLM_KEY
        if not self.endpoint or not self.key:
            raise PreconditionError("Remote provider needs SYNTH_LLM_ENDPOINT and SYNTH_LLM_KEY")

    async def complete(self, request: PromptRequest) -> str:
        import openai

        try:
            response = await asyncio.to_thread(
                openai.ChatCompletion.create,
                api_base=self.endpoint,
                api_key=self.key,
                model=self.model,
                messages=[
                    {"role": "system", "content": "You are a careful SQL data engineer. Answer with JSON only."},
                    {"role": "user", "content": request.prompt},
                ],
                max_tokens=settings.LLM_MAX_TOKENS,
                temperature=settings.LLM_TEMPERATURE,
            )
        except (openai.error.AuthenticationError, openai.error.PermissionError) as e:
            raise AuthError(f"Credential rejected by {self.endpoint}: {e}")
        except openai.error.InvalidRequestError as e:
            raise GatewayError(f"Request rejected by {self.endpoint}: {e}")
        except openai.error.OpenAIError as e:
            raise TransientError(f"{type(e).__name__}: {e}")
        return response.choices[0].message.content.strip()


def create_provider(name: Optional[str] = None, fixtures_dir: Union[str, Path, None] = None):
    name = name or settings.PROVIDER
    if name == "mock":
        from sqlsynth.services.mock_provider import MockProvider

        return MockProvider(fixtures_dir=fixtures_dir or settings.fixtures_path)
    if name == "remote":
        return RemoteProvider()
    raise PreconditionError(f"Unknown provider {name}")


class LLMService:
    def __init__(self, provider=None, prompts_dir: Union[str, Path, None] = None,
                 call_log: Union[str, Path, None] = None, max_attempts: Optional[int] = None,
                 backoff_secs: Optional[float] = None, rate_limiter: Optional[RateLimiter] = None):
        self.provider = provider or create_provider()
        self.prompts_dir = Path(prompts_dir) if prompts_dir else settings.prompts_path
        self.call_log = Path(call_log) if call_log else None
        self.max_attempts = max_attempts or settings.LLM_MAX_ATTEMPTS
        self.backoff_secs = settings.LLM_BACKOFF_SECS if backoff_secs is None else backoff_secs
        if rate_limiter is None and getattr(self.provider, "name", "") == "remote":
            rate_limiter = RateLimiter(settings.RATE_LIMIT_CONCURRENCY, settings.RATE_LIMIT_PER_MINUTE)
        self.rate_limiter = rate_limiter
        self.calls: Dict[str, GatewayCall] = {}
        self._templates: Dict[str, PromptTemplate] = {}
        self._occurrences: Dict[Tuple[str, str], int] = {}

    def template(self, name: str) -> PromptTemplate:
        if name not in self._templates:
            self._templates[name] = load_template(name, self.prompts_dir)
        return self._templates[name]

    def render(self, name: str, bindings: Dict[str, Any]) -> str:
        return render_prompt(self.template(name), bindings)

    def _call_id(self, template: str, digest: str) -> str:
        key = (template, digest)
        occurrence = self._occurrences.get(key, 0)
        self._occurrences[key] = occurrence + 1
        return str(uuid.uuid5(CALL_NAMESPACE, f"{template}:{digest}:{occurrence}"))

    async def complete(self, request: PromptRequest) -> GatewayCall:
        """Send one prompt, retrying transient failures; the recorded call carries the response"""
        call = GatewayCall(
            call_id=self._call_id(request.template, prompt_hash(request.prompt)),
            template=request.template,
            prompt=request.prompt,
            provider=getattr(self.provider, "name", type(self.provider).__name__),
        )
        started = time.monotonic()
        try:
            for attempt in range(1, self.max_attempts + 1):
                call.attempts = attempt
                if self.rate_limiter:
                    await self.rate_limiter.acquire()
                try:
                    call.response = await self.provider.complete(request)
                    break
                except AuthError:
                    call.errors.append("credential rejected")
                    raise
                except (TransientError, asyncio.TimeoutError, ConnectionError) as e:
                    call.errors.append(f"attempt {attempt}: {e}")
                    logger.warning("gateway transient failure template=%s attempt=%d error=%s",
                                   request.template, attempt, e)
                    if attempt < self.max_attempts:
                        await asyncio.sleep(self.backoff_secs * 2 ** (attempt - 1))
                finally:
                    if self.rate_limiter:
                        self.rate_limiter.release()
            else:
                raise GatewayError(f"Gateway gave up on {request.template} after {self.max_attempts} attempt(s)",
                                   attempts=call.errors)
        finally:
            call.latency_ms = (time.monotonic() - started) * 1000
            self._record(call)
        logger.debug("gateway call template=%s provider=%s attempts=%d latency_ms=%.1f",
                     call.template, call.provider, call.attempts, call.latency_ms)
        return call

    def _record(self, call: GatewayCall) -> None:
        self.calls[call.call_id] = call
        if self.call_log:
            append_jsonl(self.call_log, call)

    async def generate(self, template_name: str, bindings: Dict[str, Any],
                       shape: Union[Type[BaseModel], type]) -> Tuple[Any, str]:
        """Render, complete and extract; returns the structured value and the call id"""
        prompt = self.render(template_name, bindings)
        call = await self.complete(PromptRequest(template=template_name, prompt=prompt, bindings=bindings))
        return extract_structured(call.response, shape), call.call_id

    def resolve(self, call_ids: List[str]) -> List[GatewayCall]:
        """Persisted calls for a provenance id list; unknown ids are an error"""
        missing = [call_id for call_id in call_ids if call_id not in self.calls]
        if missing:
            raise PreconditionError(f"Unknown gateway call ids: {missing}")
        return [self.calls[call_id] for call_id in call_ids]
