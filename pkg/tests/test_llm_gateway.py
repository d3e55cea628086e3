import hashlib
import json
import sys
import types
from types import SimpleNamespace

import pytest

from sqlsynth.core.exceptions import (
    AuthError,
    ExtractionError,
    GatewayError,
    MissingPlaceholder,
    PreconditionError,
    TransientError,
    UnknownPlaceholder,
)
from sqlsynth.schemas.gateway import TEMPLATE_NAMES, GeneratedSql, IntentAnswer, PromptRequest
from sqlsynth.services.llm_service import (
    LLMService,
    RateLimiter,
    RemoteProvider,
    create_provider,
    extract_structured,
    load_template,
    render_prompt,
)
from sqlsynth.services.mock_provider import MockProvider
from sqlsynth.utils.record_io import read_jsonl


PLACEHOLDERS = {
    "database_enhancement": {"sample_rows", "schema"},
    "database_generation": {"sample_rows", "source_table"},
    "intent_classification": {"features", "intents", "question"},
    "knowledge_generation": {"calculation", "question", "schema", "sql", "values"},
    "quality_judge": {"criteria", "question", "result", "schema", "sql"},
    "question_generation": {"combination", "reference_question", "schema", "sql"},
    "seed_modification": {"blueprints", "combination", "feedback", "schema"},
    "seed_repair": {"combination", "error", "question", "schema", "sql"},
    "semantic_validation": {"question", "schema", "sql"},
    "sql_generation": {"combination", "question", "reference_sql", "schema"},
}

INTENT_BINDINGS = {"question": "How many orders?", "features": '{"statement_type": "Select"}', "intents": "a, b"}


def _stub_openai(create):
    """Minimal stand-in for the openai 0.x module layout"""
    module = types.ModuleType("openai")

    class OpenAIError(Exception):
        pass

    class AuthenticationError(OpenAIError):
        pass

    class PermissionError(OpenAIError):
        pass

    class InvalidRequestError(OpenAIError):
        pass

    class RateLimitError(OpenAIError):
        pass

    module.error = SimpleNamespace(OpenAIError=OpenAIError, AuthenticationError=AuthenticationError,
                                   PermissionError=PermissionError, InvalidRequestError=InvalidRequestError,
                                   RateLimitError=RateLimitError)
    module.ChatCompletion = SimpleNamespace(create=create)
    return module


def _chat_response(content):
    return SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content=content))])


class TestTemplates:
    @pytest.mark.parametrize("name", TEMPLATE_NAMES)
    def test_placeholders(self, name):
        """Test each bundled template declares exactly its placeholders"""
        assert set(load_template(name).placeholders) == PLACEHOLDERS[name]

    def test_unknown_template(self):
        """Test names outside the template list are refused"""
        with pytest.raises(PreconditionError):
            load_template("poetry")

    def test_missing_file(self, tmp_path):
        """Test a prompts directory without the file is a precondition failure"""
        with pytest.raises(PreconditionError):
            load_template("seed_repair", tmp_path)

    def test_body_is_verbatim(self, tmp_path):
        """Test a custom prompts directory is read as written"""
        (tmp_path / "semantic_validation.txt").write_text("Q={question} S={sql} D={schema}", encoding="utf-8")
        template = load_template("semantic_validation", tmp_path)
        assert template.body == "Q={question} S={sql} D={schema}"


class TestRenderPrompt:
    def test_values_are_substituted(self):
        """Test strings go in as-is and other values as JSON"""
        prompt = render_prompt(load_template("intent_classification"), {**INTENT_BINDINGS, "intents": ["a", "b"]})

        assert "How many orders?" in prompt
        assert '["a", "b"]' in prompt
        assert '{"intent": "..."}' in prompt

    def test_missing_placeholder(self):
        """Test every declared placeholder must be bound"""
        with pytest.raises(MissingPlaceholder) as error:
            render_prompt(load_template("intent_classification"), {"question": "q", "intents": "a"})
        assert error.value.placeholder == "features"

    def test_unknown_placeholder(self):
        """Test bindings the template does not declare are refused"""
        with pytest.raises(UnknownPlaceholder) as error:
            render_prompt(load_template("intent_classification"), {**INTENT_BINDINGS, "tone": "formal"})
        assert error.value.placeholder == "tone"


class TestExtractStructured:
    def test_plain_json(self):
        """Test a bare JSON object parses into the shape"""
        assert extract_structured('{"sql": "SELECT 1"}', GeneratedSql).sql == "SELECT 1"

    def test_code_fence(self):
        """Test a fenced block is unwrapped"""
        text = 'Here you go:\n```json\n{"sql": "SELECT 2"}\n```\nDone.'
        assert extract_structured(text, GeneratedSql).sql == "SELECT 2"

    def test_surrounding_prose(self):
        """Test the first well-formed block inside prose is used"""
        text = 'I picked {this} first, then {"intent": "Basic query"} as the answer.'
        assert extract_structured(text, IntentAnswer).intent == "Basic query"

    def test_plain_type_shape(self):
        """Test builtin container shapes are checked by type"""
        assert extract_structured("[1, 2]", list) == [1, 2]
        with pytest.raises(ExtractionError):
            extract_structured('{"a": 1}', list)

    def test_shape_mismatch(self):
        """Test a block that does not fit the model is an extraction error"""
        with pytest.raises(ExtractionError) as error:
            extract_structured('{"query": "SELECT 1"}', GeneratedSql)
        assert "GeneratedSql" in error.value.message

    def test_no_block(self):
        """Test text without any JSON block fails"""
        with pytest.raises(ExtractionError):
            extract_structured("no structure here", GeneratedSql)


class TestGatewayRetries:
    async def test_transient_failures_are_retried(self, scripted_gateway):
        """Test transient errors back off and the call succeeds on a later attempt"""
        gateway = scripted_gateway([TransientError("503"), ConnectionError("reset"), {"intent": "Basic query"}])

        answer, call_id = await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)

        call = gateway.resolve([call_id])[0]
        assert answer.intent == "Basic query"
        assert call.attempts == 3
        assert len(call.errors) == 2

    async def test_attempts_exhausted(self, scripted_gateway):
        """Test the gateway gives up after its attempt budget with every failure listed"""
        gateway = scripted_gateway([TransientError("busy")] * 3, max_attempts=3)

        with pytest.raises(GatewayError) as error:
            await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)

        assert len(error.value.attempts) == 3
        assert not isinstance(error.value, AuthError)

    async def test_auth_error_is_not_retried(self, scripted_gateway):
        """Test a rejected credential aborts on the first attempt"""
        gateway = scripted_gateway([AuthError("bad key"), {"intent": "Basic query"}])

        with pytest.raises(AuthError):
            await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)

        assert len(gateway.provider.requests) == 1

    async def test_provider_receives_bindings(self, scripted_gateway):
        """Test the request carries the rendered prompt and the raw bindings"""
        gateway = scripted_gateway([{"intent": "Basic query"}])

        await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)

        request = gateway.provider.requests[0]
        assert request.template == "intent_classification"
        assert request.bindings == INTENT_BINDINGS
        assert "How many orders?" in request.prompt


class TestCallLog:
    async def test_ids_are_deterministic(self, tmp_path):
        """Test two fresh gateways assign the same ids to the same call sequence"""
        ids = []
        for run in ("a", "b"):
            gateway = LLMService(MockProvider(), call_log=tmp_path / f"{run}.jsonl", backoff_secs=0)
            first = await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)
            second = await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)
            ids.append((first[1], second[1]))

        assert ids[0] == ids[1]
        assert ids[0][0] != ids[0][1]

    async def test_log_file(self, gateway):
        """Test every call is appended to the log with its response"""
        await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)

        entries = read_jsonl(gateway.call_log)

        assert len(entries) == 1
        assert entries[0]["template"] == "intent_classification"
        assert entries[0]["provider"] == "mock"
        assert json.loads(entries[0]["response"])["intent"] == "Basic aggregation"

    async def test_failed_calls_are_logged(self, scripted_gateway):
        """Test a call that gives up is still recorded"""
        gateway = scripted_gateway([TransientError("busy")], max_attempts=1)
        with pytest.raises(GatewayError):
            await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)
        assert len(gateway.calls) == 1

    async def test_resolve_unknown_id(self, gateway):
        """Test resolving an id the gateway never issued fails"""
        with pytest.raises(PreconditionError):
            gateway.resolve(["not-a-call"])


class TestMockProvider:
    async def test_fixture_overrides_synthesizer(self, tmp_path):
        """Test a fixture addressed by prompt hash is returned verbatim"""
        gateway = LLMService(MockProvider(fixtures_dir=tmp_path), backoff_secs=0)
        prompt = gateway.render("intent_classification", INTENT_BINDINGS)
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]
        (tmp_path / "intent_classification").mkdir()
        (tmp_path / "intent_classification" / f"{digest}.json").write_text('{"intent": "Business rule"}',
                                                                           encoding="utf-8")

        answer, _ = await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)

        assert answer.intent == "Business rule"

    async def test_same_request_same_text(self):
        """Test the synthesizer is a pure function of the request"""
        provider = MockProvider()
        request = PromptRequest(template="semantic_validation", prompt="p",
                                bindings={"question": "q [[MISMATCH]]", "sql": "SELECT 1", "schema": "{}"})

        first = await provider.complete(request)

        assert first == await provider.complete(request)
        assert json.loads(first)["consistent"] is False

    def test_unknown_provider(self):
        """Test only the mock and remote providers exist"""
        with pytest.raises(PreconditionError):
            create_provider("carrier-pigeon")


class TestRemoteProvider:
    def test_requires_endpoint_and_key(self):
        """Test a remote provider cannot be built without credentials"""
        with pytest.raises(PreconditionError):
            RemoteProvider(endpoint="https://llm.example.test/v1", key="")

    async def test_completion_text(self, monkeypatch):
        """Test the first choice is returned stripped"""
        seen = {}

        def create(**kwargs):
            seen.update(kwargs)
            return _chat_response('  {"sql": "SELECT 1"}\n')

        monkeypatch.setitem(sys.modules, "openai", _stub_openai(create))
        provider = RemoteProvider(endpoint="https://llm.example.test/v1", model="m", key="k")

        text = await provider.complete(PromptRequest(template="sql_generation", prompt="hello"))

        assert text == '{"sql": "SELECT 1"}'
        assert seen["api_base"] == "https://llm.example.test/v1"
        assert seen["messages"][-1] == {"role": "user", "content": "hello"}

    @pytest.mark.parametrize("error_name,expected", [
        ("AuthenticationError", AuthError),
        ("PermissionError", AuthError),
        ("InvalidRequestError", GatewayError),
        ("RateLimitError", TransientError),
    ])
    async def test_error_mapping(self, monkeypatch, error_name, expected):
        """Test client errors map onto the gateway error kinds"""
        holder = {}

        def create(**kwargs):
            raise getattr(holder["module"].error, error_name)("failure")

        holder["module"] = _stub_openai(create)
        monkeypatch.setitem(sys.modules, "openai", holder["module"])
        provider = RemoteProvider(endpoint="https://llm.example.test/v1", model="m", key="k")

        with pytest.raises(expected):
            await provider.complete(PromptRequest(template="sql_generation", prompt="hello"))

    async def test_invalid_request_is_not_retried(self, monkeypatch, tmp_path):
        """Test a rejected request surfaces through the gateway on the first attempt"""
        calls = []
        holder = {}

        def create(**kwargs):
            calls.append(kwargs)
            raise holder["module"].error.InvalidRequestError("too long")

        holder["module"] = _stub_openai(create)
        monkeypatch.setitem(sys.modules, "openai", holder["module"])
        provider = RemoteProvider(endpoint="https://llm.example.test/v1", model="m", key="k")
        gateway = LLMService(provider, backoff_secs=0, rate_limiter=RateLimiter(2, 600))

        with pytest.raises(GatewayError):
            await gateway.generate("intent_classification", INTENT_BINDINGS, IntentAnswer)

        assert len(calls) == 1


class TestRateLimiter:
    async def test_tokens_are_spent(self):
        """Test each admission spends one token from a full bucket"""
        limiter = RateLimiter(concurrency=2, per_minute=10)

        await limiter.acquire()
        await limiter.acquire()
        limiter.release()
        limiter.release()

        assert limiter.tokens == pytest.approx(8, abs=0.01)
