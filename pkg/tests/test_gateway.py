import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import httpx
import numpy as np
import pytest

from tailbon.gateway import (GatewayConfig, GatewayError, GatewaySampler, MalformedResponseError,
                             TransportError, truncate_tokens)
from tailbon.search import SLGConfig, run_bon, run_slg


def chat(text, tokens=None):
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if tokens is not None:
        body["usage"] = {"completion_tokens": tokens}
    return body


class Backend:
    """Scriptable mock for both services; records every request it sees."""

    def __init__(self, gen=None, score=None):
        self.gen = gen or (lambda req, n: httpx.Response(200, json=chat(f"step {n}")))
        self.score = score or (lambda req, n: httpx.Response(200, json={"reward": 0.75}))
        self.requests = []
        self._lock = threading.Lock()

    def __call__(self, request: httpx.Request) -> httpx.Response:
        with self._lock:
            self.requests.append(request)
            n = len(self.requests)
        if request.url.path.endswith("/chat/completions"):
            return self.gen(request, n)
        if request.url.path.endswith("/score"):
            return self.score(request, n)
        return httpx.Response(404)

    def paths(self):
        return [r.url.path for r in self.requests]


def make(backend, tmp_path=None, **overrides):
    cfg = {"gen_base_url": "http://gen.test/v1", "reward_base_url": "http://rm.test",
           "max_retries": 2, "backoff_base": 0.01, **overrides}
    if tmp_path is not None:
        cfg["transcript_path"] = str(tmp_path / "transcript.jsonl")
    sleeps = []
    sampler = GatewaySampler(GatewayConfig(**cfg), prompt="Solve x + 1 = 2.",
                             client=httpx.Client(transport=httpx.MockTransport(backend)), sleep=sleeps.append)
    return sampler, sleeps


def test_config_validation():
    with pytest.raises(ValueError):
        GatewayConfig("not a url", "http://rm.test")
    with pytest.raises(ValueError):
        GatewayConfig("http://gen.test", "http://rm.test", max_state_tokens=0)
    with pytest.raises(ValueError):
        GatewayConfig.from_dict({"gen_base_url": "http://a", "reward_base_url": "http://b", "bogus": 1})


def test_state_text_truncated_to_token_cap():
    long_text = " ".join(f"w{i}" for i in range(300))
    backend = Backend(gen=lambda req, n: httpx.Response(200, json=chat(long_text)))
    sampler, _ = make(backend)
    state = sampler.spawn_state()
    assert state.text == truncate_tokens(long_text, 100)
    assert len(state.text.split()) == 100
    sent = json.loads(backend.requests[0].content)
    assert sent["max_tokens"] == 100
    assert sent["messages"] == [{"role": "user", "content": "Solve x + 1 = 2."}]
    assert "temperature" in sent


def test_state_text_kept_when_backend_reports_tokens_within_cap():
    backend = Backend(gen=lambda req, n: httpx.Response(200, json=chat("a  b\nc", tokens=3)))
    sampler, _ = make(backend)
    assert sampler.spawn_state().text == "a  b\nc"


def test_timeout_is_retried_then_surfaced_with_attempt_count(tmp_path):
    def gen(req, n):
        raise httpx.ReadTimeout("timed out", request=req)

    backend = Backend(gen=gen)
    sampler, sleeps = make(backend, tmp_path)
    with pytest.raises(TransportError) as info:
        sampler.spawn_state()
    assert info.value.attempts == 3
    assert len(backend.requests) == 3
    assert sleeps == [0.01, 0.02]
    (record,) = sampler.transcript.records
    assert record.attempts == 3 and "TransportError" in record.error


def test_server_errors_retried_until_success():
    def gen(req, n):
        return httpx.Response(503) if n == 1 else httpx.Response(200, json=chat("ok"))

    sampler, sleeps = make(Backend(gen=gen))
    assert sampler.spawn_state().text == "ok"
    assert sleeps == [0.01]
    assert sampler.transcript.records[0].attempts == 2


def test_client_errors_are_not_retried():
    backend = Backend(gen=lambda req, n: httpx.Response(401))
    sampler, sleeps = make(backend)
    with pytest.raises(GatewayError):
        sampler.spawn_state()
    assert len(backend.requests) == 1 and sleeps == []


def test_empty_prompt_rejected_before_any_request():
    backend = Backend()
    sampler, _ = make(backend)
    with pytest.raises(ValueError):
        sampler.spawn_state("")
    sampler.prompt = None
    with pytest.raises(ValueError):
        sampler.spawn_state()
    assert backend.requests == []


def test_draw_reward_returns_scorer_value_and_persists_both_calls(tmp_path):
    backend = Backend()
    sampler, _ = make(backend, tmp_path)
    state = sampler.spawn_state()
    assert sampler.draw_reward(state) == 0.75
    assert backend.paths() == ["/v1/chat/completions", "/v1/chat/completions", "/score"]
    scored = json.loads(backend.requests[2].content)
    assert scored["prompt"] == "Solve x + 1 = 2."
    assert scored["response"].startswith(state.text)
    lines = [json.loads(l) for l in (tmp_path / "transcript.jsonl").read_text().splitlines()]
    assert [l["kind"] for l in lines] == ["state", "response", "score"]
    assert lines[2]["reward"] == 0.75 and lines[2]["state"] == state.text


@pytest.mark.parametrize("body", [{"reward": "high"}, {"score": 1.0}, {"reward": None},
                                  {"reward": True}, {"reward": float("inf")}, [1, 2]])
def test_non_numeric_reward_is_malformed(body):
    content = json.dumps(body).encode() if body != {"reward": float("inf")} else b'{"reward": Infinity}'
    backend = Backend(score=lambda req, n: httpx.Response(200, content=content))
    sampler, _ = make(backend)
    with pytest.raises(MalformedResponseError):
        sampler.draw_reward(sampler.spawn_state())
    assert sampler.transcript.records[-1].error.startswith("MalformedResponseError")


@pytest.mark.parametrize("body", [b"not json", b'{"choices": []}', b'{"choices": [{"message": {"content": 5}}]}'])
def test_malformed_generation(body):
    sampler, _ = make(Backend(gen=lambda req, n: httpx.Response(200, content=body)))
    with pytest.raises(MalformedResponseError):
        sampler.spawn_state()


def test_two_draws_are_independent_records():
    rewards = iter([0.1, 0.9])
    backend = Backend(score=lambda req, n: httpx.Response(200, json={"reward": next(rewards)}))
    sampler, _ = make(backend)
    state = sampler.spawn_state()
    a, b = sampler.draw_reward(state), sampler.draw_reward(state)
    assert (a, b) == (0.1, 0.9)
    responses = [r for r in sampler.transcript.records if r.kind == "response"]
    assert len(responses) == 2 and responses[0].response != responses[1].response
    assert len({r.request_id for r in sampler.transcript.records}) == len(sampler.transcript.records)


def test_budget_honesty_with_search():
    counter = iter(range(10**6))
    backend = Backend(score=lambda req, n: httpx.Response(200, json={"reward": float(next(counter) % 17)}))
    sampler, _ = make(backend, max_concurrency=3)
    out = run_slg(sampler, 200, SLGConfig(m=40, K=3, greedy_pilot=False))
    assert sampler.scoring_calls == out.budget_used == out.responses_generated == 200
    bon_sampler, _ = make(Backend())
    out = run_bon(bon_sampler, 12, prompt="p")
    assert bon_sampler.scoring_calls == out.budget_used == 12


def test_transcript_covers_every_request_including_failures(tmp_path):
    calls = iter(range(100))

    def score(req, n):
        return httpx.Response(500) if next(calls) % 3 == 1 else httpx.Response(200, json={"reward": 1.0})

    backend = Backend(score=score)
    sampler, _ = make(backend, tmp_path, max_retries=0)
    state = sampler.spawn_state()
    outcomes = []
    for _ in range(6):
        try:
            outcomes.append(sampler.draw_reward(state))
        except TransportError:
            outcomes.append(None)
    assert None in outcomes
    records = sampler.transcript.records
    assert sum(r.attempts for r in records) == len(backend.requests)
    assert sum(1 for r in records if r.error) == outcomes.count(None)
    assert len((tmp_path / "transcript.jsonl").read_text().splitlines()) == len(records)


def test_concurrent_draws_keep_call_order_and_count():
    backend = Backend(score=lambda req, n: httpx.Response(
        200, json={"reward": float(len(json.loads(req.content)["response"]))}))
    sampler, _ = make(backend, max_concurrency=4)
    state = sampler.spawn_state()
    rewards = sampler.draw_rewards(state, 20)
    assert rewards.shape == (20,)
    assert sampler.generation_calls == 21 and sampler.scoring_calls == 20


def test_bearer_token_from_configured_env_var(monkeypatch):
    monkeypatch.setenv("MY_RM_TOKEN", "s3cret")
    backend = Backend()
    sampler, _ = make(backend, auth_token_env="MY_RM_TOKEN")
    sampler.spawn_state()
    assert backend.requests[0].headers["authorization"] == "Bearer s3cret"
    assert backend.requests[0].headers["x-request-id"].startswith("req-")


def test_token_env_name_read_from_environment(monkeypatch):
    monkeypatch.setenv("TAILBON_AUTH_TOKEN_VAR", "OTHER_VAR")
    assert GatewayConfig("http://a", "http://b").auth_token_env == "OTHER_VAR"


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.path.endswith("/chat/completions"):
            out = chat("think " * 5 + "answer")
        else:
            out = {"reward": len(body["response"]) / 100.0}
        data = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def test_against_real_http_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}"
        sampler = GatewaySampler(GatewayConfig(url + "/v1", url, max_state_tokens=3, timeout=5), prompt="q")
        state = sampler.spawn_state()
        assert state.text == "think think think"
        rewards = sampler.draw_rewards(state, 4)
        assert np.all(rewards == rewards[0]) and rewards[0] > 0
        sampler.close()
    finally:
        server.shutdown()
