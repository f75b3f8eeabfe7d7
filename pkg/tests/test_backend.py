import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from gpt4vad.backend import (
    CacheLoadError,
    CacheMiss,
    ConfigurationError,
    ConstantBackend,
    LiveBackend,
    OracleBackend,
    QueryRequest,
    QueryResponse,
    RateLimiter,
    RecordingBackend,
    ReplayBackend,
    ResponseCache,
    TransportError,
    oracle_query,
    request_digest,
)
from gpt4vad.core import ImageBuffer, InvalidInputError, RegionMap
from gpt4vad.protocol import build_prompt, parse_region_scores
from gpt4vad.regionize import grid_divide


def _request(model="m", prompt="p", **kw):
    img = ImageBuffer(np.arange(48, dtype=np.uint8).reshape(4, 4, 3))
    return QueryRequest.build(img, prompt, model, **kw)


def test_digest_stable_and_sensitive():
    a, b = _request(), _request()
    assert a.digest == b.digest
    assert _request(model="other").digest != a.digest
    assert _request(prompt="q").digest != a.digest
    assert request_digest("ab", "c", b"") != request_digest("a", "bc", b"")


def test_cache_round_trip(tmp_path):
    cache = ResponseCache(tmp_path / "c.jsonl")
    assert cache.put("d1", QueryResponse("region 1: 0.5", "m"), "sha")
    got = cache.get("d1")
    assert got.raw_text == "region 1: 0.5" and got.from_cache
    assert cache.get("nope") is None


def test_cache_first_put_wins_and_persists(tmp_path):
    path = tmp_path / "c.jsonl"
    cache = ResponseCache(path)
    cache.put("d", QueryResponse("first", "m"))
    assert not cache.put("d", QueryResponse("second", "m"))
    assert len(path.read_text().splitlines()) == 1
    assert ResponseCache(path).get("d").raw_text == "first"


def test_cache_records_schema(tmp_path):
    path = tmp_path / "c.jsonl"
    ResponseCache(path).put("d", QueryResponse("t", "m"), "psha")
    rec = json.loads(path.read_text())
    assert set(rec) == {"digest", "model_id", "prompt_sha", "raw_text", "timestamp"}


def test_cache_duplicate_lines_first_wins_on_load(tmp_path):
    path = tmp_path / "c.jsonl"
    lines = [json.dumps({"digest": "d", "model_id": "m", "raw_text": t}) for t in ("a", "b")]
    path.write_text("\n".join(lines) + "\n")
    assert ResponseCache(path).get("d").raw_text == "a"


def test_cache_corrupt_record_reports_offset(tmp_path):
    path = tmp_path / "c.jsonl"
    good = json.dumps({"digest": "d", "model_id": "m", "raw_text": "x"}) + "\n"
    path.write_text(good + "{not json\n")
    with pytest.raises(CacheLoadError) as err:
        ResponseCache(path)
    assert err.value.offset == len(good.encode())


def test_cache_preserves_raw_text_exactly(tmp_path):
    text = "Région 1 : 0.9 … ok\r\n\ttrailing  "
    path = tmp_path / "c.jsonl"
    ResponseCache(path).put("d", QueryResponse(text, "m"))
    assert ResponseCache(path).get("d").raw_text == text


def test_cache_concurrent_puts(tmp_path):
    cache = ResponseCache(tmp_path / "c.jsonl")
    threads = [threading.Thread(target=cache.put, args=(f"d{i % 10}", QueryResponse(str(i), "m"))) for i in range(50)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len((tmp_path / "c.jsonl").read_text().splitlines()) == 10
    assert len(ResponseCache(tmp_path / "c.jsonl")) == 10


def test_replay_hit_and_miss(tmp_path):
    req = _request()
    cache = ResponseCache(tmp_path / "c.jsonl")
    cache.put(req.digest, QueryResponse("region 1: 0.3", "m"))
    replay = ReplayBackend(cache, "m")
    resp = replay.query(req)
    assert resp.raw_text == "region 1: 0.3" and resp.from_cache
    other = _request(prompt="different")
    with pytest.raises(CacheMiss) as err:
        replay.query(other)
    assert other.digest in str(err.value)


def test_recording_then_replay(tmp_path):
    rm = grid_divide(4, 4, 2, 2)
    req = _request(region_map=rm)
    cache = ResponseCache(tmp_path / "c.jsonl")
    live = RecordingBackend(ConstantBackend(0.25, "m"), cache)
    first = live.query(req)
    again = ReplayBackend(ResponseCache(tmp_path / "c.jsonl"), "m").query(req)
    assert again.raw_text == first.raw_text


def test_constant_backend_mentions_every_region():
    rm = grid_divide(4, 4, 2, 2)
    resp = ConstantBackend(0.4).query(_request(region_map=rm))
    assert resp.raw_text == "region 1: 0.4; region 2: 0.4; region 3: 0.4; region 4: 0.4"


def test_oracle_exact_region():
    lab = np.zeros((10, 10), int)
    lab[2:5, 2:5] = 1
    lab[6:9, 6:9] = 2
    rm = RegionMap.from_labels(lab)
    assert oracle_query(rm, lab == 1).raw_text == "region 1: 1.000"


def test_oracle_empty_gt_parses_to_nothing():
    rm = grid_divide(8, 8, 2, 2)
    resp = oracle_query(rm, np.zeros((8, 8), bool))
    assert parse_region_scores(resp.raw_text, rm)[0].entries == {}


def test_oracle_half_covered():
    rm = grid_divide(8, 8, 1, 2)
    gt = np.zeros((8, 8), bool)
    gt[:4, :4] = True
    rs, _ = parse_region_scores(oracle_query(rm, gt).raw_text, rm)
    assert rs.entries == {1: 0.5}


def test_oracle_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        oracle_query(grid_divide(8, 8, 2, 2), np.zeros((8, 9), bool))


def test_oracle_soundness_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        rm = grid_divide(40, 40, 5, 5)
        gt = rng.random((40, 40)) < 0.2
        rs, _ = parse_region_scores(OracleBackend().query(_request(region_map=rm, gt_mask=gt)).raw_text, rm)
        lab = np.asarray(rm.labels)
        for r in rm.regions:
            ratio = gt[lab == r.id].mean()
            if ratio > 0:
                assert rs[r.id] == round(ratio, 3)
            else:
                assert r.id not in rs


def test_rate_limiter_spacing():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    lim = RateLimiter(60, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        lim.acquire()
    assert slept == [1.0, 1.0]


# -- live client against a local fake server ----------------------------------


class _Fake:
    def __init__(self, statuses, text="region 2: 0.8"):
        self.statuses = list(statuses)
        self.text = text
        self.bodies = []
        self.headers = []


@pytest.fixture
def fake_server():
    state = {}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):  # noqa: N802
            fake = state["fake"]
            body = self.rfile.read(int(self.headers["Content-Length"]))
            fake.bodies.append(json.loads(body))
            fake.headers.append(dict(self.headers))
            status = fake.statuses.pop(0) if fake.statuses else 200
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            if status == 200:
                payload = {"choices": [{"message": {"role": "assistant", "content": fake.text}}]}
            else:
                payload = {"error": {"message": "busy"}}
            self.wfile.write(json.dumps(payload).encode())

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()

    def start(fake):
        state["fake"] = fake
        return f"http://127.0.0.1:{server.server_port}"

    yield start
    server.shutdown()


def _live(url, **kw):
    waits = []
    backend = LiveBackend("gpt-test", base_url=url, api_key="sk-test", requests_per_minute=None,
                          sleep=waits.append, **kw)
    return backend, waits


def test_live_success_payload(fake_server):
    fake = _Fake([200])
    backend, _ = _live(fake_server(fake))
    req = _request(model="gpt-test", prompt=build_prompt("hazelnut"))
    resp = backend.query(req)
    assert resp.raw_text == "region 2: 0.8" and not resp.from_cache
    body = fake.bodies[0]
    assert body["model"] == "gpt-test" and body["temperature"] == 0
    content = body["messages"][0]["content"]
    assert content[0] == {"type": "text", "text": req.prompt_text}
    url = content[1]["image_url"]["url"]
    assert url.startswith("data:image/png;base64,")
    sent = base64.b64decode(url.split(",", 1)[1])
    # the payload is exactly what the digest covered
    assert request_digest(body["model"], content[0]["text"], sent) == req.digest
    assert fake.headers[0]["Authorization"] == "Bearer sk-test"


def test_live_retries_with_exponential_backoff(fake_server):
    fake = _Fake([429, 503, 500])
    backend, waits = _live(fake_server(fake))
    assert backend.query(_request(model="gpt-test")).raw_text == "region 2: 0.8"
    assert waits == [1.0, 2.0, 4.0]


def test_live_gives_up_after_five_attempts(fake_server):
    fake = _Fake([503] * 10)
    backend, waits = _live(fake_server(fake))
    with pytest.raises(TransportError) as err:
        backend.query(_request(model="gpt-test"))
    assert err.value.status == 503
    assert len(fake.bodies) == 5
    assert waits == [1.0, 2.0, 4.0, 8.0]


def test_live_client_error_not_retried(fake_server):
    fake = _Fake([400])
    backend, _ = _live(fake_server(fake))
    with pytest.raises(TransportError) as err:
        backend.query(_request(model="gpt-test"))
    assert err.value.status == 400 and len(fake.bodies) == 1


def test_live_missing_credentials(monkeypatch):
    monkeypatch.delenv("GPT4VAD_API_KEY", raising=False)
    with pytest.raises(ConfigurationError):
        LiveBackend("gpt-test")


def test_live_reads_key_from_env(monkeypatch):
    monkeypatch.setenv("GPT4VAD_API_KEY", "sk-env")
    assert LiveBackend("gpt-test").api_key == "sk-env"
