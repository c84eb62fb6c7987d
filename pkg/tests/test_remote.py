"""Remote client against a local stub server (no real network)."""
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from martingap.errors import ConfigError, ProtocolError, RetryableError
from martingap.predictors import (
    RemoteClientConfig, RemoteLogprobClient, RemotePredictor, parse_top_logprobs, remote_predict,
)
from martingap.seqcore import BitSequence


class Stub:
    """Scripted behaviour shared with the handler."""

    def __init__(self):
        self.script = []          # statuses to return before succeeding
        self.delay = 0.0
        self.body = None          # override raw response body
        self.in_flight = 0
        self.max_in_flight = 0
        self.calls = 0
        self.headers = []
        self.lock = threading.Lock()


def make_handler(stub):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            req = json.loads(self.rfile.read(length))
            with stub.lock:
                stub.calls += 1
                stub.in_flight += 1
                stub.max_in_flight = max(stub.max_in_flight, stub.in_flight)
                stub.headers.append(self.headers.get("Authorization"))
                status = stub.script.pop(0) if stub.script else 200
            try:
                time.sleep(stub.delay)
                if status != 200:
                    self.send_response(status)
                    self.end_headers()
                    return
                if stub.body is not None:
                    payload = stub.body
                else:
                    ones = req["prompt"].count("1")
                    p1 = (ones + 1) / (len(req["prompt"].split()) + 2)
                    top = {" 1": math.log(p1), " 0": math.log(1 - p1)}
                    payload = json.dumps({"choices": [{"logprobs": {"top_logprobs": [top]}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)
            finally:
                with stub.lock:
                    stub.in_flight -= 1

    return Handler


@pytest.fixture
def server():
    stub = Stub()
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), make_handler(stub))
    httpd.daemon_threads = True
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield stub, f"http://127.0.0.1:{httpd.server_address[1]}"
    httpd.shutdown()
    httpd.server_close()


@pytest.fixture
def credential(monkeypatch):
    monkeypatch.setenv("MARTINGAP_TEST_KEY", "sekrit")
    return "MARTINGAP_TEST_KEY"


def config(url, tmp_path, key_env, **kw):
    kw.setdefault("backoff_base", 0.01)
    return RemoteClientConfig(endpoint=url, model="stub-model", cache_dir=tmp_path / "cache",
                              api_key_env=key_env, **kw)


def test_cache_serves_repeated_prefix(server, tmp_path, credential):
    stub, url = server
    with RemoteLogprobClient(config(url, tmp_path, credential)) as client:
        first = client.logprobs([" 1", " 0", " 1"])
        second = client.logprobs([" 1", " 0", " 1"])
        assert first == second
        assert client.stats["requests"] == 1
        assert client.stats["cache_hits"] == 1
    assert stub.calls == 1
    assert stub.headers == ["Bearer sekrit"]
    # a fresh client replays from disk without the network
    with RemoteLogprobClient(config(url, tmp_path, credential)) as client:
        assert client.logprobs([" 1", " 0", " 1"]) == first
        assert client.stats["requests"] == 0
    assert stub.calls == 1


def test_cache_file_layout(server, tmp_path, credential):
    _, url = server
    with RemoteLogprobClient(config(url, tmp_path, credential)) as client:
        client.logprobs([" 1"])
    lines = (tmp_path / "cache" / "logprobs.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    assert set(rec) == {"key", "model", "prefix_digest", "request_digest", "response", "timestamp"}
    assert "sekrit" not in lines[0]


def test_logprobs_converted_to_bits(server, tmp_path, credential):
    _, url = server
    lp = remote_predict([" 1", " 1"], config(url, tmp_path, credential))
    assert lp[" 1"] == pytest.approx(math.log2(3 / 4))


def test_concurrency_is_bounded(server, tmp_path, credential):
    stub, url = server
    stub.delay = 0.02
    with RemoteLogprobClient(config(url, tmp_path, credential, max_concurrency=10)) as client:
        prefixes = [[" 1"] * (i + 1) for i in range(100)]
        with ThreadPoolExecutor(max_workers=40) as pool:
            results = list(pool.map(client.logprobs, prefixes))
    assert len(results) == 100
    assert stub.calls == 100
    assert 1 <= stub.max_in_flight <= 10


def test_rate_limit_then_success(server, tmp_path, credential):
    stub, url = server
    stub.script = [429]
    with RemoteLogprobClient(config(url, tmp_path, credential)) as client:
        lp = client.logprobs([" 0"])
        assert client.stats["retries"] == 1
        assert client.stats["requests"] == 2
    assert lp[" 1"] == pytest.approx(math.log2(1 / 3))


def test_retries_exhausted(server, tmp_path, credential):
    stub, url = server
    stub.script = [503] * 10
    with RemoteLogprobClient(config(url, tmp_path, credential, max_retries=2)) as client:
        with pytest.raises(RetryableError):
            client.logprobs([" 0"])
        assert client.stats["retries"] == 2
    assert stub.calls == 3


def test_malformed_response(server, tmp_path, credential):
    stub, url = server
    stub.body = b'{"choices": []}'
    with RemoteLogprobClient(config(url, tmp_path, credential)) as client:
        with pytest.raises(ProtocolError):
            client.logprobs([" 0"])
    stub.body = b"not json"
    with RemoteLogprobClient(config(url, tmp_path, credential)) as client:
        with pytest.raises(ProtocolError):
            client.logprobs([" 1"])


def test_missing_credential(server, tmp_path, monkeypatch):
    _, url = server
    monkeypatch.delenv("MARTINGAP_ABSENT_KEY", raising=False)
    with RemoteLogprobClient(config(url, tmp_path, "MARTINGAP_ABSENT_KEY")) as client:
        with pytest.raises(ConfigError):
            client.logprobs([" 0"])


def test_remote_predictor_maps_bits(server, tmp_path, credential):
    _, url = server
    with RemoteLogprobClient(config(url, tmp_path, credential)) as client:
        p = RemotePredictor(client).predict_one(BitSequence.of([1, 1, 0]))
    assert p == pytest.approx(3 / 5)


def test_parse_top_logprobs_validation():
    good = {"choices": [{"logprobs": {"top_logprobs": [{"a": math.log(0.5)}]}}]}
    assert parse_top_logprobs(good) == {"a": pytest.approx(-1.0)}
    with pytest.raises(ProtocolError):
        parse_top_logprobs({"choices": [{"logprobs": {"top_logprobs": [{"a": 0.3}]}}]})
    with pytest.raises(ProtocolError):
        parse_top_logprobs({})


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        RemoteClientConfig(endpoint="http://x", model="m", cache_dir=tmp_path, max_concurrency=0)
    with pytest.raises(ConfigError):
        RemoteClientConfig(endpoint="http://x", model="m", cache_dir=tmp_path, max_retries=-1)
