"""Chat-completion client and offline mock server.

Every step sends exactly one system message (the static rules) and one user message
(the state sections) to ``{base_url}/chat/completions`` with a bearer token, and
reads the reply from the first choice. Transient failures (transport errors,
timeouts, HTTP 429 and 5xx) are retried with exponential backoff; authentication
failures never are.
"""

from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from datetime import datetime, timezone
from logging import getLogger
from time import perf_counter
import json
import os
import re
import threading

import httpx
from tenacity import (
    RetryError,
    Retrying,
    retry_if_exception_type,
    stop_after_attempt,
    stop_after_delay,
    wait_exponential,
)

from .models import Decoding, ModelEndpoint, Usage

__all__ = [
    "ClientError",
    "AuthError",
    "TransportExhausted",
    "MalformedResponse",
    "ChatClient",
    "MockServer",
    "mock_server",
    "load_mock_script",
]

logger = getLogger(__name__)

MOCK_BASE_URL = "http://mock.invalid/v1"


class ClientError(RuntimeError):
    pass


class AuthError(ClientError):
    pass


class TransportExhausted(ClientError):
    def __init__(self, attempts: int, last_error: BaseException | None) -> None:
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"Gave up after {attempts} attempts: {last_error}")


class MalformedResponse(ClientError):
    pass


class _Transient(Exception):
    pass


class _StepTimeout(Exception):
    pass


def _estimate_tokens(text: str) -> int:
    return max(1, len(text) // 4) if text else 0


class ChatClient:
    """Client of one chat-completion endpoint, safe for concurrent calls.

    Parameters
    ----------
    endpoint : ModelEndpoint
        Endpoint settings; the API key is read from ``endpoint.api_key_env``.
    transport : httpx.BaseTransport | None, optional
        Transport override, e.g. :class:`httpx.MockTransport`.
    mock : bool, optional
        Talk to a mock server; no API key is needed.
    step_timeout_s : float | None, optional
        Wall-clock cap of one :meth:`complete` call, retries included.

    Examples
    --------
    .. literalinclude:: /py_examples/ex_mock_client.py
    """

    def __init__(
        self,
        endpoint: ModelEndpoint,
        transport: httpx.BaseTransport | None = None,
        mock: bool = False,
        step_timeout_s: float | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.mock = mock
        self.step_timeout_s = step_timeout_s
        self._http = httpx.Client(
            base_url=endpoint.base_url, transport=transport, timeout=endpoint.timeout_s
        )
        self._slots = threading.BoundedSemaphore(endpoint.concurrency)
        self._pool = ThreadPoolExecutor(max_workers=endpoint.concurrency, thread_name_prefix="chat")
        self._transcript_lock = threading.Lock()

    def _api_key(self) -> str:
        if self.mock:
            return "mock"
        key = os.getenv(self.endpoint.api_key_env)
        if not key:
            raise AuthError(f"Environment variable {self.endpoint.api_key_env} is not set.")
        return key

    def _post(self, payload: dict, key: str, timeout: float) -> httpx.Response:
        try:
            response = self._http.post(
                "/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {key}"},
                timeout=timeout,
            )
        except httpx.TransportError as e:
            raise _Transient(f"{type(e).__name__}: {e}") from e
        if response.status_code in (401, 403):
            raise AuthError(f"Endpoint {self.endpoint.base_url} refused the key ({response.status_code})")
        if response.status_code == 429 or response.status_code >= 500:
            raise _Transient(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            raise ClientError(f"HTTP {response.status_code} from {self.endpoint.base_url}: {response.text}")
        return response

    def _post_before(self, payload: dict, key: str, deadline: float | None) -> httpx.Response:
        """One attempt; a reply arriving after ``deadline`` is discarded."""
        if deadline is None:
            return self._post(payload, key, self.endpoint.timeout_s)
        remaining = deadline - perf_counter()
        if remaining <= 0:
            raise _StepTimeout(f"step timeout of {self.step_timeout_s} s reached")
        future = self._pool.submit(self._post, payload, key, min(self.endpoint.timeout_s, remaining))
        try:
            return future.result(timeout=remaining)
        except FutureTimeout:
            future.cancel()
            raise _StepTimeout(f"no reply within the step timeout of {self.step_timeout_s} s") from None

    def complete(
        self, system_text: str, user_text: str, decoding: Decoding = Decoding()
    ) -> tuple[str, Usage]:
        """Send one exchange and return the reply text with its usage.

        Raises
        ------
        AuthError
            Missing key (before any request) or HTTP 401/403.
        TransportExhausted
            If transient failures persist after ``max_retries`` retries, or no reply
            arrived within ``step_timeout_s``.
        MalformedResponse
            If the body has no ``choices[0].message.content`` string.
        """
        key = self._api_key()
        payload = {
            "model": self.endpoint.model_name,
            "messages": [
                {"role": "system", "content": system_text},
                {"role": "user", "content": user_text},
            ],
            "temperature": decoding.temperature,
        }
        if decoding.max_tokens is not None:
            payload["max_tokens"] = decoding.max_tokens

        stop = stop_after_attempt(self.endpoint.max_retries + 1)
        if self.step_timeout_s is not None:
            stop = stop | stop_after_delay(self.step_timeout_s)
        retrying = Retrying(
            stop=stop,
            wait=wait_exponential(multiplier=self.endpoint.backoff_base_s),
            retry=retry_if_exception_type(_Transient),
            before_sleep=lambda rs: logger.warning(
                f"Attempt {rs.attempt_number} to {self.endpoint.base_url} failed: {rs.outcome.exception()}"
            ),
        )

        start = perf_counter()
        deadline = None if self.step_timeout_s is None else start + self.step_timeout_s
        attempts = 0
        try:
            with self._slots:
                for attempt in retrying:
                    with attempt:
                        attempts += 1
                        response = self._post_before(payload, key, deadline)
        except RetryError as e:
            raise TransportExhausted(attempts, e.last_attempt.exception())
        except _StepTimeout as e:
            raise TransportExhausted(attempts, e)
        latency_ms = (perf_counter() - start) * 1000

        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(f"Unexpected response body: {response.text[:200]}") from e
        if not isinstance(text, str):
            raise MalformedResponse(f"Reply content is not text: {text!r}")

        reported = data.get("usage") or {}
        usage = Usage(
            prompt_tokens=reported.get("prompt_tokens", _estimate_tokens(system_text + user_text)),
            completion_tokens=reported.get("completion_tokens", _estimate_tokens(text)),
            latency_ms=latency_ms,
            retries=attempts - 1,
        )
        logger.info(
            f"{self.endpoint.model_name}: {usage.prompt_tokens}+{usage.completion_tokens} tokens, "
            f"{latency_ms:.0f} ms, {usage.retries} retries"
        )
        self._write_transcript(payload, text, usage)
        return text, usage

    def _write_transcript(self, payload: dict, reply: str, usage: Usage) -> None:
        if self.endpoint.transcript_path is None:
            return
        record = {
            "time": datetime.now(timezone.utc).isoformat(),
            "model": payload["model"],
            "messages": payload["messages"],
            "reply": reply,
            "usage": usage.model_dump(),
        }
        with self._transcript_lock:
            with open(self.endpoint.transcript_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")

    def close(self) -> None:
        self._pool.shutdown(wait=False, cancel_futures=True)
        self._http.close()


class MockServer:
    """Local chat-completion server answering from a script.

    Each request is answered by the first entry whose pattern matches the user
    message (:func:`re.search`, multi-line mode), else by ``default_reply``.

    Attributes
    ----------
    transport : httpx.MockTransport
        Transport serving the wire protocol in-process.
    endpoint : ModelEndpoint
        Endpoint pointing at the mock.
    requests : int
        Number of requests served.
    """

    def __init__(
        self,
        script: list[tuple[str, str]],
        default_reply: str = "Action:0",
        transcript_path: str | None = None,
    ) -> None:
        self.script = [(re.compile(pattern, re.MULTILINE), reply) for pattern, reply in script]
        self.default_reply = default_reply
        self.endpoint = ModelEndpoint(
            base_url=MOCK_BASE_URL,
            model_name="mock",
            transcript_path=transcript_path,
            backoff_base_s=0.0,
        )
        self.transport = httpx.MockTransport(self._handle)
        self.requests = 0
        self._lock = threading.Lock()

    def reply_to(self, user_text: str) -> str:
        for pattern, reply in self.script:
            if pattern.search(user_text):
                return reply
        return self.default_reply

    def _handle(self, request: httpx.Request) -> httpx.Response:
        with self._lock:
            self.requests += 1
        body = json.loads(request.content)
        messages = body["messages"]
        user_text = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")
        reply = self.reply_to(user_text)
        prompt = "".join(m["content"] for m in messages)
        return httpx.Response(
            200,
            json={
                "id": f"mock-{self.requests}",
                "model": body.get("model", "mock"),
                "choices": [
                    {
                        "index": 0,
                        "finish_reason": "stop",
                        "message": {"role": "assistant", "content": reply},
                    }
                ],
                "usage": {
                    "prompt_tokens": _estimate_tokens(prompt),
                    "completion_tokens": _estimate_tokens(reply),
                },
            },
        )

    def client(self, step_timeout_s: float | None = None) -> ChatClient:
        return ChatClient(self.endpoint, transport=self.transport, mock=True, step_timeout_s=step_timeout_s)


def mock_server(
    script: list[tuple[str, str]],
    default_reply: str = "Action:0",
    transcript_path: str | None = None,
) -> MockServer:
    """Start a mock server.

    Parameters
    ----------
    script : list[tuple[str, str]]
        ``(pattern, reply)`` pairs tried in order.
    default_reply : str, optional
        Reply of unmatched requests, by default ``"Action:0"``.
    transcript_path : str | None, optional
        JSONL file receiving every exchange.

    Raises
    ------
    ValueError
        If ``script`` is empty.
    """
    if not script:
        raise ValueError("Mock script is empty.")
    return MockServer(script, default_reply, transcript_path)


def load_mock_script(filename: str, transcript_path: str | None = None) -> MockServer:
    """Start a mock server from a JSON script file.

    The file holds either a list of ``{"pattern": ..., "reply": ...}`` objects or an
    object with keys ``script`` (that list) and ``default``.

    Examples
    --------
    .. literalinclude:: /py_examples/mock_script.json
        :caption: mock_script.json
        :language: json
    """
    try:
        with open(filename, "r", encoding="utf-8") as f:
            content = json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"Mock script not found: {filename}")
    if isinstance(content, list):
        content = {"script": content}
    script = [(e["pattern"], e["reply"]) for e in content.get("script", [])]
    return mock_server(script, content.get("default", "Action:0"), transcript_path)
