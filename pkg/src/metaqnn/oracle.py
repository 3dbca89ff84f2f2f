"""Reward oracles: a deterministic surrogate and a wire-protocol trainer client.

The wire protocol is newline-delimited JSON, one message per line, UTF-8:

    {"type": "hello", "protocol": 1}                      (both ways at start)
    {"type": "evaluate", "id": N, "arch": "...", "dataset": "...",
     "input_size": N, "input_channels": N, "num_classes": N,
     "budget": {"epochs": N}}
    {"type": "result", "id": N, "status": "ok"|"failed",
     "accuracy": float|null, "message": str|null}
    {"type": "shutdown"}
"""

from __future__ import annotations

import hashlib
import json
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass
from typing import Protocol

from .space import ArchitectureSpec, Conv, FC, Pool, serialize

PROTOCOL_VERSION = 1


class EvaluationError(Exception):
    """Evaluation could not produce an accuracy (after any retries)."""


class EvaluationFailed(EvaluationError):
    """The worker reported a definitive failure for this architecture."""


class ProtocolError(Exception):
    """The wire conversation violated the protocol."""


class OracleUnavailable(Exception):
    """The trainer endpoint could not be reached or greeted."""


class RewardOracle(Protocol):
    def evaluate(self, spec: ArchitectureSpec) -> float: ...


# ---------------------------------------------------------------------------
# Surrogate oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateWeights:
    """Scoring constants; depth helps with diminishing returns, extra FC hurts."""

    base: float = 0.3
    conv_bonus: float = 0.05
    conv_cap: int = 6
    pool_bonus: float = 0.04
    pool_cap: int = 3
    fc_penalty: float = 0.07
    noise: float = 0.02

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "conv_bonus": self.conv_bonus,
            "conv_cap": self.conv_cap,
            "pool_bonus": self.pool_bonus,
            "pool_cap": self.pool_cap,
            "fc_penalty": self.fc_penalty,
            "noise": self.noise,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SurrogateWeights":
        return cls(**data)


class SurrogateOracle:
    """Deterministic stand-in for CNN training, for desk-scale verification.

    The score is a pure function of (seed, canonical architecture string):
    layer-type counts set the deterministic part, and a small hash-derived
    jitter makes distinct architectures distinguishable.
    """

    def __init__(self, seed: int = 0, weights: SurrogateWeights | None = None):
        self.seed = seed
        self.weights = weights or SurrogateWeights()

    def evaluate(self, spec: ArchitectureSpec) -> float:
        w = self.weights
        n_conv = sum(isinstance(l, Conv) for l in spec.layers)
        n_pool = sum(isinstance(l, Pool) for l in spec.layers)
        n_fc = sum(isinstance(l, FC) for l in spec.layers)
        score = (w.base
                 + w.conv_bonus * min(n_conv, w.conv_cap)
                 + w.pool_bonus * min(n_pool, w.pool_cap)
                 - w.fc_penalty * max(0, n_fc - 1)
                 + self._noise(serialize(spec)))
        return min(1.0, max(0.0, score))

    def _noise(self, arch: str) -> float:
        digest = hashlib.sha256(f"{self.seed}|{arch}".encode("utf-8")).digest()
        unit = int.from_bytes(digest[:8], "big") / 2 ** 64
        return self.weights.noise * (2.0 * unit - 1.0)


# ---------------------------------------------------------------------------
# Wire messages
# ---------------------------------------------------------------------------

def encode_message(message: dict) -> str:
    return json.dumps(message, sort_keys=True, separators=(",", ":"))


def decode_message(line: str) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"undecodable message: {line!r}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise ProtocolError(f"message without a type: {line!r}")
    kind = message["type"]
    if kind == "hello":
        if message.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol {message.get('protocol')!r}")
    elif kind == "evaluate":
        for key in ("id", "arch", "dataset", "input_size", "input_channels",
                    "num_classes", "budget"):
            if key not in message:
                raise ProtocolError(f"evaluate message missing {key!r}")
    elif kind == "result":
        for key in ("id", "status", "accuracy", "message"):
            if key not in message:
                raise ProtocolError(f"result message missing {key!r}")
        if message["status"] not in ("ok", "failed"):
            raise ProtocolError(f"unknown result status {message['status']!r}")
    elif kind != "shutdown":
        raise ProtocolError(f"unknown message type {kind!r}")
    return message


def make_hello() -> dict:
    return {"type": "hello", "protocol": PROTOCOL_VERSION}


def make_shutdown() -> dict:
    return {"type": "shutdown"}


def make_evaluate_request(request_id: int, arch: str, dataset: str,
                          input_size: int, input_channels: int,
                          num_classes: int, epochs: int) -> dict:
    return {
        "type": "evaluate",
        "id": request_id,
        "arch": arch,
        "dataset": dataset,
        "input_size": input_size,
        "input_channels": input_channels,
        "num_classes": num_classes,
        "budget": {"epochs": epochs},
    }


def make_result(request_id: int, status: str, accuracy: float | None,
                message: str | None = None) -> dict:
    return {"type": "result", "id": request_id, "status": status,
            "accuracy": accuracy, "message": message}


# ---------------------------------------------------------------------------
# Remote trainer client
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainerEndpoint:
    """Where evaluations are delegated: a subprocess command or a TCP address."""

    cmd: tuple[str, ...] | None = None
    addr: tuple[str, int] | None = None
    timeout: float = 600.0
    max_retries: int = 2

    def __post_init__(self):
        if (self.cmd is None) == (self.addr is None):
            raise ValueError("exactly one of cmd and addr must be set")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_command(cls, command: str, **kwargs) -> "TrainerEndpoint":
        return cls(cmd=tuple(shlex.split(command)), **kwargs)

    @classmethod
    def from_address(cls, address: str, **kwargs) -> "TrainerEndpoint":
        host, _, port = address.rpartition(":")
        return cls(addr=(host, int(port)), **kwargs)


class _Pending:
    __slots__ = ("event", "response")

    def __init__(self):
        self.event = threading.Event()
        self.response: dict | Exception | None = None


class RemoteOracle:
    """Delegates evaluation over the wire protocol.

    Multiple evaluations may be in flight, keyed by request id; responses may
    arrive out of order. Timeouts retry with a fresh id up to max_retries.
    """

    def __init__(self, endpoint: TrainerEndpoint, dataset: str,
                 input_size: int, input_channels: int, num_classes: int,
                 epochs: int = 20):
        self.endpoint = endpoint
        self.dataset = dataset
        self.input_size = input_size
        self.input_channels = input_channels
        self.num_classes = num_classes
        self.epochs = epochs
        self._lock = threading.Lock()
        self._pending: dict[int, _Pending] = {}
        self._next_id = 1
        self._proc: subprocess.Popen | None = None
        self._sock: socket.socket | None = None
        self._reader: threading.Thread | None = None
        self._greeted = threading.Event()
        self._closed = False
        self._connect()

    # -- session ------------------------------------------------------------

    def _connect(self) -> None:
        try:
            if self.endpoint.cmd is not None:
                self._proc = subprocess.Popen(
                    list(self.endpoint.cmd), stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE, text=True, bufsize=1)
                self._writer = self._proc.stdin
                read_source = self._proc.stdout
            else:
                self._sock = socket.create_connection(
                    self.endpoint.addr, timeout=self.endpoint.timeout)
                self._sock.settimeout(None)
                self._writer = self._sock.makefile("w", encoding="utf-8")
                read_source = self._sock.makefile("r", encoding="utf-8")
        except OSError as exc:
            raise OracleUnavailable(f"cannot reach trainer: {exc}") from exc
        self._reader = threading.Thread(
            target=self._read_loop, args=(read_source,), daemon=True)
        self._reader.start()
        self._send(make_hello())
        if not self._greeted.wait(self.endpoint.timeout):
            raise OracleUnavailable("trainer did not answer the hello handshake")

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._send(make_shutdown())
        except Exception:
            pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._sock is not None:
            self._sock.close()

    def __enter__(self) -> "RemoteOracle":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # -- wire plumbing --------------------------------------------------------

    def _send(self, message: dict) -> None:
        try:
            with self._lock:
                self._writer.write(encode_message(message) + "\n")
                self._writer.flush()
        except (OSError, ValueError) as exc:
            raise ProtocolError(f"trainer connection lost: {exc}") from exc

    def _read_loop(self, source) -> None:
        try:
            for line in source:
                line = line.strip()
                if not line:
                    continue
                try:
                    message = decode_message(line)
                except ProtocolError as exc:
                    self._fail_all_pending(exc)
                    return
                if message["type"] == "hello":
                    self._greeted.set()
                elif message["type"] == "result":
                    with self._lock:
                        pending = self._pending.pop(message["id"], None)
                    if pending is not None:
                        pending.response = message
                        pending.event.set()
        finally:
            self._fail_all_pending(
                ProtocolError("trainer connection closed"))

    def _fail_all_pending(self, error: Exception) -> None:
        with self._lock:
            pending = list(self._pending.values())
            self._pending.clear()
        for entry in pending:
            entry.response = error
            entry.event.set()

    # -- evaluation -----------------------------------------------------------

    def evaluate(self, spec: ArchitectureSpec) -> float:
        arch = serialize(spec)
        attempts = self.endpoint.max_retries + 1
        last_error: Exception | None = None
        for _ in range(attempts):
            with self._lock:
                request_id = self._next_id
                self._next_id += 1
                pending = _Pending()
                self._pending[request_id] = pending
            self._send(make_evaluate_request(
                request_id, arch, self.dataset, self.input_size,
                self.input_channels, self.num_classes, self.epochs))
            if not pending.event.wait(self.endpoint.timeout):
                with self._lock:
                    self._pending.pop(request_id, None)
                last_error = EvaluationError(
                    f"evaluation timed out after {self.endpoint.timeout}s")
                continue
            response = pending.response
            if isinstance(response, Exception):
                raise response if isinstance(response, ProtocolError) \
                    else EvaluationError(str(response))
            if response["status"] == "failed":
                raise EvaluationFailed(response["message"] or "worker failure")
            accuracy = response["accuracy"]
            if not isinstance(accuracy, (int, float)) or not 0.0 <= accuracy <= 1.0:
                raise ProtocolError(f"accuracy {accuracy!r} outside [0, 1]")
            return float(accuracy)
        raise last_error if last_error is not None else EvaluationError("no attempts")
