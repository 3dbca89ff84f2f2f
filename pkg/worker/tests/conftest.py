"""Shared fixtures: a live worker subprocess and a fast test configuration.

The test config shrinks the batch size so the tiny synthetic fixtures get
enough optimizer steps per epoch; everything else keeps the worker defaults.
"""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

TINY_EVALUATE = {
    "type": "evaluate",
    "id": 1,
    "arch": "[C(16,3,1), P(2,2), C(32,3,1), SM(4)]",
    "dataset": "synthetic:512",
    "input_size": 8,
    "input_channels": 1,
    "num_classes": 4,
    "budget": {"epochs": 3},
}


class WorkerProcess:
    def __init__(self, *extra_args: str):
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "metaqnn_worker", *extra_args],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.PIPE, text=True, bufsize=1)

    def send(self, message) -> None:
        line = message if isinstance(message, str) else json.dumps(message)
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def read(self) -> dict:
        line = self.proc.stdout.readline()
        if not line:
            raise AssertionError("worker closed stdout")
        return json.loads(line)

    def close(self) -> int:
        self.send({"type": "shutdown"})
        try:
            return self.proc.wait(timeout=30)
        finally:
            if self.proc.poll() is None:
                self.proc.kill()

    def kill_if_alive(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()


@pytest.fixture(scope="session")
def worker_config(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("config") / "worker.json"
    path.write_text(json.dumps({"batch_size": 16, "seed": 0}))
    return str(path)


@pytest.fixture
def worker(worker_config):
    process = WorkerProcess("--config", worker_config)
    yield process
    process.kill_if_alive()
