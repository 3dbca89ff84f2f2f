"""Worker side of the evaluation wire protocol (NDJSON over stdio or TCP).

The worker greets with a hello on startup, answers evaluate requests with
result messages carrying the same id, and exits on shutdown. Malformed lines
are reported on stderr and skipped so a noisy peer cannot wedge the session;
evaluation problems come back as status "failed" with a message.
"""

from __future__ import annotations

import json
import socket
import sys

from .archs import ArchError, parse_arch
from .datasets import DatasetError, load_dataset
from .model import build_model
from .training import TrainerConfig, TrainingFailed, train_and_score

PROTOCOL_VERSION = 1


def encode(message: dict) -> str:
    return json.dumps(message, sort_keys=True, separators=(",", ":"))


class Worker:
    def __init__(self, config: TrainerConfig):
        self.config = config

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, request: dict) -> dict:
        request_id = request.get("id")
        try:
            layers = parse_arch(request["arch"])
            input_size = int(request["input_size"])
            input_channels = int(request["input_channels"])
            num_classes = int(request["num_classes"])
            epochs = int(request.get("budget", {}).get("epochs",
                                                       self.config.epochs))
            data = load_dataset(
                request["dataset"], input_size, input_channels, num_classes,
                data_root=self.config.data_root,
                validation_size=self.config.validation_size,
                subset_size=self.config.subset_size, seed=self.config.seed)
            accuracy = train_and_score(
                lambda: build_model(layers, input_size, input_channels,
                                    num_classes),
                data, self.config, epochs=epochs)
        except (ArchError, DatasetError, TrainingFailed, KeyError,
                TypeError, ValueError) as exc:
            return {"type": "result", "id": request_id, "status": "failed",
                    "accuracy": None, "message": f"{type(exc).__name__}: {exc}"}
        accuracy = min(1.0, max(0.0, float(accuracy)))
        return {"type": "result", "id": request_id, "status": "ok",
                "accuracy": accuracy, "message": None}

    # -- session loop -------------------------------------------------------

    def serve(self, reader, writer) -> None:
        writer.write(encode({"type": "hello",
                             "protocol": PROTOCOL_VERSION}) + "\n")
        writer.flush()
        for line in reader:
            line = line.strip()
            if not line:
                continue
            try:
                message = json.loads(line)
                kind = message["type"]
            except (json.JSONDecodeError, TypeError, KeyError):
                print(f"worker: skipping malformed line: {line[:120]!r}",
                      file=sys.stderr)
                continue
            if kind == "shutdown":
                return
            if kind == "hello":
                if message.get("protocol") != PROTOCOL_VERSION:
                    print(f"worker: unsupported protocol "
                          f"{message.get('protocol')!r}", file=sys.stderr)
                    return
                continue
            if kind == "evaluate":
                response = self.evaluate(message)
                writer.write(encode(response) + "\n")
                writer.flush()
                continue
            print(f"worker: ignoring message type {kind!r}", file=sys.stderr)

    def serve_stdio(self) -> None:
        self.serve(sys.stdin, sys.stdout)

    def serve_tcp(self, host: str, port: int) -> None:
        with socket.create_server((host, port)) as server:
            connection, _ = server.accept()
            with connection:
                reader = connection.makefile("r", encoding="utf-8")
                writer = connection.makefile("w", encoding="utf-8")
                self.serve(reader, writer)
