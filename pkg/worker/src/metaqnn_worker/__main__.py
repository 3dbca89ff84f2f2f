"""Entry point: ``python -m metaqnn_worker [--listen host:port] [--config f]``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .protocol import Worker
from .training import TrainerConfig


def load_config(path: str | None) -> TrainerConfig:
    if path is None:
        path = os.environ.get("METAQNN_WORKER_CONFIG")
    data = {}
    if path:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    if "data_root" not in data and os.environ.get("METAQNN_DATA_DIR"):
        data["data_root"] = os.environ["METAQNN_DATA_DIR"]
    return TrainerConfig.from_dict(data)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="metaqnn-worker")
    parser.add_argument("--listen", help="host:port for TCP; default stdio")
    parser.add_argument("--config", help="JSON trainer configuration")
    args = parser.parse_args(argv)
    worker = Worker(load_config(args.config))
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        worker.serve_tcp(host or "127.0.0.1", int(port))
    else:
        worker.serve_stdio()
    return 0


if __name__ == "__main__":
    sys.exit(main())
