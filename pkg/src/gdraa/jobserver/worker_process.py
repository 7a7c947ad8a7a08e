"""Entry point for one socket-transport worker process."""
from __future__ import annotations

import argparse
import logging

from ..collectives.gdraa import DEFAULT_TIMEOUT
from ..transport.sockets import SocketEndpoint
from .agent import WorkerAgent


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run one worker and connect it to a job server.")
    parser.add_argument("--rank", type=int, required=True)
    parser.add_argument("--server", required=True, help="job server host:port")
    parser.add_argument("--host", default="127.0.0.1", help="address to listen on for peers")
    parser.add_argument("--heartbeat", type=float, default=1.0)
    parser.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format=f"[worker {args.rank}] %(levelname)s %(message)s")

    endpoint = SocketEndpoint(args.rank, host=args.host)
    endpoint.connect_job_server(args.server)
    agent = WorkerAgent(endpoint, heartbeat_period=args.heartbeat, timeout=args.timeout)
    try:
        agent.run()
    finally:
        endpoint.close()
    return 1 if agent.error else 0


if __name__ == "__main__":
    raise SystemExit(main())
