import re
import subprocess
import sys
import time

import pytest

SERVE_READY = re.compile(r"listening on ([\d.]+):(\d+)")


@pytest.fixture(scope="session")
def benchmark_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("bench") / "bench.json"
    subprocess.run(
        [
            sys.executable, "-m", "partbench.cli", "gen",
            "--seed", "11", "--links", "2,3", "--instances", "2", "--inits", "1",
            "--out", str(path),
        ],
        check=True,
        capture_output=True,
    )
    return path


@pytest.fixture()
def env_server(benchmark_path):
    """A partbench server subprocess; yields (host, port)."""
    proc = subprocess.Popen(
        [
            sys.executable, "-m", "partbench.cli", "serve",
            "--port", "0", "--benchmark", str(benchmark_path),
            "--steps", "5", "--masks", "oracle",
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        deadline = time.time() + 30
        address = None
        while time.time() < deadline:
            line = proc.stdout.readline()
            if not line:
                break
            match = SERVE_READY.search(line)
            if match:
                address = (match.group(1), int(match.group(2)))
                break
        if address is None:
            raise RuntimeError("server did not report a listening address")
        yield address
    finally:
        proc.terminate()
        proc.wait(timeout=10)
