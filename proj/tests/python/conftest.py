# Copyright 2026 The nedf-compose Authors
# SPDX-License-Identifier: Apache-2.0

import os
import pathlib
import re
import subprocess
import sys

import pytest

ROOT = pathlib.Path(__file__).resolve().parents[2]
SCENES = ROOT / "scenes"


@pytest.fixture(scope="session")
def cli():
    path = os.environ.get("NEDF_CLI", str(ROOT / "build" / "nedf"))
    if not os.path.exists(path):
        pytest.skip(f"nedf executable not found at {path}")
    return path


@pytest.fixture(scope="session")
def scenes():
    return SCENES


@pytest.fixture()
def server(cli):
    """`nedf serve` on a free port; yields the base URL."""
    proc = subprocess.Popen(
        [cli, "serve", str(SCENES / "two_spheres.json"), "--port", "0"],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    line = proc.stdout.readline()
    match = re.search(r"listening on (http://[\d.]+:\d+)", line)
    if not match:
        proc.kill()
        raise RuntimeError(f"server did not start: {line!r}")
    yield match.group(1)
    proc.terminate()
    try:
        proc.wait(timeout=10)
    except subprocess.TimeoutExpired:
        proc.kill()
        print("server did not stop on SIGTERM", file=sys.stderr)
        raise
