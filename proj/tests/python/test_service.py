# Copyright 2026 The nedf-compose Authors
# SPDX-License-Identifier: Apache-2.0

import io
import json
import struct
import time

import numpy as np
import pytest
import requests
from PIL import Image
from websockets.sync.client import connect

PNG = b"\x89PNG\r\n\x1a\n"
KINDS = {"color": 0, "depth": 1, "id": 2, "shadow": 3}


def ws_url(base, buffer="color"):
    return base.replace("http://", "ws://") + f"/api/stream?buffer={buffer}"


def read_frame(ws, timeout=20):
    msg = ws.recv(timeout=timeout)
    assert isinstance(msg, bytes)
    revision, kind, encoding, reserved, width, height = struct.unpack("<IBBHII", msg[:16])
    assert encoding == 0 and reserved == 0
    assert msg[16:24] == PNG
    return {"revision": revision, "kind": kind, "width": width, "height": height, "png": msg[16:]}


def test_get_scene(server):
    r = requests.get(server + "/api/scene", timeout=10)
    assert r.status_code == 200
    doc = r.json()
    assert doc["revision"] == 0
    assert [o["id"] for o in doc["scene"]["objects"]] == [1, 2]
    assert doc["scene"]["camera"]["width"] == 160


def test_edits_bump_revision_and_validate(server):
    r = requests.put(server + "/api/object/1/transform", json={"translation": [0.2, 0, 0]}, timeout=10)
    assert r.status_code == 200 and r.json() == {"revision": 1}
    scene = requests.get(server + "/api/scene", timeout=10).json()
    obj = next(o for o in scene["scene"]["objects"] if o["id"] == 1)
    assert obj["transform"]["translation"] == [0.2, 0, 0]

    r = requests.put(server + "/api/light", json={"type": "point", "position": [1, 5, -2]}, timeout=10)
    assert r.json() == {"revision": 2}
    r = requests.put(server + "/api/camera", json={"fov_y_deg": 50}, timeout=10)
    assert r.json() == {"revision": 3}

    assert requests.put(server + "/api/object/99/transform", json={}, timeout=10).status_code == 404
    bad = requests.put(server + "/api/object/1/transform", json={"scale": -1}, timeout=10)
    assert bad.status_code == 400 and "scale" in bad.json()["error"]
    garbled = requests.put(server + "/api/light", data="{nope", timeout=10)
    assert garbled.status_code == 400
    assert requests.get(server + "/api/render", timeout=10).status_code == 405
    assert requests.get(server + "/api/nothing", timeout=10).status_code == 404
    assert requests.get(server + "/api/scene", timeout=10).json()["revision"] == 3


def test_render_endpoint(server):
    r = requests.post(server + "/api/render", timeout=30)
    assert r.status_code == 200
    assert r.headers["Content-Type"] == "image/png"
    assert r.headers["X-Nedf-Revision"] == "0"
    assert r.headers["X-Nedf-Full-Generation"] == "1"
    assert json.loads(r.headers["X-Nedf-Timings"])["total_s"] > 0
    img = Image.open(io.BytesIO(r.content))
    assert img.size == (160, 120) and img.mode == "RGB"

    requests.put(server + "/api/object/2/transform", json={"translation": [0.5, 0.1, 0]}, timeout=10)
    r = requests.post(server + "/api/render?buffer=id", timeout=30)
    assert r.headers["X-Nedf-Revision"] == "1"
    assert r.headers["X-Nedf-Full-Generation"] == "0"
    assert r.headers["X-Nedf-Recomputed"] == "2"
    ids = np.asarray(Image.open(io.BytesIO(r.content)))
    assert ids.dtype == np.uint16
    # stored as id + 1 so that 0 means background
    assert set(np.unique(ids)) == {0, 2, 3}

    stats = requests.get(server + "/api/stats", timeout=10).json()
    assert stats["last_render"]["revision"] == 1
    assert requests.post(server + "/api/render?buffer=normals", timeout=10).status_code == 400


def test_stream_frames_follow_edits(server):
    with connect(ws_url(server, "depth")) as ws:
        first = read_frame(ws)
        assert first["revision"] == 0
        assert first["kind"] == KINDS["depth"]
        assert (first["width"], first["height"]) == (160, 120)
        depth = Image.open(io.BytesIO(first["png"]))
        assert depth.mode == "L"

        rev = requests.put(server + "/api/object/1/transform", json={"translation": [0, 0.3, 0]},
                           timeout=10).json()["revision"]
        frame = read_frame(ws)
        assert frame["revision"] == rev
        assert frame["png"] != first["png"]


def test_stream_coalesces_bursts(server):
    with connect(ws_url(server)) as ws:
        read_frame(ws)
        last = 0
        for i in range(40):
            last = requests.put(server + "/api/object/1/transform", json={"translation": [0.01 * i, 0, 0]},
                                timeout=10).json()["revision"]
        seen = []
        deadline = time.monotonic() + 30
        while time.monotonic() < deadline:
            frame = read_frame(ws)
            seen.append(frame["revision"])
            if frame["revision"] == last:
                break
        assert seen[-1] == last
        assert seen == sorted(seen)
        # intermediate revisions are skipped rather than queued
        assert len(seen) < 40
        with pytest.raises(TimeoutError):
            ws.recv(timeout=0.5)
    stats = requests.get(server + "/api/stats", timeout=10).json()
    assert stats["frames_streamed"] < 41


def test_two_buffers_streamed_together(server):
    with connect(ws_url(server, "color")) as a, connect(ws_url(server, "shadow")) as b:
        fa = read_frame(a)
        fb = read_frame(b)
        assert fa["kind"] == KINDS["color"] and fb["kind"] == KINDS["shadow"]
        assert fa["revision"] == fb["revision"]


def test_unknown_stream_buffer_rejected(server):
    with pytest.raises(Exception):
        with connect(ws_url(server, "normals")) as ws:
            ws.recv(timeout=5)
