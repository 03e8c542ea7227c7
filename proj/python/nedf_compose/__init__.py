# Copyright 2026 The nedf-compose Authors
# SPDX-License-Identifier: Apache-2.0
"""Python access to the depth-field compositing core."""

from ._core import (
    ClassifierConfig,
    Model,
    Scene,
    SceneError,
    frame_header,
    segment,
    train,
    unsegment,
)

__all__ = [
    "ClassifierConfig",
    "Model",
    "Scene",
    "SceneError",
    "frame_header",
    "segment",
    "train",
    "unsegment",
]
