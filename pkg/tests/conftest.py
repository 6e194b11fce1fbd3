"""Shared fixtures: tiny datasets are expensive to rasterize, so they are
built once per session and copied nowhere."""

from __future__ import annotations

import numpy as np
import pytest

from talkingnerf.dataset import write_dataset


@pytest.fixture(scope="session")
def tiny_ds(tmp_path_factory):
    """1 identity, 12 frames, 16x16: just enough for loader and train smoke."""
    root = tmp_path_factory.mktemp("ds_tiny")
    manifest = write_dataset(str(root), n_ids=1, n_frames=12, width=16,
                             height=16, seed=5, d_a=4)
    return str(root), manifest


@pytest.fixture(scope="session")
def small_ds(tmp_path_factory):
    """2 identities, 12 frames, 24x24: multi-identity paths."""
    root = tmp_path_factory.mktemp("ds_small")
    manifest = write_dataset(str(root), n_ids=2, n_frames=12, width=24,
                             height=24, seed=23, d_a=4)
    return str(root), manifest


def assert_allclose(a, b, rtol=0.0, atol=0.0, msg=""):
    np.testing.assert_allclose(np.asarray(a), np.asarray(b),
                               rtol=rtol, atol=atol, err_msg=msg)
