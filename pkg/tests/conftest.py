"""Shared helpers for building small rasters in tests."""

from __future__ import annotations

import numpy as np
import pytest

from xferkit.raster import BandRole, MultibandRaster

RGBN = (BandRole.RED, BandRole.GREEN, BandRole.BLUE, BandRole.NIR)


def rgbn_raster(r, g, b, nir, nodata=None, normalized=True) -> MultibandRaster:
    stack = np.stack([np.asarray(p, dtype=np.float32) for p in (r, g, b, nir)])
    return MultibandRaster(stack, RGBN, nodata=nodata, normalized=normalized)


def const_rgbn(shape, r, g, b, nir, **kw) -> MultibandRaster:
    ones = np.ones(shape, dtype=np.float32)
    return rgbn_raster(ones * r, ones * g, ones * b, ones * nir, **kw)


def agl_raster(values, normalized=False) -> MultibandRaster:
    arr = np.asarray(values, dtype=np.float32)[None]
    return MultibandRaster(arr, (BandRole.AGL,), normalized=normalized)


def dsm_raster(values, nodata=None) -> MultibandRaster:
    arr = np.asarray(values, dtype=np.float32)[None]
    return MultibandRaster(arr, (BandRole.DSM,), nodata=nodata)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
