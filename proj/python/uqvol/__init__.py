"""Neural scalar fields with uncertainty: training, reconstruction, rendering."""

import json as _json
import os as _os

from . import _core
from ._core import (  # noqa: F401
    Error,
    HttpError,
    generate_teardrop,
    load_volume,
    psnr_rmse,
    save_volume,
    summarize,
)


def _dump(obj):
    if obj is None:
        return ""
    return obj if isinstance(obj, str) else _json.dumps(obj)


def default_transfer_function():
    return _json.loads(_core.default_transfer_function())


def raycast(volume, tf=None, camera=None, step=0.0):
    """Renders a 3-D float array; returns an (H, W, 3) float64 image."""
    return _core.raycast(volume, _dump(tf), _dump(camera), step)


def train(config):
    """Trains from a run config dict; returns the manifest dict."""
    return _json.loads(_core.train(_dump(config)))


def reconstruct(manifest, samples=0, eta=0.1, seed=0, out_dir="out"):
    return _json.loads(_core.reconstruct(_os.fspath(manifest), samples, eta, seed, _os.fspath(out_dir)))


def render(manifest, tf=None, camera=None, samples=0, eta=0.1, seed=0, step=0.0,
           scale_mode="per-image", out_dir=None):
    """Renders mean, uncertainty and error images.

    Images are returned as arrays; with `out_dir` the PNGs and metrics.json
    are written as well.
    """
    out = _core.render(_os.fspath(manifest), _dump(tf), _dump(camera), samples, eta, seed, step,
                       scale_mode, _os.fspath(out_dir) if out_dir else "")
    out["metrics"] = _json.loads(out["metrics"])
    return out


def replay(manifest, out_dir):
    """Re-runs a manifest; returns {artifact: identical}."""
    return _json.loads(_core.replay(_os.fspath(manifest), _os.fspath(out_dir)))


def evaluate(config, sweep="all"):
    return _core.evaluate(_dump(config), sweep)


class RenderService:
    """The render API without the HTTP transport."""

    def __init__(self, registry):
        self._impl = _core.RenderService(_os.fspath(registry))

    def models(self):
        return _json.loads(self._impl.models())

    def render(self, request):
        return _json.loads(self._impl.render(_dump(request)))

    def stats(self):
        return _json.loads(self._impl.stats())

    def warm(self):
        self._impl.warm()
