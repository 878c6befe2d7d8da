"""Completion gating: synthetic logs, gate models, calibration, replay, A/B and serving."""

import json
import os

from . import _core
from ._core import CgateError

__all__ = [
    "CgateError", "error_code", "default_world", "generate", "validate", "train", "train_hybrid",
    "sweep", "calibrate", "replay", "curve", "plot", "ab", "Scorer", "Gate", "Server", "bench",
]


def _path(p):
    return os.fspath(p) if p is not None else ""


def error_code(err):
    """Machine-readable tag of a CgateError, e.g. 'io' or 'schema_mismatch'."""
    return err.args[0] if err.args else None


def default_world():
    return json.loads(_core.default_world())


def generate(out, config=None, *, seed=1, split=0.0, **overrides):
    """Write a synthetic world to `out`; keyword overrides patch the top level of the config."""
    cfg = default_world() if config is None else dict(config)
    cfg.update(overrides)
    return json.loads(_core.generate(json.dumps(cfg), _path(out), split, seed))


def validate(path):
    return json.loads(_core.validate(_path(path)))


def train(task, data, out, **config):
    return json.loads(_core.train(task, _path(data), _path(out), json.dumps(config)))


def train_hybrid(task, data, out, validation=None, **config):
    return json.loads(_core.train_hybrid(task, _path(data), _path(validation), _path(out), json.dumps(config)))


def sweep(data, trigger, filter, target_fnr, grid=(), block_non_compilable=False):
    return json.loads(_core.sweep(_path(data), _path(trigger), _path(filter), target_fnr, list(grid),
                                  block_non_compilable))


def calibrate(data, trigger, filter, target_fnr, grid_pct, out, block_non_compilable=False):
    return json.loads(_core.calibrate(_path(data), _path(trigger), _path(filter), target_fnr, grid_pct,
                                      block_non_compilable, _path(out)))


def replay(data, trigger, filter, policy):
    return json.loads(_core.replay(_path(data), _path(trigger), _path(filter), _path(policy)))


def curve(calib, data, trigger, filter, target_fnr, grid=(), block_non_compilable=False, out=None):
    """Returns the curve as a list of row dicts (NaN for infeasible points)."""
    tsv = _core.curve(_path(calib), _path(data), _path(trigger), _path(filter), target_fnr, list(grid),
                      block_non_compilable, _path(out))
    lines = tsv.strip().split("\n")
    header = lines[0].split("\t")
    return [dict(zip(header, (float(v) for v in line.split("\t")))) for line in lines[1:]]


def plot(curve_tsv, out, title=""):
    _core.plot(_path(curve_tsv), _path(out), title)


def ab(arm_a, arm_b, metrics=(), resamples=2000, seed=0, pooled=False):
    return json.loads(_core.ab(_path(arm_a), _path(arm_b), list(metrics), resamples, seed, pooled))


class Scorer:
    def __init__(self, path, schema=None):
        self._s = _core.Scorer(_path(path), _path(schema))

    def score(self, features, context=None):
        """features: {"scalars": {...}, "categoricals": {...}, "flags": {...}}"""
        return self._s.score(json.dumps(features), context)

    family = property(lambda self: self._s.family)
    view = property(lambda self: self._s.view)
    sha256 = property(lambda self: self._s.sha256)


class Gate:
    def __init__(self, trigger, filter, policy, schema=None):
        self._g = _core.Gate(_path(trigger), _path(filter), _path(policy), _path(schema))

    def decide(self, request):
        return json.loads(self._g.handle_line(json.dumps(request)))

    def handle_line(self, line):
        return self._g.handle_line(line)

    @property
    def unknown_features(self):
        return self._g.unknown_features


class Server:
    """Runs the line protocol on a background thread; usable as a context manager."""

    def __init__(self, gate, host="127.0.0.1", port=0):
        self._gate = gate
        self._server = _core.Server(gate._g, host, port)

    def start(self):
        self._server.start()
        return self

    def stop(self):
        self._server.stop()

    @property
    def port(self):
        return self._server.port

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def bench(host, port, requests=1000, concurrency=8, seed=0):
    return json.loads(_core.bench(host, port, requests, concurrency, seed))
