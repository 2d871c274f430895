"""Speculative embedding precompute simulator."""

import json
import os

from ._specache import ConfigError, EmbedCache, select
from . import _specache

__all__ = [
    "ConfigError",
    "EmbedCache",
    "ablate",
    "cache_stats",
    "config_digest",
    "effective_config",
    "measure_locality",
    "select",
    "simulate",
    "sweep",
]


def _text(config):
    if config is None:
        return "{}"
    if isinstance(config, dict):
        return json.dumps(config)
    if isinstance(config, (str, os.PathLike)) and os.path.exists(config):
        with open(config) as f:
            return f.read()
    return str(config)


def _out(out_dir):
    return None if out_dir is None else os.fspath(out_dir)


def effective_config(config=None):
    return json.loads(_specache.effective_config(_text(config)))


def config_digest(config=None):
    return _specache.config_digest(_text(config))


def simulate(config=None, out_dir=None):
    return json.loads(_specache.simulate(_text(config), _out(out_dir)))


def sweep(config=None, out_dir=None):
    return json.loads(_specache.sweep(_text(config), _out(out_dir)))


def ablate(config=None, out_dir=None):
    return json.loads(_specache.ablate(_text(config), _out(out_dir)))


def measure_locality(config=None, n_requests=10000):
    requests, with_history, mean, mean_all = _specache.measure_locality(_text(config), n_requests)
    return {
        "requests": requests,
        "requests_with_history": with_history,
        "mean_overlap": mean,
        "mean_overlap_all": mean_all,
    }


def cache_stats(cache):
    return json.loads(cache.stats())
