"""Config files, exports and run manifests."""
from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .errors import ConfigError

SCHEMA_VERSION = 1


def load_config(path):
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def dump_config(cfg) -> str:
    return tomli_w.dumps(cfg)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.floating):
        return _plain(float(obj))
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def dumps_json(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats made explicit."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def path_jsonl(path) -> str:
    """Embedded path as JSON lines ``{n, tau, dtau, y, i}``."""
    tau = path.tau
    return "".join(json.dumps({"n": n, "tau": float(tau[n]), "dtau": float(path.dtau[n]),
                               "y": path.y[n].tolist(), "i": int(path.i[n])}) + "\n"
                   for n in range(len(path)))


def write_text(out_dir, name, text):
    p = Path(out_dir) / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    return p


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_manifest(command, args, config, seed, streams, model_hash, version):
    """The deterministic part of a manifest, embedded in every report."""
    return {"schema_version": SCHEMA_VERSION, "command": command, "args": args,
            "config": config, "root_seed": seed, "streams": streams,
            "model_hash": model_hash, "version": version}


def write_manifest(out_dir, manifest, outputs, started):
    """Sidecar ``manifest.json`` adding wall-clock and output digests."""
    side = dict(manifest)
    side["wall_clock"] = {"started": started, "seconds": round(time.time() - started, 3)}
    side["platform"] = platform.platform()
    side["outputs"] = {Path(p).name: digest(p) for p in outputs}
    return write_text(out_dir, "manifest.json", dumps_json(side))


def env_override(name, value):
    """Environment variables override only seed and thread count."""
    raw = os.environ.get(name)
    return int(raw) if raw not in (None, "") else value
