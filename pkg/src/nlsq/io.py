"""Run manifests and all-or-nothing output writing for the command line."""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import tempfile
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import ConfigError, ResourceError


def _plain(obj):
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def versions() -> dict:
    return {"nlsq": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def load_config(path: str | os.PathLike | None) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("the config must be a JSON object")
    return cfg


class OutputSet:
    """Files of one run, held in memory until :meth:`commit`.

    Every CSV starts with ``# seed`` and ``# config_hash`` lines; every JSON
    document carries the same pair under ``manifest``.
    """

    def __init__(self, seed: int, digest: str):
        self.seed = seed
        self.digest = digest
        self.files: dict[str, str] = {}

    def _add(self, name: str, text: str):
        if name in self.files:
            raise ValueError(f"duplicate output {name}")
        self.files[name] = text

    def csv(self, name: str, body: str):
        # modules may already stamp the seed; keep a single copy
        lines = [ln for ln in body.splitlines(keepends=True) if not ln.startswith("# seed:")]
        self._add(name, f"# seed: {self.seed}\n# config_hash: {self.digest}\n" + "".join(lines))

    def json(self, name: str, obj: dict):
        doc = {"manifest": {"seed": self.seed, "config_hash": self.digest}}
        doc.update(obj)
        self._add(name, json.dumps(_plain(doc), indent=1) + "\n")

    def commit(self, out_dir: str | os.PathLike) -> list[Path]:
        """Write every file; each lands via rename, so none is ever partial."""
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ResourceError(f"cannot create output directory {out}: {exc.strerror}") from exc
        staged = []
        try:
            for name, text in self.files.items():
                fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
                staged.append((tmp, out / name))
                os.chmod(tmp, 0o644)
                with os.fdopen(fd, "w", newline="\n") as fh:
                    fh.write(text)
        except OSError as exc:
            for tmp, _ in staged:
                os.unlink(tmp)
            raise ResourceError(f"cannot write outputs to {out}: {exc.strerror}") from exc
        for tmp, final in staged:
            os.replace(tmp, final)
        return [final for _, final in staged]
