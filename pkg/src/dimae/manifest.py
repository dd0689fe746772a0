"""Run manifests: every output directory records exactly how it was produced."""

import json
import subprocess
import time
from pathlib import Path

from .errors import ValidationError

MANIFEST_NAME = "manifest.json"


def _version_string() -> str:
    from . import __version__

    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        ).stdout.strip()
    except OSError:
        rev = ""
    return f"dimae {__version__}" + (f" ({rev})" if rev else "")


def write_manifest(out_dir, command: str, config: dict, seeds: dict, outputs: list):
    """Write the immutable manifest; refuses to overwrite an existing one."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_NAME
    if path.exists():
        raise ValidationError(f"output dir already has a manifest: {path}")
    doc = {
        "command": command,
        "config": config,
        "version": _version_string(),
        "seeds": seeds,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": [str(p) for p in outputs],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
    return path
