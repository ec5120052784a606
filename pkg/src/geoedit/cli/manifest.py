"""Run manifests: which command ran, on which inputs, producing which bytes.

The manifest is the last file a run writes, atomically, so a manifest on
disk always describes a completed run.  Output files are recorded with
their sha256 so completeness can be re-checked later.
"""

import hashlib
import json
import os
import subprocess
import time

from ..errors import ContractError


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def git_describe():
    """Best-effort build identity; never fails the run."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


def write_manifest(out_dir, subcommand, cfg_hash, checkpoints, outputs,
                   wall_clock_s, extra=None):
    """Assemble and atomically write <out_dir>/manifest.json; returns its path.

    `checkpoints` maps role -> path for every checkpoint the run loaded;
    `outputs` lists files the run created (each must exist by now).
    """
    records = []
    for path in outputs:
        if not os.path.isfile(path):
            raise ContractError(f"declared output does not exist: {path}")
        records.append(
            {
                "path": os.path.abspath(path),
                "sha256": sha256_file(path),
                "bytes": os.path.getsize(path),
            }
        )
    doc = {
        "subcommand": subcommand,
        "config_hash": cfg_hash,
        "checkpoints": {
            role: {"path": os.path.abspath(p), "sha256": sha256_file(p)}
            for role, p in (checkpoints or {}).items()
        },
        "outputs": records,
        "wall_clock_s": float(wall_clock_s),
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "git_describe": git_describe(),
    }
    if extra:
        doc["extra"] = extra
    path = os.path.join(out_dir, "manifest.json")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)
    return path


def check_manifest(path):
    """Re-verify a manifest: every listed output exists and hash-matches.

    Returns a list of problem strings, empty when the manifest is sound.
    """
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    problems = []
    for rec in doc.get("outputs", []):
        p = rec["path"]
        if not os.path.isfile(p):
            problems.append(f"missing output: {p}")
        elif sha256_file(p) != rec["sha256"]:
            problems.append(f"hash mismatch: {p}")
    return problems
