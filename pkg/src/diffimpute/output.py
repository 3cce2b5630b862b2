"""Atomic file outputs and run manifests for the CLI."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from contextlib import contextmanager
from pathlib import Path


@contextmanager
def atomic_path(final_path):
    """Yield a temp path; rename onto final_path only if the block succeeds."""
    final_path = Path(final_path)
    tmp = final_path.with_name(f"{final_path.name}.tmp{os.getpid()}")
    try:
        yield tmp
        os.replace(tmp, final_path)
    except BaseException:
        if tmp.exists():
            tmp.unlink()
        raise


def write_text(path, text: str) -> None:
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)


def write_csv_rows(path, rows: list[dict], field_order: list[str] | None = None) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fields = field_order or list(rows[0].keys())
    with atomic_path(path) as tmp:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, options: dict, seed: int,
                   artifacts: list) -> Path:
    """Record the resolved run configuration and hashes of every artifact."""
    manifest = {
        "command": command,
        "seed": seed,
        "options": options,
        "artifacts": {str(p): sha256_file(p) for p in artifacts},
    }
    path = Path(out_dir) / f"manifest_{command}.json"
    write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
