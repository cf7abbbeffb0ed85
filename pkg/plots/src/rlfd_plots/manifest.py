"""Manifest loading and schema-checked CSV access."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path


class SchemaError(ValueError):
    """An artifact file is missing or does not match its declared schema."""


@dataclass(frozen=True)
class Manifest:
    root: Path
    payload: dict

    @property
    def files(self) -> dict:
        return self.payload.get("files", {})

    def csv_paths(self) -> list[str]:
        return sorted(k for k, v in self.files.items() if v.get("kind") == "csv")


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc.msg})") from exc
    if "files" not in payload:
        raise SchemaError(f"{path}: missing the 'files' table")
    return Manifest(root=path.parent, payload=payload)


def read_table(manifest: Manifest, relpath: str) -> dict[str, list[float]]:
    """Read a declared CSV into columns, verifying the manifest schema."""
    meta = manifest.files.get(relpath)
    if meta is None or meta.get("kind") != "csv":
        raise SchemaError(f"{relpath}: not declared as a CSV in the manifest")
    path = manifest.root / relpath
    if not path.exists():
        raise SchemaError(f"{relpath}: declared in the manifest but missing on disk")
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{relpath}: empty file")
        declared = meta.get("columns", [])
        if header != declared:
            missing = set(declared) - set(header)
            column = sorted(missing)[0] if missing else header[0]
            raise SchemaError(
                f"{relpath}: column {column!r} does not match the declared schema"
            )
        rows = list(reader)
    if len(rows) != meta.get("rows"):
        raise SchemaError(
            f"{relpath}: {len(rows)} rows on disk but {meta.get('rows')} declared"
        )
    if not rows:
        raise SchemaError(f"{relpath}: no data rows")
    columns: dict[str, list] = {name: [] for name in header}
    for row in rows:
        for name, cell in zip(header, row):
            try:
                columns[name].append(float(cell))
            except ValueError:
                columns[name].append(cell)
    return columns


def require_columns(relpath: str, table: dict, names: list[str]):
    for name in names:
        if name not in table:
            raise SchemaError(f"{relpath}: required column {name!r} is missing")
