"""Map snapshot files.

A snapshot is plain text: a ``# leanlivo-map-snapshot 1`` header, then a
``# section local`` block with the voxel map records and a
``# section longterm`` block with the long-term map records. Record lines
are those of :meth:`VoxelMap.snapshot_lines` (``V`` geometry, ``P``
visual point).
"""
from __future__ import annotations

from pathlib import Path

from .voxel_map import parse_snapshot_line

SNAPSHOT_HEADER = "# leanlivo-map-snapshot 1"
SECTIONS = ("local", "longterm")


class SnapshotError(ValueError):
    category = "snapshot-error"


def snapshot_text(vmap, ltm=None) -> str:
    lines = [SNAPSHOT_HEADER, "# section local", *vmap.snapshot_lines(), "# section longterm"]
    if ltm is not None:
        lines += ltm.snapshot_lines()
    return "\n".join(lines) + "\n"


def write_snapshot(path, vmap, ltm=None):
    Path(path).write_text(snapshot_text(vmap, ltm))


def read_snapshot(path):
    """Parsed records per section: ``{"local": [...], "longterm": [...]}``."""
    p = Path(path)
    if not p.is_file():
        raise SnapshotError(f"{p}: snapshot not found")
    lines = p.read_text().splitlines()
    if not lines or lines[0].strip() != SNAPSHOT_HEADER:
        raise SnapshotError(f"{p}:1: missing snapshot header")
    out = {s: [] for s in SECTIONS}
    section = None
    for i, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        if line.startswith("# section "):
            section = line.split()[-1]
            if section not in out:
                raise SnapshotError(f"{p}:{i}: unknown section {section!r}")
            continue
        if section is None:
            raise SnapshotError(f"{p}:{i}: record outside a section")
        try:
            out[section].append(parse_snapshot_line(line))
        except (ValueError, IndexError):
            raise SnapshotError(f"{p}:{i}: malformed record") from None
    return out
