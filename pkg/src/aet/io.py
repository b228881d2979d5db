"""File formats: nodal field store, VTK export, history CSV.

The field store is the authoritative persistence format (text, one value
per line, bound to its mesh by a content hash); VTK is for viewing only.
All writers format floats with 17 significant digits so files round-trip
float64 exactly and reruns are byte-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .mesh import Mesh
from .recon import IterationRecord

FIELD_MAGIC = "AETFIELD v1"
HISTORY_COLUMNS = ("k", "J_beta", "fit", "tv", "e_L1", "e_TV", "e_dBV",
                   "update_norm", "seconds")


def mesh_hash(mesh: Mesh) -> str:
    """Deterministic 16-hex digest of node coordinates and connectivity."""
    digest = hashlib.sha256()
    digest.update(np.int64([mesh.n_nodes, mesh.n_triangles]).tobytes())
    digest.update(np.ascontiguousarray(mesh.nodes, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(mesh.triangles, dtype=np.int64).tobytes())
    return digest.hexdigest()[:16]


class FieldFormatError(ValueError):
    """Malformed field file."""


def write_field(path, mesh: Mesh, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (mesh.n_nodes,):
        raise ValueError("field length does not match mesh node count")
    lines = [FIELD_MAGIC, f"mesh {mesh_hash(mesh)}", f"nodes {mesh.n_nodes}"]
    lines.extend(f"{v:.17g}" for v in values)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path):
    """Returns ``(mesh_hash, values)``; binding to a mesh is the caller's job."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FIELD_MAGIC:
        raise FieldFormatError(f"{path}: missing {FIELD_MAGIC!r} magic line")
    if len(lines) < 3 or not lines[1].startswith("mesh ") \
            or not lines[2].startswith("nodes "):
        raise FieldFormatError(f"{path}: malformed field header")
    href = lines[1].split()[1]
    try:
        count = int(lines[2].split()[1])
        values = np.array([float(v) for v in lines[3:3 + count]])
    except ValueError as exc:
        raise FieldFormatError(f"{path}: bad value line: {exc}") from exc
    if len(values) != count:
        raise FieldFormatError(
            f"{path}: header declares {count} values, found {len(values)}")
    return href, values


def export_vtk(path, mesh: Mesh, fields=None) -> None:
    """Legacy VTK 3.0 ASCII unstructured grid with nodal scalar fields."""
    fields = dict(fields or {})
    lines = [
        "# vtk DataFile Version 3.0",
        "aet field export",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    lines.extend(f"{x:.17g} {y:.17g} 0" for x, y in mesh.nodes)
    lines.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    lines.append(f"CELL_TYPES {mesh.n_triangles}")
    lines.extend("5" for _ in range(mesh.n_triangles))
    if fields:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, values in fields.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (mesh.n_nodes,):
                raise ValueError(f"field {name!r} length mismatch")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.17g}" for v in values)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def export_history(path, history) -> None:
    """One CSV row per outer iteration, floats at 17 significant digits."""
    lines = [",".join(HISTORY_COLUMNS)]
    for rec in history:
        row = [str(rec.k)] + [
            f"{v:.17g}" for v in (rec.j_beta, rec.fit, rec.tv, rec.e_l1,
                                  rec.e_tv, rec.e_dbv, rec.update_norm,
                                  rec.seconds)]
        lines.append(",".join(row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_history(path):
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or tuple(lines[0].split(",")) != HISTORY_COLUMNS:
        raise ValueError(f"{path}: unexpected history header")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        vals = [float(v) for v in parts[1:]]
        out.append(IterationRecord(int(parts[0]), *vals))
    return out
