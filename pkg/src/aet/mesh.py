"""Triangular meshes of planar domains.

The mesh is the carrier for every field in the pipeline: conforming P1
triangulations with counter-clockwise elements and an oriented boundary
loop.  This module provides the data model, a deterministic disk mesher,
MSH 2.2 ASCII import/export, point location and cross-mesh interpolation
of nodal fields.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

# Relative point-location slack, scaled by the domain diameter (2 for the
# unit disk).  Distances to the polygon are compared against this.
TOL_LOC = 1e-10


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class MshParseError(ValueError):
    """Malformed MSH file; message names the offending section/line."""


class PointNotFoundError(LookupError):
    """Query point lies outside the mesh polygon beyond tolerance."""


@dataclass(frozen=True)
class PointLocation:
    """Containing triangle and barycentric coordinates of a query point."""

    triangle_index: int
    barycentric: tuple[float, float, float]


class Mesh:
    """Conforming triangulation with oriented boundary.

    Parameters
    ----------
    nodes : (n, 2) float array
        Node coordinates.
    triangles : (m, 3) int array
        Node indices per triangle.  Triangles are re-oriented to positive
        signed area on construction.

    Notes
    -----
    Construction validates conformity (interior edges shared by exactly two
    triangles) and that the boundary edges form a single closed loop.  All
    arrays are frozen after construction; instances are safe to share
    between threads.
    """

    def __init__(self, nodes, triangles):
        nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must be an (n, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be an (m, 3) array")
        if len(triangles) == 0:
            raise MeshError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(nodes):
            raise MeshError("triangle node index out of range")
        if not np.isfinite(nodes).all():
            raise MeshError("non-finite node coordinate")

        p0 = nodes[triangles[:, 0]]
        p1 = nodes[triangles[:, 1]]
        p2 = nodes[triangles[:, 2]]
        signed = 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                        - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))
        flip = signed < 0.0
        if flip.any():
            triangles = triangles.copy()
            triangles[flip, 1], triangles[flip, 2] = (
                triangles[flip, 2].copy(), triangles[flip, 1].copy())
            signed = np.abs(signed)
        scale = np.abs(nodes).max() + 1.0
        if (signed <= 1e-14 * scale * scale).any():
            bad = int(np.argmax(signed <= 1e-14 * scale * scale))
            raise MeshError(f"triangle {bad} is degenerate (area {signed[bad]:g})")

        self.nodes = nodes
        self.triangles = triangles
        self.areas = signed
        self.boundary_edges = self._extract_boundary()
        self.h = float(np.sqrt(self._edge_lengths_sq().max()))
        self._grads = self._basis_gradients()
        self._patch_areas = np.bincount(
            triangles.ravel(), weights=np.repeat(self.areas, 3),
            minlength=len(nodes))
        if (self._patch_areas <= 0.0).any():
            bad = int(np.argmax(self._patch_areas <= 0.0))
            raise MeshError(f"node {bad} belongs to no triangle")
        self._locator = None
        for arr in (self.nodes, self.triangles, self.areas,
                    self.boundary_edges, self._grads, self._patch_areas):
            arr.flags.writeable = False

    # -- derived quantities -------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def basis_gradients(self) -> np.ndarray:
        """(m, 3, 2) gradients of the three P1 basis functions per triangle."""
        return self._grads

    @property
    def patch_areas(self) -> np.ndarray:
        """(n,) total area of the triangles adjacent to each node."""
        return self._patch_areas

    @property
    def lumped_mass(self) -> np.ndarray:
        """(n,) lumped P1 mass: one third of the patch area."""
        return self._patch_areas / 3.0

    def _edge_lengths_sq(self):
        t = self.triangles
        d = self.nodes[t[:, [1, 2, 0]]] - self.nodes[t]
        return (d ** 2).sum(axis=2)

    def _basis_gradients(self):
        # grad of basis at vertex a is perp(edge opposite a) / (2 area)
        p = self.nodes[self.triangles]  # (m, 3, 2)
        g = np.empty_like(p)
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            e = p[:, c, :] - p[:, b, :]
            g[:, a, 0] = -e[:, 1]
            g[:, a, 1] = e[:, 0]
        g /= (2.0 * self.areas)[:, None, None]
        return g

    def _extract_boundary(self):
        t = self.triangles
        # directed edges in CCW traversal order; domain lies on their left
        directed = np.concatenate(
            [t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)
        key = np.sort(directed, axis=1)
        order = np.lexsort((key[:, 1], key[:, 0]))
        sk = key[order]
        new_group = np.ones(len(sk), dtype=bool)
        new_group[1:] = (sk[1:] != sk[:-1]).any(axis=1)
        group_ids = np.cumsum(new_group) - 1
        counts = np.bincount(group_ids)
        if counts.max() > 2:
            gid = int(np.argmax(counts > 2))
            first = order[np.searchsorted(group_ids, gid)]
            raise MeshError(
                f"edge {tuple(key[first])} is shared by more than two triangles")
        single = counts[group_ids] == 1
        boundary = directed[order[single]]
        if len(boundary) == 0:
            raise MeshError("mesh has no boundary edges")
        # chain into one closed loop
        nxt = {}
        for a, b in boundary:
            if int(a) in nxt:
                raise MeshError(f"node {int(a)} starts two boundary edges")
            nxt[int(a)] = int(b)
        start = int(boundary[:, 0].min())
        loop = []
        node = start
        for _ in range(len(boundary)):
            succ = nxt.get(node)
            if succ is None:
                raise MeshError(f"boundary chain breaks at node {node}")
            loop.append((node, succ))
            node = succ
        if node != start or len(loop) != len(boundary):
            raise MeshError("boundary edges do not form a single closed loop")
        return np.array(loop, dtype=np.int64)

    # -- point location -----------------------------------------------------

    def _grid(self):
        if self._locator is None:
            self._locator = _BucketGrid(self)
        return self._locator

    def barycentric(self, tri_index: int, p) -> np.ndarray:
        """Barycentric coordinates of point ``p`` in the given triangle.

        The first two coordinates come from the standard determinant
        formulas; the third is ``1 - b0 - b1`` so the sum is exactly one.
        """
        a, b, c = self.triangles[tri_index]
        pa, pb, pc = self.nodes[a], self.nodes[b], self.nodes[c]
        det = 2.0 * self.areas[tri_index]
        b0 = ((pb[1] - pc[1]) * (p[0] - pc[0])
              + (pc[0] - pb[0]) * (p[1] - pc[1])) / det
        b1 = ((pc[1] - pa[1]) * (p[0] - pc[0])
              + (pa[0] - pc[0]) * (p[1] - pc[1])) / det
        return np.array([b0, b1, 1.0 - b0 - b1])

    def _accepts(self, tri_index: int, bary, tol: float) -> bool:
        # convert barycentric deficits to distances below each edge
        t = self.triangles[tri_index]
        p = self.nodes[t]
        two_area = 2.0 * self.areas[tri_index]
        for i in range(3):
            if bary[i] >= 0.0:
                continue
            opp = p[(i + 2) % 3] - p[(i + 1) % 3]
            edge_len = math.hypot(opp[0], opp[1])
            if -bary[i] * two_area / edge_len > tol:
                return False
        return True

    def locate(self, p, tol: float = None) -> PointLocation:
        """Find the triangle containing ``p``.

        Points on shared edges resolve to the lowest adjacent triangle
        index.  Raises :class:`PointNotFoundError` if ``p`` lies outside
        the mesh polygon by more than ``tol`` (default ``TOL_LOC`` times
        the domain diameter).
        """
        if tol is None:
            tol = TOL_LOC * 2.0 * float(np.abs(self.nodes).max())
        p = np.asarray(p, dtype=np.float64)
        for idx in self._grid().candidates(p):
            bary = self.barycentric(idx, p)
            if self._accepts(idx, bary, tol):
                return PointLocation(int(idx), tuple(bary))
        # grid miss: fall back to the exhaustive scan before giving up
        for idx in range(self.n_triangles):
            bary = self.barycentric(idx, p)
            if self._accepts(idx, bary, tol):
                return PointLocation(int(idx), tuple(bary))
        raise PointNotFoundError(f"point {tuple(p)} is outside the mesh")

    def locate_brute(self, p, tol: float = None) -> PointLocation:
        """Exhaustive-scan location; reference oracle for :meth:`locate`."""
        if tol is None:
            tol = TOL_LOC * 2.0 * float(np.abs(self.nodes).max())
        p = np.asarray(p, dtype=np.float64)
        for idx in range(self.n_triangles):
            bary = self.barycentric(idx, p)
            if self._accepts(idx, bary, tol):
                return PointLocation(int(idx), tuple(bary))
        raise PointNotFoundError(f"point {tuple(p)} is outside the mesh")

    def project_to_boundary(self, p):
        """Closest point on the boundary polyline and its distance to ``p``."""
        p = np.asarray(p, dtype=np.float64)
        a = self.nodes[self.boundary_edges[:, 0]]
        b = self.nodes[self.boundary_edges[:, 1]]
        ab = b - a
        denom = (ab ** 2).sum(axis=1)
        t = np.clip(((p - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d2 = ((proj - p) ** 2).sum(axis=1)
        best = int(np.argmin(d2))
        return proj[best], float(np.sqrt(d2[best]))


class _BucketGrid:
    """Uniform grid over triangle bounding boxes for O(1) point queries."""

    def __init__(self, mesh: Mesh):
        lo = mesh.nodes.min(axis=0)
        hi = mesh.nodes.max(axis=0)
        span = np.maximum(hi - lo, 1e-30)
        n = max(1, int(math.sqrt(mesh.n_triangles / 2.0)))
        self.lo, self.span, self.n = lo, span, n
        cells: list[list[int]] = [[] for _ in range(n * n)]
        p = mesh.nodes[mesh.triangles]
        bmin = p.min(axis=1)
        bmax = p.max(axis=1)
        i0 = np.clip(((bmin - lo) / span * n).astype(int), 0, n - 1)
        i1 = np.clip(((bmax - lo) / span * n).astype(int), 0, n - 1)
        for t in range(mesh.n_triangles):
            for ix in range(i0[t, 0], i1[t, 0] + 1):
                for iy in range(i0[t, 1], i1[t, 1] + 1):
                    cells[ix * n + iy].append(t)
        self.cells = cells

    def candidates(self, p):
        ix = min(max(int((p[0] - self.lo[0]) / self.span[0] * self.n), 0), self.n - 1)
        iy = min(max(int((p[1] - self.lo[1]) / self.span[1] * self.n), 0), self.n - 1)
        return self.cells[ix * self.n + iy]


# ---------------------------------------------------------------------------
# disk mesher


def generate_disk_mesh(h: float) -> Mesh:
    """Quasi-uniform triangulation of the unit disk.

    Nodes are placed on concentric rings with spacing ``1/n`` where
    ``n = ceil(1/h)``; ring ``k`` carries ``6k`` equally spaced nodes, so
    node counts grow with the circumference.  Adjacent rings are stitched
    by an angular two-pointer sweep, which keeps triangles near
    equilateral.  The construction is deterministic.

    Parameters
    ----------
    h : float
        Target mesh size, ``0 < h < 1``.  The maximum edge length of the
        result is at most ``1.5 h``.
    """
    if not (0.0 < h < 1.0):
        raise ValueError(f"mesh size h must lie in (0, 1), got {h}")
    n = max(1, math.ceil(1.0 / h - 1e-9))

    nodes = [(0.0, 0.0)]
    ring_start = [0]
    for k in range(1, n + 1):
        m = 6 * k
        r = k / n
        ring_start.append(len(nodes))
        ang = 2.0 * np.pi * np.arange(m) / m
        nodes.extend(zip(r * np.cos(ang), r * np.sin(ang)))
    nodes = np.array(nodes)

    tris = []
    for b in range(6):  # fan around the center
        tris.append((0, 1 + b, 1 + (b + 1) % 6))
    for k in range(1, n):
        mi, mo = 6 * k, 6 * (k + 1)
        oi, oo = ring_start[k], ring_start[k + 1]
        step_i, step_o = 2.0 * np.pi / mi, 2.0 * np.pi / mo
        a = b = 0
        while a < mi or b < mo:
            advance_inner = a < mi and (
                b >= mo or (a + 1) * step_i <= (b + 1) * step_o + 1e-12)
            if advance_inner:
                tris.append((oi + a, oo + b % mo, oi + (a + 1) % mi))
                a += 1
            else:
                tris.append((oi + a % mi, oo + b, oo + (b + 1) % mo))
                b += 1
    return Mesh(nodes, np.array(tris, dtype=np.int64))


# ---------------------------------------------------------------------------
# MSH 2.2 ASCII I/O

_MSH_TRIANGLE = 2
_MSH_LINE = 1


def read_msh(path) -> Mesh:
    """Read a gmsh MSH 2.2 ASCII file.

    Only 3-node triangles (element type 2) and 2-node lines (type 1) are
    accepted; lines are ignored and the boundary is recomputed from the
    triangle topology.  Node ids are re-indexed densely from zero in file
    order.  Nonzero z coordinates are dropped with a warning.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()

    def fail(lineno, msg):
        raise MshParseError(f"{path}:{lineno + 1}: {msg}")

    i = 0

    def expect(tag):
        nonlocal i
        while i < len(lines) and not lines[i].strip():
            i += 1
        if i >= len(lines) or lines[i].strip() != tag:
            fail(min(i, len(lines) - 1), f"expected section marker {tag!r}")
        i += 1

    expect("$MeshFormat")
    fmt = lines[i].split()
    if len(fmt) != 3 or fmt[0] != "2.2":
        fail(i, f"unsupported $MeshFormat {lines[i].strip()!r} (need 2.2 ASCII)")
    i += 1
    expect("$EndMeshFormat")

    expect("$Nodes")
    try:
        n_nodes = int(lines[i])
    except (ValueError, IndexError):
        fail(i, "bad node count in $Nodes")
    i += 1
    coords = np.empty((n_nodes, 2))
    id_map = {}
    z_warned = False
    for k in range(n_nodes):
        if i >= len(lines) or lines[i].strip().startswith("$"):
            fail(i, f"$Nodes declares {n_nodes} nodes but lists {k}")
        parts = lines[i].split()
        if len(parts) != 4:
            fail(i, "node line must be 'id x y z'")
        try:
            nid = int(parts[0])
            x, y, z = (float(v) for v in parts[1:])
        except ValueError:
            fail(i, "malformed node line in $Nodes")
        if nid in id_map:
            fail(i, f"duplicate node id {nid} in $Nodes")
        if z != 0.0 and not z_warned:
            warnings.warn(f"{path}: dropping nonzero z coordinates", stacklevel=2)
            z_warned = True
        id_map[nid] = k
        coords[k] = (x, y)
        i += 1
    expect("$EndNodes")

    expect("$Elements")
    try:
        n_elem = int(lines[i])
    except (ValueError, IndexError):
        fail(i, "bad element count in $Elements")
    i += 1
    tris = []
    for k in range(n_elem):
        if i >= len(lines) or lines[i].strip().startswith("$"):
            fail(i, f"$Elements declares {n_elem} elements but lists {k}")
        parts = lines[i].split()
        try:
            etype = int(parts[1])
            ntags = int(parts[2])
            conn = [int(v) for v in parts[3 + ntags:]]
        except (ValueError, IndexError):
            fail(i, "malformed element line in $Elements")
        if etype == _MSH_TRIANGLE:
            if len(conn) != 3:
                fail(i, "triangle element must reference 3 nodes")
            try:
                tris.append([id_map[c] for c in conn])
            except KeyError as exc:
                fail(i, f"element references unknown node id {exc.args[0]}")
        elif etype == _MSH_LINE:
            pass  # boundary is recomputed from triangle adjacency
        else:
            fail(i, f"unsupported element type {etype} (only types 1 and 2)")
        i += 1
    expect("$EndElements")

    if not tris:
        raise MshParseError(f"{path}: $Elements contains no triangles")
    try:
        return Mesh(coords, np.array(tris, dtype=np.int64))
    except MeshError as exc:
        raise MshParseError(f"{path}: {exc}") from exc


def write_msh(mesh: Mesh, path) -> None:
    """Write MSH 2.2 ASCII; coordinates keep full float64 precision."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat"]
    out.append("$Nodes")
    out.append(str(mesh.n_nodes))
    for k, (x, y) in enumerate(mesh.nodes, start=1):
        out.append(f"{k} {x:.17g} {y:.17g} 0")
    out.append("$EndNodes")
    out.append("$Elements")
    out.append(str(len(mesh.boundary_edges) + mesh.n_triangles))
    eid = 1
    for a, b in mesh.boundary_edges:
        out.append(f"{eid} 1 2 0 1 {a + 1} {b + 1}")
        eid += 1
    for a, b, c in mesh.triangles:
        out.append(f"{eid} 2 2 0 1 {a + 1} {b + 1} {c + 1}")
        eid += 1
    out.append("$EndElements")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# cross-mesh interpolation


def interpolate_p1(src_mesh: Mesh, src_field, dst_mesh: Mesh) -> np.ndarray:
    """Interpolate a nodal field from one mesh onto another.

    Destination nodes outside the source polygon by at most ``h_src**2``
    (the polygonal boundary gap between two discretizations of the same
    curved domain) are clamped to the nearest boundary point; farther
    nodes raise :class:`PointNotFoundError`.
    """
    src_field = np.asarray(src_field, dtype=np.float64)
    if src_field.shape != (src_mesh.n_nodes,):
        raise ValueError("field length does not match source mesh")
    clamp = src_mesh.h ** 2
    out = np.empty(dst_mesh.n_nodes)
    for k, p in enumerate(dst_mesh.nodes):
        try:
            loc = src_mesh.locate(p)
        except PointNotFoundError:
            proj, dist = src_mesh.project_to_boundary(p)
            if dist > clamp:
                raise PointNotFoundError(
                    f"destination node {k} at {tuple(p)} lies {dist:g} "
                    f"outside the source mesh (clamp limit {clamp:g})")
            loc = src_mesh.locate(proj)
        tri = src_mesh.triangles[loc.triangle_index]
        out[k] = float(np.dot(src_field[tri], loc.barycentric))
    return out
