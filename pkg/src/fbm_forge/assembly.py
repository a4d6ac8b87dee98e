"""Reflection-group orbit of the fundamental piece, seam welding and mesh export.

The fundamental piece has three kinds of mirror edges: the waist on the
plane z = 0, the diameter on the tilted plane through the axis and the
symmetry curve on y = 0. Copies of the piece under the group generated by
the three reflections are welded along those edges only; copies that pass
through the same points elsewhere (the surface is immersed) stay apart.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import ClosureError, GroupNotClosedError, MeshWeldError
from .geometry import reflection_matrix, rotation_about_axis, tilted_plane_normal

log = logging.getLogger(__name__)

GROUP_TOL = 1e-12
WELD_TOL = 1e-7
DEFAULT_CAP = 512
CHART_CODES = {"bridge": 0, "disk": 1}
THREADS_ENV = "FBM_FORGE_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None


# --------------------------------------------------------------------------
# symmetry group


def group_generators(omega: float) -> Dict[str, np.ndarray]:
    """Reflections across y = 0, z = 0 and the tilted plane through the axis."""
    return {
        "l_perp": np.diag([1.0, -1.0, 1.0]),
        "P": np.diag([1.0, 1.0, -1.0]),
        "P_prime": reflection_matrix(tilted_plane_normal(omega)),
    }


def period_rotation(omega: float) -> np.ndarray:
    return rotation_about_axis(math.pi + 2.0 * omega)


@dataclass
class SymmetryGroup:
    omega: float
    generators: Dict[str, np.ndarray]
    elements: List[np.ndarray]
    words: List[str]
    finite: bool
    cap: int

    @property
    def order(self) -> Optional[int]:
        return len(self.elements) if self.finite else None

    def __len__(self) -> int:
        return len(self.elements)

    def index(self, Q, tol: float = 1e-9) -> Optional[int]:
        """Position of the element equal to ``Q``, or None."""
        stack = np.asarray(self.elements)
        diff = np.max(np.abs(stack - np.asarray(Q)[None]), axis=(1, 2))
        k = int(np.argmin(diff))
        return k if diff[k] <= tol else None

    def orthogonality_defect(self) -> float:
        stack = np.asarray(self.elements)
        return float(np.max(np.abs(np.einsum("kji,kjl->kil", stack, stack) - np.eye(3))))

    def as_dict(self) -> dict:
        return {"omega": self.omega, "finite": self.finite, "order": self.order, "enumerated": len(self), "cap": self.cap}


def enumerate_group(omega: float, cap: int = DEFAULT_CAP, tol: float = GROUP_TOL) -> SymmetryGroup:
    """Breadth-first closure of products of the generators.

    Stops with ``finite=False`` once ``cap`` distinct elements are found
    and products are still pending.
    """
    if cap < 4:
        raise ValueError(f"group cap must be at least 4, got {cap}")
    gens = group_generators(omega)
    elements = [np.eye(3)]
    words = [""]
    frontier = [0]
    finite = True
    while frontier:
        nxt = []
        for k in frontier:
            for name, G in gens.items():
                Q = elements[k] @ G
                diffs = np.max(np.abs(np.asarray(elements) - Q[None]), axis=(1, 2))
                if np.min(diffs) <= tol:
                    continue
                if len(elements) >= cap:
                    finite = False
                    break
                elements.append(Q)
                words.append(f"{words[k]}.{name}" if words[k] else name)
                nxt.append(len(elements) - 1)
            if not finite:
                break
        if not finite:
            break
        frontier = nxt
    return SymmetryGroup(omega, gens, elements, words, finite, cap)


def rotation_order(omega: float, cap: int = DEFAULT_CAP, tol: float = GROUP_TOL) -> Optional[int]:
    """Smallest n with R^n = I for the period rotation, by repeated multiplication."""
    R = period_rotation(omega)
    Q = R.copy()
    for n in range(1, cap + 1):
        if np.max(np.abs(Q - np.eye(3))) <= tol:
            return n
        Q = Q @ R
    return None


def strip_elements(omega: float, copies: int) -> SymmetryGroup:
    """Powers of the period rotation, each with its z = 0 and y = 0 mirror images."""
    if copies < 1:
        raise ValueError(f"strip needs at least one copy, got {copies}")
    gens = group_generators(omega)
    R = period_rotation(omega)
    elements, words = [], []
    Rk = np.eye(3)
    for k in range(copies):
        for tail, name in ((np.eye(3), ""), (gens["P"], "P"), (gens["l_perp"], "l_perp"), (gens["P"] @ gens["l_perp"], "P.l_perp")):
            elements.append(Rk @ tail)
            words.append(".".join(w for w in (f"R^{k}" if k else "", name) if w))
        Rk = Rk @ R
    closes = rotation_order(omega, cap=copies) is not None
    return SymmetryGroup(omega, gens, elements, words, closes, copies)


# --------------------------------------------------------------------------
# fundamental piece


@dataclass
class FundamentalPiece:
    """Non-overlapping triangulation of the two charts, world coordinates."""

    vertices: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray
    chart: np.ndarray
    node: np.ndarray
    seams: Dict[str, np.ndarray]
    spherical: np.ndarray


def _grid_triangles(rows: np.ndarray) -> np.ndarray:
    """Two triangles per cell of a 2D array of vertex indices."""
    a, b = rows[:-1, :-1], rows[1:, :-1]
    c, d = rows[1:, 1:], rows[:-1, 1:]
    t1 = np.stack([a, b, c], axis=-1).reshape(-1, 3)
    t2 = np.stack([a, c, d], axis=-1).reshape(-1, 3)
    return np.concatenate([t1, t2])


def zipper(points, left: Sequence[int], right: Sequence[int]) -> np.ndarray:
    """Triangle strip between two polylines with matching end points.

    Advances along whichever side gives the shorter new diagonal.
    """
    left, right = list(left), list(right)
    i = j = 0
    tris = []
    while i < len(left) - 1 or j < len(right) - 1:
        if i == len(left) - 1:
            take_left = False
        elif j == len(right) - 1:
            take_left = True
        else:
            dl = np.linalg.norm(points[left[i + 1]] - points[right[j]])
            dr = np.linalg.norm(points[left[i]] - points[right[j + 1]])
            take_left = dl <= dr
        if take_left:
            tris.append((left[i], left[i + 1], right[j]))
            i += 1
        else:
            tris.append((left[i], right[j + 1], right[j]))
            j += 1
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def _orient(vertices, normals, triangles) -> np.ndarray:
    v0, v1, v2 = (vertices[triangles[:, k]] for k in range(3))
    face = np.cross(v1 - v0, v2 - v0)
    ref = normals[triangles].sum(axis=1)
    flip = np.einsum("ij,ij->i", face, ref) < 0
    out = triangles.copy()
    out[flip] = out[flip][:, [0, 2, 1]]
    return out


def _plane_name(world_reflection, generators) -> str:
    for name, G in generators.items():
        if np.max(np.abs(world_reflection - G)) <= 1e-12:
            return name
    raise MeshWeldError("mirror edge does not lie on a generator plane")


def _disk_start_row(surface) -> int:
    """First disk row lying entirely beyond the bridge's outer edge."""
    disk = surface.charts["disk"]
    n2 = disk.shape[1]
    for ov in surface.overlaps:
        if ov.source == "disk" and ov.target == "bridge":
            return int(np.max(ov.index // n2)) - 1
    raise MeshWeldError("surface has no disk-to-bridge overlap map")


def fundamental_piece(surface, positions: Optional[Dict[str, np.ndarray]] = None) -> FundamentalPiece:
    """Triangulate the fundamental piece.

    ``positions`` maps chart names to local node arrays (for instance the
    converged nodes); defaults to the surface's own nodes. The whole bridge
    chart is kept, the disk chart is trimmed past the bridge's outer edge
    and the two are joined by a zipper strip.
    """
    positions = positions or {n: cd.X for n, cd in surface.charts.items()}
    gens = group_generators(surface.params.omega)
    bridge, disk = surface.charts["bridge"], surface.charts["disk"]
    i0 = _disk_start_row(surface)
    nb1, nb2 = bridge.shape
    nd1, nd2 = disk.shape
    if not 0 < i0 < nd1 - 1:
        raise MeshWeldError(f"disk chart has no rows beyond the bridge (start row {i0} of {nd1})")

    Xb = bridge.chart.to_world(positions["bridge"]).reshape(-1, 3)
    Xd = disk.chart.to_world(positions["disk"])[i0:].reshape(-1, 3)
    vertices = np.concatenate([Xb, Xd])
    normals = np.concatenate(
        [bridge.chart.to_world(bridge.normal).reshape(-1, 3), disk.chart.to_world(disk.normal)[i0:].reshape(-1, 3)]
    )
    chart = np.concatenate([np.full(nb1 * nb2, CHART_CODES["bridge"]), np.full((nd1 - i0) * nd2, CHART_CODES["disk"])])
    node = np.concatenate([np.arange(nb1 * nb2), i0 * nd2 + np.arange((nd1 - i0) * nd2)])

    b_idx = np.arange(nb1 * nb2).reshape(nb1, nb2)
    d_idx = nb1 * nb2 + np.arange((nd1 - i0) * nd2).reshape(nd1 - i0, nd2)
    tris = np.concatenate([_grid_triangles(b_idx), _grid_triangles(d_idx), zipper(vertices, b_idx[-1], d_idx[0])])
    tris = _orient(vertices, normals, tris)

    seams: Dict[str, List[np.ndarray]] = {}
    spherical = []
    for cd, idx in ((bridge, b_idx), (disk, d_idx)):
        chart_obj = cd.chart
        for edge, local in chart_obj.reflections.items():
            world = chart_obj.frame @ np.asarray(local) @ chart_obj.frame.T
            name = _plane_name(world, gens)
            if cd is disk and edge == "u1_lo":
                continue
            seams.setdefault(name, []).append(np.asarray(idx[_edge_slice(edge)]).ravel())
        for edge in chart_obj.edges_tagged("spherical"):
            spherical.append(np.asarray(idx[_edge_slice(edge)]).ravel())
    return FundamentalPiece(
        vertices=vertices,
        normals=normals,
        triangles=tris,
        chart=chart,
        node=node,
        seams={k: np.unique(np.concatenate(v)) for k, v in seams.items()},
        spherical=np.unique(np.concatenate(spherical)),
    )


def _edge_slice(edge: str):
    return {"u1_lo": (0, slice(None)), "u1_hi": (-1, slice(None)), "u2_lo": (slice(None), 0), "u2_hi": (slice(None), -1)}[edge]


# --------------------------------------------------------------------------
# assembly


@dataclass
class AnnulusMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    provenance: np.ndarray
    seam_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    raw_to_welded: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def empty_mesh() -> AnnulusMesh:
    return AnnulusMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3), dtype=np.int64))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _transform(piece: FundamentalPiece, Q: np.ndarray):
    verts = piece.vertices @ Q.T
    tris = piece.triangles if np.linalg.det(Q) > 0 else piece.triangles[:, [0, 2, 1]]
    return verts, tris


def assemble(piece: FundamentalPiece, group: SymmetryGroup, weld_tol: float = WELD_TOL, strip: bool = False) -> AnnulusMesh:
    """Copies of the piece under every group element, welded along mirror seams.

    Reflections reverse the winding so that orientation is consistent
    across seams. Raises ClosureError when a seam pair is farther apart
    than ``weld_tol``.
    """
    if not group.finite and not strip:
        raise GroupNotClosedError(f"group at omega = {group.omega:.6g} did not close within {group.cap} elements; use strip mode")
    n = len(piece.vertices)
    copies = len(group.elements)
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        parts = list(pool.map(lambda Q: _transform(piece, Q), group.elements))
    raw = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, 3))
    tris = np.concatenate([p[1] + k * n for k, p in enumerate(parts)]) if parts else np.zeros((0, 3), dtype=np.int64)
    prov = np.column_stack(
        [np.repeat(np.arange(copies), n), np.tile(piece.chart, copies), np.tile(piece.node, copies)]
    ).astype(np.int64)

    pairs = []
    for k, Q in enumerate(group.elements):
        for name, idx in piece.seams.items():
            partner = group.index(Q @ group.generators[name])
            if partner is None or partner <= k:
                continue
            pairs.append(np.column_stack([k * n + idx, partner * n + idx]))
    pairs = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)

    gaps = np.linalg.norm(raw[pairs[:, 0]] - raw[pairs[:, 1]], axis=-1) if len(pairs) else np.zeros(0)
    max_gap = float(np.max(gaps)) if gaps.size else 0.0
    if max_gap > weld_tol:
        w = int(np.argmax(gaps))
        a, b = pairs[w]
        worst = {"vertices": [int(a), int(b)], "provenance": [prov[a].tolist(), prov[b].tolist()], "gap": max_gap}
        log.warning("seam gap %.3g at %s", max_gap, worst)
        raise ClosureError(f"seam gap {max_gap:.3g} exceeds weld tolerance {weld_tol:g}: {worst}", worst)

    uf = _UnionFind(len(raw))
    for a, b in pairs:
        uf.union(int(a), int(b))
    roots = np.array([uf.find(i) for i in range(len(raw))], dtype=np.int64)
    keep = np.flatnonzero(roots == np.arange(len(raw)))
    new_index = np.full(len(raw), -1, dtype=np.int64)
    new_index[keep] = np.arange(len(keep))
    raw_to_welded = new_index[roots]

    mesh = AnnulusMesh(
        vertices=raw[keep],
        triangles=raw_to_welded[tris],
        provenance=prov[keep],
        seam_pairs=pairs,
        raw_to_welded=raw_to_welded,
    )
    spherical_raw = (np.arange(copies)[:, None] * n + piece.spherical[None, :]).ravel()
    mesh.diagnostics = {
        "copies": copies,
        "triangles_per_copy": int(len(piece.triangles)),
        "max_seam_gap": max_gap,
        "seam_pairs": int(len(pairs)),
        "closed": bool(group.finite),
        "spherical_defect": float(np.max(np.abs(np.linalg.norm(raw[spherical_raw], axis=-1) - 1.0))) if copies else 0.0,
        **topology(mesh),
        "unwelded_coincidences": _coincidences(mesh.vertices, weld_tol),
    }
    return mesh


def assemble_surface(surface, positions=None, omega: Optional[float] = None, cap: int = DEFAULT_CAP, copies: Optional[int] = None, weld_tol: float = WELD_TOL) -> AnnulusMesh:
    """Annulus when the group closes, otherwise a strip of ``copies`` periods."""
    omega = surface.params.omega if omega is None else omega
    piece = fundamental_piece(surface, positions)
    if copies is None:
        group = enumerate_group(omega, cap)
        if not group.finite:
            raise GroupNotClosedError(f"group at omega = {omega:.6g} reached the cap {cap}; pass a copy count for strip mode")
        return assemble(piece, group, weld_tol)
    group = strip_elements(omega, copies)
    mesh = assemble(piece, group, weld_tol, strip=True)
    mesh.diagnostics["closed"] = False
    mesh.diagnostics["group_closes"] = enumerate_group(omega, cap).finite
    return mesh


def _coincidences(vertices, tol: float) -> int:
    """Pairs of distinct welded vertices closer than ``tol`` (self-intersections of the immersion)."""
    if len(vertices) < 2:
        return 0
    return len(cKDTree(vertices).query_pairs(tol))


def topology(mesh: AnnulusMesh) -> dict:
    """Euler characteristic, boundary loops and orientation consistency."""
    tris = mesh.triangles
    V = mesh.n_vertices
    if len(tris) == 0:
        return {"euler_characteristic": V, "boundary_loops": 0, "boundary_edges": 0, "nonmanifold_edges": 0, "orientation_consistent": True, "boundary_sphere_defect": 0.0}
    directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    edges, counts = np.unique(undirected, axis=0, return_counts=True)
    E, F = len(edges), len(tris)
    # consistent orientation: each interior edge is traversed once each way
    uniq_directed = np.unique(directed, axis=0)
    consistent = len(uniq_directed) == len(directed)
    boundary = edges[counts == 1]
    used = np.unique(tris)
    loops = 0
    defect = 0.0
    if len(boundary):
        verts = np.unique(boundary)
        remap = np.searchsorted(verts, boundary)
        adj = coo_matrix((np.ones(len(remap)), (remap[:, 0], remap[:, 1])), shape=(len(verts), len(verts)))
        loops = int(connected_components(adj, directed=False)[0])
        defect = float(np.max(np.abs(np.linalg.norm(mesh.vertices[verts], axis=-1) - 1.0)))
    return {
        "vertices": int(len(used)),
        "edges": int(E),
        "faces": int(F),
        "euler_characteristic": int(len(used) - E + F),
        "boundary_edges": int(len(boundary)),
        "boundary_loops": loops,
        "boundary_sphere_defect": defect,
        "nonmanifold_edges": int(np.sum(counts > 2)),
        "orientation_consistent": bool(consistent),
    }


# --------------------------------------------------------------------------
# export


_PLY_HEADER = (
    "ply\nformat binary_little_endian 1.0\ncomment {comment}\n"
    "element vertex {nv}\nproperty double x\nproperty double y\nproperty double z\n"
    "element face {nf}\nproperty list uchar int vertex_indices\nend_header\n"
)


def write_obj(mesh: AnnulusMesh, path, comment: str = "fbm-forge") -> Path:
    path = Path(path)
    lines = [f"# {comment}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write OBJ file: {exc.strerror}", str(path)) from exc
    return path


def read_obj(path):
    verts, faces = [], []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read OBJ file: {exc.strerror}", str(path)) from exc
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.asarray(verts, dtype=float).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def write_ply(mesh: AnnulusMesh, path, comment: str = "fbm-forge") -> Path:
    path = Path(path)
    nv, nf = mesh.n_vertices, mesh.n_triangles
    header = _PLY_HEADER.format(comment=comment, nv=nv, nf=nf).encode("ascii")
    faces = np.zeros(nf, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
            fh.write(faces.tobytes())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write PLY file: {exc.strerror}", str(path)) from exc
    return path


def read_ply(path):
    """Reader for the binary little-endian layout written by ``write_ply``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read PLY file: {exc.strerror}", str(path)) from exc
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise ValueError(f"{path}: only binary little-endian PLY is supported")
    counts = {ln.split()[1]: int(ln.split()[2]) for ln in header if ln.startswith("element")}
    nv, nf = counts.get("vertex", 0), counts.get("face", 0)
    verts = np.frombuffer(data, dtype="<f8", count=3 * nv, offset=end).reshape(nv, 3)
    off = end + 24 * nv
    rec = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
    faces = np.frombuffer(data, dtype=rec, count=nf, offset=off)
    if nf and np.any(faces["n"] != 3):
        raise ValueError(f"{path}: only triangle faces are supported")
    return verts.copy(), faces["idx"].astype(np.int64).reshape(-1, 3)


def export(mesh: AnnulusMesh, fmt: str, path, comment: str = "fbm-forge") -> Path:
    if fmt == "obj":
        return write_obj(mesh, path, comment)
    if fmt == "ply":
        return write_ply(mesh, path, comment)
    raise ValueError(f"unknown mesh format {fmt!r}; expected 'obj' or 'ply'")
