"""Simplicial meshes: edge enumeration, point location, structured generation, file I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Local edge enumeration of a simplex, as (vertex position, vertex position)
# pairs in lexicographic order. All modules share this ordering.
LOCAL_EDGE_VERTICES = {
    2: ((0, 1), (0, 2), (1, 2)),
    3: ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)),
}

DEGENERACY_REL_TOL = 1e-14
SNAP_REL_TOL = 1e-8


class MeshFormatError(ValueError):
    """Malformed stgp-mesh / stgp-field text. Carries the offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh (triangles in 2D, tetrahedra in 3D) with per-element permeability.

    Immutable after construction; arrays are locked read-only so instances can be
    shared freely between threads.
    """

    dim: int
    nodes: np.ndarray      # (n_nodes, dim) float64, meters
    elements: np.ndarray   # (n_elements, dim+1) int64 node indices
    mu: np.ndarray         # (n_elements,) float64, H/m, > 0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        nodes = np.ascontiguousarray(np.asarray(self.nodes, dtype=np.float64))
        elements = np.ascontiguousarray(np.asarray(self.elements, dtype=np.int64))
        mu = np.ascontiguousarray(np.asarray(self.mu, dtype=np.float64))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "mu", mu)

        if nodes.ndim != 2 or nodes.shape[1] != self.dim:
            raise ValueError(f"nodes must have shape (n, {self.dim})")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("node coordinates must be finite")
        if elements.ndim != 2 or elements.shape[1] != self.dim + 1:
            raise ValueError(f"elements must have shape (n, {self.dim + 1})")
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            bad = int(np.argmax(np.any((elements < 0) | (elements >= len(nodes)), axis=1)))
            raise ValueError(f"element {bad} references an invalid node index")
        if mu.shape != (len(elements),):
            raise ValueError("mu must hold exactly one value per element")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0.0):
            bad = int(np.argmax(~(np.isfinite(mu) & (mu > 0.0))))
            raise ValueError(f"mu of element {bad} must be a strictly positive finite value")

        vols = signed_volumes(self)
        scale = float(np.linalg.norm(nodes.max(axis=0) - nodes.min(axis=0))) if len(nodes) else 0.0
        limit = DEGENERACY_REL_TOL * scale**self.dim
        if np.any(np.abs(vols) <= limit):
            bad = int(np.argmax(np.abs(vols) <= limit))
            raise ValueError(f"element {bad} is degenerate (|volume| <= {limit:g})")

        for arr in (nodes, elements, mu):
            arr.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


def signed_volumes(mesh: Mesh) -> np.ndarray:
    """Signed measure of every element (area in 2D, volume in 3D)."""
    verts = mesh.nodes[mesh.elements]              # (ne, dim+1, dim)
    edges = verts[:, 1:, :] - verts[:, :1, :]      # (ne, dim, dim)
    det = np.linalg.det(edges)
    return det / math.factorial(mesh.dim)


def barycentric_transforms(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-element affine maps for barycentric coordinates.

    Returns (origins, inv_edges, grads):
      origins   (ne, d)       first vertex of each element
      inv_edges (ne, d, d)    rows give lambda_1..lambda_d as inv_edges @ (x - origin)
      grads     (ne, d+1, d)  constant gradient of every barycentric coordinate
    """
    verts = mesh.nodes[mesh.elements]
    origins = verts[:, 0, :]
    edges = np.swapaxes(verts[:, 1:, :] - verts[:, :1, :], 1, 2)  # columns = edge vectors
    inv_edges = np.linalg.inv(edges)
    grads = np.empty((mesh.n_elements, mesh.dim + 1, mesh.dim))
    grads[:, 1:, :] = inv_edges
    grads[:, 0, :] = -inv_edges.sum(axis=1)
    return origins, inv_edges, grads


@dataclass(frozen=True)
class EdgeTable:
    """Globally oriented edge enumeration of a mesh.

    Edges are stored as (node_a, node_b) with node_a < node_b, sorted
    lexicographically, so two builds of the same mesh are identical.
    element_signs[e, k] is +1 iff the k-th local edge of element e runs from the
    lower to the higher global node index.
    """

    edges: np.ndarray          # (M, 2) int64, node_a < node_b, lexicographic
    element_edges: np.ndarray  # (ne, n_local) int64 global edge index
    element_signs: np.ndarray  # (ne, n_local) int8 in {+1, -1}

    def __post_init__(self):
        for name in ("edges", "element_edges", "element_signs"):
            arr = np.ascontiguousarray(getattr(self, name))
            object.__setattr__(self, name, arr)
            arr.flags.writeable = False

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def build_edge_table(mesh: Mesh) -> EdgeTable:
    """Enumerate mesh edges with the ascending-node-index orientation convention."""
    pairs = LOCAL_EDGE_VERTICES[mesh.dim]
    elems = mesh.elements
    n_local = len(pairs)

    a = np.stack([elems[:, p] for p, q in pairs], axis=1)  # (ne, n_local)
    b = np.stack([elems[:, q] for p, q in pairs], axis=1)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    signs = np.where(a < b, 1, -1).astype(np.int8)

    all_pairs = np.stack([lo.ravel(), hi.ravel()], axis=1)
    edges, inverse = np.unique(all_pairs, axis=0, return_inverse=True)
    element_edges = inverse.reshape(lo.shape).astype(np.int64)
    return EdgeTable(edges=edges, element_edges=element_edges, element_signs=signs)


@dataclass(frozen=True)
class LocationResult:
    element: int
    barycentric: np.ndarray  # (dim+1,), sums to 1
    status: str              # 'inside' | 'snapped' | 'outside'


class PointLocator:
    """Uniform spatial bins over the mesh bounding box for O(1) expected point location.

    Bin size follows the mean element diameter. Pure reads only after
    construction, so a single locator may serve concurrent queries.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self._origins, self._inv_edges, self._grads = barycentric_transforms(mesh)
        self._grad_norms = np.linalg.norm(self._grads, axis=2)  # (ne, d+1)
        self._lo, self._hi = mesh.bounding_box()
        self._snap_dist = SNAP_REL_TOL * mesh.bbox_diagonal()

        verts = mesh.nodes[mesh.elements]
        diams = np.zeros(mesh.n_elements)
        for i in range(mesh.dim + 1):
            for j in range(i + 1, mesh.dim + 1):
                diams = np.maximum(diams, np.linalg.norm(verts[:, i] - verts[:, j], axis=1))
        mean_diam = float(diams.mean())
        extent = self._hi - self._lo
        counts = np.maximum(1, np.minimum(128, np.floor(extent / max(mean_diam, 1e-300)))).astype(int)
        self._counts = counts
        self._size = np.where(extent > 0, extent / counts, 1.0)

        bins: dict[tuple, list[int]] = {}
        elo = verts.min(axis=1)
        ehi = verts.max(axis=1)
        ilo = self._bin_index(elo)
        ihi = self._bin_index(ehi)
        for e in range(mesh.n_elements):
            ranges = [range(ilo[e, k], ihi[e, k] + 1) for k in range(mesh.dim)]
            if mesh.dim == 2:
                for i in ranges[0]:
                    for j in ranges[1]:
                        bins.setdefault((i, j), []).append(e)
            else:
                for i in ranges[0]:
                    for j in ranges[1]:
                        for k in ranges[2]:
                            bins.setdefault((i, j, k), []).append(e)
        self._bins = bins

    def _bin_index(self, x: np.ndarray) -> np.ndarray:
        idx = np.floor((x - self._lo) / self._size).astype(int)
        return np.clip(idx, 0, self._counts - 1)

    def barycentric(self, element: int, x: np.ndarray) -> np.ndarray:
        lam = np.empty(self.mesh.dim + 1)
        lam[1:] = self._inv_edges[element] @ (np.asarray(x, dtype=float) - self._origins[element])
        lam[0] = 1.0 - lam[1:].sum()
        return lam

    def element_gradients(self, element: int) -> np.ndarray:
        """Barycentric-coordinate gradients of one element, (dim+1, dim)."""
        return self._grads[element]

    def _violation_distance(self, element: int, lam: np.ndarray) -> float:
        # Distance estimate from barycentric violations: each negative coordinate
        # sits -lam/|grad lam| below its opposite face plane.
        neg = lam < 0.0
        if not np.any(neg):
            return 0.0
        return float(np.max(-lam[neg] / self._grad_norms[element][neg]))

    def locate(self, x, tol: float = 1e-12) -> LocationResult:
        """Find the element containing x; ties resolve to the lowest element index."""
        if tol < 0:
            raise ValueError("tol must be >= 0")
        x = np.asarray(x, dtype=float)
        inside_box = np.all(x >= self._lo - self._snap_dist) and np.all(x <= self._hi + self._snap_dist)
        candidates: list[int] = []
        if inside_box:
            candidates = self._bins.get(tuple(self._bin_index(x)), [])

        best_e = -1
        best_dist = math.inf
        best_lam = None
        for e in candidates:
            lam = self.barycentric(e, x)
            if lam.min() >= -tol:
                return LocationResult(element=e, barycentric=lam, status="inside")
            dist = self._violation_distance(e, lam)
            if dist < best_dist:
                best_e, best_dist, best_lam = e, dist, lam

        if best_e < 0 or best_dist > self._snap_dist:
            # Exhaustive fallback: rare (genuinely outside points, or empty bin).
            lam1 = np.einsum("eij,ej->ei", self._inv_edges, x - self._origins)
            lam_all = np.concatenate([(1.0 - lam1.sum(axis=1))[:, None], lam1], axis=1)
            inside = lam_all.min(axis=1) >= -tol
            if np.any(inside):
                e = int(np.argmax(inside))
                return LocationResult(element=e, barycentric=lam_all[e], status="inside")
            viol = np.where(lam_all < 0, -lam_all / self._grad_norms, 0.0)
            dists = viol.max(axis=1)
            best_e = int(np.argmin(dists))
            best_dist = float(dists[best_e])
            best_lam = lam_all[best_e]

        if best_dist <= self._snap_dist:
            lam = np.maximum(best_lam, 0.0)
            lam /= lam.sum()
            return LocationResult(element=best_e, barycentric=lam, status="snapped")
        return LocationResult(element=best_e, barycentric=best_lam, status="outside")


def locate_point(mesh: Mesh, accel: PointLocator, x, tol: float = 1e-12) -> LocationResult:
    """Locate x in the mesh using a prebuilt PointLocator."""
    if accel.mesh is not mesh:
        raise ValueError("accel was built for a different mesh")
    return accel.locate(x, tol=tol)


def generate_structured_mesh(kind: str, n: int, mu: float) -> Mesh:
    """Structured unit-domain meshes: 'unit-square-tri' or 'unit-cube-tet' with n subdivisions."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "unit-square-tri":
        side = n + 1
        grid = np.linspace(0.0, 1.0, side)
        nodes = np.array([(x, y) for x in grid for y in grid])
        nid = lambda i, j: i * side + j
        tris = []
        for i in range(n):
            for j in range(n):
                v00, v10 = nid(i, j), nid(i + 1, j)
                v01, v11 = nid(i, j + 1), nid(i + 1, j + 1)
                tris.append((v00, v10, v11))
                tris.append((v00, v11, v01))
        elements = np.array(tris, dtype=np.int64)
        return Mesh(dim=2, nodes=nodes, elements=elements, mu=np.full(len(elements), float(mu)))
    if kind == "unit-cube-tet":
        side = n + 1
        grid = np.linspace(0.0, 1.0, side)
        nodes = np.array([(x, y, z) for x in grid for y in grid for z in grid])
        nid = lambda i, j, k: (i * side + j) * side + k
        # Kuhn split: six tetrahedra per cell along monotone vertex chains,
        # so neighbouring cells match on shared faces.
        perms = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
        tets = []
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    base = np.array([i, j, k])
                    for perm in perms:
                        corner = base.copy()
                        chain = [nid(*corner)]
                        for axis in perm:
                            corner[axis] += 1
                            chain.append(nid(*corner))
                        tets.append(tuple(chain))
        elements = np.array(tets, dtype=np.int64)
        return Mesh(dim=3, nodes=nodes, elements=elements, mu=np.full(len(elements), float(mu)))
    raise ValueError(f"unknown mesh kind {kind!r}")


# ---------------------------------------------------------------------------
# stgp-mesh text format


def _content_lines(text: str):
    """Yield (line_number, tokens) for non-empty lines, '#' starting a comment."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if stripped:
            yield lineno, stripped.split()


class _LineReader:
    def __init__(self, text: str):
        self._lines = list(_content_lines(text))
        self._pos = 0
        self.last_line = 0

    def next(self, what: str):
        if self._pos >= len(self._lines):
            raise MeshFormatError(self.last_line + 1, f"unexpected end of file, expected {what}")
        lineno, tokens = self._lines[self._pos]
        self._pos += 1
        self.last_line = lineno
        return lineno, tokens

    def expect_done(self):
        if self._pos < len(self._lines):
            lineno, tokens = self._lines[self._pos]
            raise MeshFormatError(lineno, f"unexpected trailing content: {' '.join(tokens)}")


def _parse_int(token: str, lineno: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise MeshFormatError(lineno, f"expected integer {what}, got {token!r}") from None


def _parse_float(token: str, lineno: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise MeshFormatError(lineno, f"expected number {what}, got {token!r}") from None


def read_mesh(text: str) -> Mesh:
    """Parse the stgp-mesh text format."""
    rd = _LineReader(text)

    lineno, tokens = rd.next("header 'stgp-mesh 1'")
    if tokens != ["stgp-mesh", "1"]:
        raise MeshFormatError(lineno, "expected header 'stgp-mesh 1'")

    lineno, tokens = rd.next("'dim <2|3>'")
    if len(tokens) != 2 or tokens[0] != "dim":
        raise MeshFormatError(lineno, "expected 'dim <2|3>'")
    dim = _parse_int(tokens[1], lineno, "dimension")
    if dim not in (2, 3):
        raise MeshFormatError(lineno, f"dim must be 2 or 3, got {dim}")

    lineno, tokens = rd.next("'nodes <count>'")
    if len(tokens) != 2 or tokens[0] != "nodes":
        raise MeshFormatError(lineno, "expected 'nodes <count>'")
    n_nodes = _parse_int(tokens[1], lineno, "node count")
    nodes = np.zeros((n_nodes, dim))
    for i in range(n_nodes):
        lineno, tokens = rd.next(f"node line {i}")
        if len(tokens) != 1 + dim:
            raise MeshFormatError(lineno, f"expected '<id> {'<x> <y>' if dim == 2 else '<x> <y> <z>'}'")
        nid = _parse_int(tokens[0], lineno, "node id")
        if nid != i:
            raise MeshFormatError(lineno, f"node ids must be 0-based and consecutive, expected {i} got {nid}")
        nodes[i] = [_parse_float(t, lineno, "coordinate") for t in tokens[1:]]

    lineno, tokens = rd.next("'elements <count>'")
    if len(tokens) != 2 or tokens[0] != "elements":
        raise MeshFormatError(lineno, "expected 'elements <count>'")
    n_elems = _parse_int(tokens[1], lineno, "element count")
    elements = np.zeros((n_elems, dim + 1), dtype=np.int64)
    for i in range(n_elems):
        lineno, tokens = rd.next(f"element line {i}")
        if len(tokens) != 2 + dim:
            raise MeshFormatError(lineno, f"expected '<id> ' plus {dim + 1} node indices")
        eid = _parse_int(tokens[0], lineno, "element id")
        if eid != i:
            raise MeshFormatError(lineno, f"element ids must be 0-based and consecutive, expected {i} got {eid}")
        conn = [_parse_int(t, lineno, "node index") for t in tokens[1:]]
        for c in conn:
            if c < 0 or c >= n_nodes:
                raise MeshFormatError(lineno, f"element {i} references node {c}, valid range is 0..{n_nodes - 1}")
        elements[i] = conn

    lineno, tokens = rd.next("'mu <count>'")
    if len(tokens) != 2 or tokens[0] != "mu":
        raise MeshFormatError(lineno, "expected 'mu <count>'")
    n_mu = _parse_int(tokens[1], lineno, "mu count")
    if n_mu != n_elems:
        raise MeshFormatError(lineno, f"mu count {n_mu} does not match element count {n_elems}")
    mu = np.full(n_elems, np.nan)
    for i in range(n_mu):
        lineno, tokens = rd.next(f"mu line {i}")
        if len(tokens) != 2:
            raise MeshFormatError(lineno, "expected '<element-id> <value>'")
        eid = _parse_int(tokens[0], lineno, "element id")
        if eid < 0 or eid >= n_elems:
            raise MeshFormatError(lineno, f"mu entry names element {eid}, valid range is 0..{n_elems - 1}")
        if not np.isnan(mu[eid]):
            raise MeshFormatError(lineno, f"duplicate mu entry for element {eid}")
        mu[eid] = _parse_float(tokens[1], lineno, "mu value")
    rd.expect_done()
    if np.any(np.isnan(mu)):
        missing = int(np.argmax(np.isnan(mu)))
        raise MeshFormatError(rd.last_line, f"missing mu entry for element {missing}")

    try:
        return Mesh(dim=dim, nodes=nodes, elements=elements, mu=mu)
    except ValueError as exc:
        raise MeshFormatError(rd.last_line, str(exc)) from exc


def write_mesh(mesh: Mesh) -> str:
    """Serialize a mesh to the canonical stgp-mesh text format."""
    out = ["stgp-mesh 1", f"dim {mesh.dim}", f"nodes {mesh.n_nodes}"]
    for i, node in enumerate(mesh.nodes):
        out.append(f"{i} " + " ".join(repr(float(c)) for c in node))
    out.append(f"elements {mesh.n_elements}")
    for i, elem in enumerate(mesh.elements):
        out.append(f"{i} " + " ".join(str(int(v)) for v in elem))
    out.append(f"mu {mesh.n_elements}")
    for i, value in enumerate(mesh.mu):
        out.append(f"{i} {repr(float(value))}")
    return "\n".join(out) + "\n"
