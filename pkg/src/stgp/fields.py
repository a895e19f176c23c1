"""Source-field evaluators: analytic recipes, discrete mesh-backed fields, field file I/O."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import TemporalGrid, bracket, edge_circulation_rule, whitney_local
from .mesh import EdgeTable, Mesh, MeshFormatError, PointLocator, barycentric_transforms

OUTSIDE_POLICIES = ("zero", "strict")


class PointOutsideDomainError(ValueError):
    """A query point fell outside the source mesh under the strict policy."""

    def __init__(self, x):
        super().__init__(f"point {tuple(float(c) for c in x)} is outside the source mesh")
        self.point = np.asarray(x, dtype=float)


class SourceField:
    """Evaluator contract for the field being projected.

    Implementations are immutable and safe for concurrent evaluation.
    """

    dim: int

    def time_span(self) -> tuple[float, float] | None:
        """Declared (t_min, t_max), or None for fields defined for all times."""
        return None

    def interior_time_nodes(self) -> np.ndarray:
        """Times where the field is only piecewise smooth; integration splits there."""
        return np.empty(0)

    def eval(self, x, t: float, policy: str = "zero") -> np.ndarray:
        values, _ = self.eval_time_batch(x, np.array([t]), policy=policy)
        return values[0]

    def eval_time_batch(self, x, ts: np.ndarray, policy: str = "zero") -> tuple[np.ndarray, bool]:
        """Evaluate at one spatial point for many times.

        Returns (values (T, dim), inside_flag). inside_flag is False when the
        point missed the source domain and the zero policy filled in zeros.
        """
        raise NotImplementedError

    def _check_times(self, ts: np.ndarray) -> None:
        span = self.time_span()
        if span is None:
            return
        t0, t1 = span
        slack = 1e-12 * max(abs(t0), abs(t1), t1 - t0)
        if np.any(ts < t0 - slack) or np.any(ts > t1 + slack):
            raise ValueError(f"time outside the source span [{t0}, {t1}]")


class AnalyticField(SourceField):
    """Closed-form field recipes used as manufactured sources.

    Supported kinds:
      constant           params: vector
      linear             params: matrix (dim x dim), offset        H = matrix @ x + offset
      poly-time          params: vector, coeffs                    H = vector * sum_k coeffs[k] t^k
      sinusoid           params: amplitude, wavenumber (2D)        H = amp * (sin(w*y), sin(w*x))
      rotating-multipole params: pole_pairs, amplitude, omega,
                         center, modulation (2D)

    The rotating multipole is a rigidly rotating, radially directed pole
    pattern with an optional once-per-revolution amplitude modulation:

        H(x, t) = amp * (1 + m*cos(omega*t)) * cos(p*(theta(x) - omega*t)) * r_hat(x)

    omega is the mechanical angular speed of the pattern, so a fixed probe sees
    p full field oscillations and 2p pulses of |H|^2 per revolution, and for
    m > 0 the probe series |H|^2 has fundamental period 2*pi/omega.
    """

    def __init__(self, kind: str, dim: int = 2, **params):
        self.kind = kind
        self.dim = dim
        self.params = dict(params)
        getattr(self, "_setup_" + kind.replace("-", "_"), self._unknown)()

    def _unknown(self):
        raise ValueError(f"unknown analytic field kind {self.kind!r}")

    def _setup_constant(self):
        self._vector = np.asarray(self.params["vector"], dtype=float)
        if self._vector.shape != (self.dim,):
            raise ValueError("constant field needs a vector of length dim")

    def _setup_linear(self):
        self._matrix = np.asarray(self.params["matrix"], dtype=float).reshape(self.dim, self.dim)
        self._offset = np.asarray(self.params.get("offset", np.zeros(self.dim)), dtype=float)

    def _setup_poly_time(self):
        self._vector = np.asarray(self.params["vector"], dtype=float)
        self._coeffs = np.asarray(self.params["coeffs"], dtype=float)
        if self._vector.shape != (self.dim,) or self._coeffs.ndim != 1:
            raise ValueError("poly-time field needs a direction vector and 1-D coefficients")

    def _setup_sinusoid(self):
        if self.dim != 2:
            raise ValueError("sinusoid field is 2-D only")
        self._amplitude = float(self.params.get("amplitude", 1.0))
        self._wavenumber = float(self.params["wavenumber"])

    def _setup_rotating_multipole(self):
        if self.dim != 2:
            raise ValueError("rotating-multipole field is 2-D only")
        self._pole_pairs = int(self.params["pole_pairs"])
        self._amplitude = float(self.params.get("amplitude", 1.0))
        self._omega = float(self.params["omega"])
        self._center = np.asarray(self.params.get("center", np.zeros(2)), dtype=float)
        self._modulation = float(self.params.get("modulation", 0.0))
        if self._pole_pairs < 1:
            raise ValueError("pole_pairs must be >= 1")

    def eval_time_batch(self, x, ts, policy: str = "zero") -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        ts = np.asarray(ts, dtype=float)
        n = len(ts)
        kind = self.kind
        if kind == "constant":
            return np.tile(self._vector, (n, 1)), True
        if kind == "linear":
            return np.tile(self._matrix @ x + self._offset, (n, 1)), True
        if kind == "poly-time":
            scale = np.polynomial.polynomial.polyval(ts, self._coeffs)
            return scale[:, None] * self._vector[None, :], True
        if kind == "sinusoid":
            w = self._wavenumber
            value = self._amplitude * np.array([np.sin(w * x[1]), np.sin(w * x[0])])
            return np.tile(value, (n, 1)), True
        rel = x - self._center
        theta = np.arctan2(rel[1], rel[0])
        radial = np.array([np.cos(theta), np.sin(theta)])
        pulse = np.cos(self._pole_pairs * (theta - self._omega * ts))
        envelope = self._amplitude * (1.0 + self._modulation * np.cos(self._omega * ts))
        return (envelope * pulse)[:, None] * radial[None, :], True


class DiscreteField(SourceField):
    """Field carried by edge-element DOFs on a source mesh, linear in time between steps."""

    def __init__(self, mesh: Mesh, edge_table: EdgeTable, grid: TemporalGrid, dofs: np.ndarray,
                 locator: PointLocator | None = None):
        dofs = np.ascontiguousarray(np.asarray(dofs, dtype=np.float64))
        if dofs.shape != (edge_table.edge_count, grid.n_steps):
            raise ValueError(
                f"dofs shape {dofs.shape} does not match {edge_table.edge_count} edges"
                f" x {grid.n_steps} time steps"
            )
        if not np.all(np.isfinite(dofs)):
            raise ValueError("dofs must be finite")
        dofs.flags.writeable = False
        self.mesh = mesh
        self.edge_table = edge_table
        self.grid = grid
        self.dofs = dofs
        self.dim = mesh.dim
        self.locator = locator if locator is not None else PointLocator(mesh)
        _, _, self._grads = barycentric_transforms(mesh)

    def time_span(self) -> tuple[float, float]:
        return self.grid.span

    def interior_time_nodes(self) -> np.ndarray:
        return self.grid.times

    def eval_time_batch(self, x, ts, policy: str = "zero") -> tuple[np.ndarray, bool]:
        if policy not in OUTSIDE_POLICIES:
            raise ValueError(f"unknown outside-domain policy {policy!r}")
        ts = np.asarray(ts, dtype=float)
        self._check_times(ts)
        loc = self.locator.locate(x)
        if loc.status == "outside":
            if policy == "strict":
                raise PointOutsideDomainError(x)
            return np.zeros((len(ts), self.dim)), False
        e = loc.element
        w = whitney_local(self.dim, self._grads[e], self.edge_table.element_signs[e],
                          loc.barycentric[None, :])[0]          # (n_local, dim)
        rows = self.dofs[self.edge_table.element_edges[e]]      # (n_local, N_s)
        k, theta = bracket(self.grid, ts)
        series = rows[:, k] * (1.0 - theta)[None, :] + rows[:, k + 1] * theta[None, :]
        return series.T @ w, True


def edge_circulations(mesh: Mesh, edge_table: EdgeTable, func) -> np.ndarray:
    """Line integrals of func(x) -> vector along every global edge (low to high node)."""
    s, w = edge_circulation_rule()
    a = mesh.nodes[edge_table.edges[:, 0]]
    b = mesh.nodes[edge_table.edges[:, 1]]
    tangents = b - a
    out = np.zeros(edge_table.edge_count)
    for si, wi in zip(s, w):
        points = a + si * tangents
        values = np.asarray([func(p) for p in points])
        out += wi * np.einsum("md,md->m", values, tangents)
    return out


def sample_field(field: SourceField, mesh: Mesh, edge_table: EdgeTable, grid: TemporalGrid) -> DiscreteField:
    """Interpolate a field onto edge-element DOFs: circulation samples at every time node."""
    dofs = np.zeros((edge_table.edge_count, grid.n_steps))
    for j, t in enumerate(grid.times):
        dofs[:, j] = edge_circulations(mesh, edge_table, lambda p: field.eval(p, float(t)))
    return DiscreteField(mesh, edge_table, grid, dofs)


# ---------------------------------------------------------------------------
# stgp-field text format


@dataclass(frozen=True)
class FieldFile:
    mesh_name: str
    times: np.ndarray
    dofs: np.ndarray  # (M, N)


def read_field(text: str) -> FieldFile:
    """Parse the stgp-field text format."""
    from .mesh import _LineReader, _parse_float, _parse_int

    rd = _LineReader(text)
    lineno, tokens = rd.next("header 'stgp-field 1'")
    if tokens != ["stgp-field", "1"]:
        raise MeshFormatError(lineno, "expected header 'stgp-field 1'")

    lineno, tokens = rd.next("'mesh <name>'")
    if len(tokens) != 2 or tokens[0] != "mesh":
        raise MeshFormatError(lineno, "expected 'mesh <mesh-file-name>'")
    mesh_name = tokens[1]

    lineno, tokens = rd.next("'edges <M> steps <N>'")
    if len(tokens) != 4 or tokens[0] != "edges" or tokens[2] != "steps":
        raise MeshFormatError(lineno, "expected 'edges <M> steps <N>'")
    m = _parse_int(tokens[1], lineno, "edge count")
    n = _parse_int(tokens[3], lineno, "step count")
    if m < 0 or n < 2:
        raise MeshFormatError(lineno, "need M >= 0 edges and N >= 2 steps")

    lineno, tokens = rd.next("'times ...'")
    if len(tokens) != 1 + n or tokens[0] != "times":
        raise MeshFormatError(lineno, f"expected 'times' followed by {n} values")
    times = np.array([_parse_float(tok, lineno, "time") for tok in tokens[1:]])
    if np.any(np.diff(times) <= 0.0):
        raise MeshFormatError(lineno, "time line must be strictly increasing")

    dofs = np.zeros((m, n))
    for i in range(m):
        lineno, tokens = rd.next(f"dof row {i}")
        if len(tokens) != n:
            raise MeshFormatError(lineno, f"dof row {i} must hold {n} values, got {len(tokens)}")
        dofs[i] = [_parse_float(tok, lineno, "dof value") for tok in tokens]
    rd.expect_done()
    return FieldFile(mesh_name=mesh_name, times=times, dofs=dofs)


def write_field(mesh_name: str, times: np.ndarray, dofs: np.ndarray) -> str:
    """Serialize times and DOFs to the canonical stgp-field text format."""
    times = np.asarray(times, dtype=float)
    dofs = np.asarray(dofs, dtype=float)
    if dofs.ndim != 2 or dofs.shape[1] != len(times):
        raise ValueError("dofs must be an M x N matrix matching the time line")
    out = [
        "stgp-field 1",
        f"mesh {mesh_name}",
        f"edges {dofs.shape[0]} steps {dofs.shape[1]}",
        "times " + " ".join(repr(float(t)) for t in times),
    ]
    for row in dofs:
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def bind_field(file: FieldFile, mesh: Mesh, edge_table: EdgeTable) -> DiscreteField:
    """Attach a parsed field file to its mesh, checking dimensions."""
    if file.dofs.shape[0] != edge_table.edge_count:
        raise ValueError(
            f"field file has {file.dofs.shape[0]} edge rows but the mesh has"
            f" {edge_table.edge_count} edges"
        )
    return DiscreteField(mesh, edge_table, TemporalGrid(file.times), file.dofs)
