import numpy as np
import pytest

from stgp import Mesh, TemporalGrid, build_edge_table, generate_structured_mesh


@pytest.fixture
def reference_triangle():
    """Single reference triangle (0,0), (1,0), (0,1) with mu = 1."""
    return Mesh(dim=2,
                nodes=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                elements=np.array([[0, 1, 2]]),
                mu=np.array([1.0]))


@pytest.fixture
def two_triangle_square():
    """Unit square split along the diagonal, distinct mu per triangle."""
    return Mesh(dim=2,
                nodes=np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
                elements=np.array([[0, 1, 2], [0, 2, 3]]),
                mu=np.array([1.0, 1.0]))


@pytest.fixture
def square_mesh_2():
    return generate_structured_mesh("unit-square-tri", 2, 1.0)


def jittered_mesh(kind: str, n: int, rng: np.random.Generator, mu_range=(0.5, 2.0)) -> Mesh:
    """Structured mesh with perturbed interior nodes and random per-element mu."""
    mesh = generate_structured_mesh(kind, n, 1.0)
    nodes = mesh.nodes.copy()
    interior = np.all((nodes > 1e-12) & (nodes < 1 - 1e-12), axis=1)
    nodes[interior] += rng.uniform(-0.15 / n, 0.15 / n, size=nodes[interior].shape)
    mu = rng.uniform(*mu_range, size=mesh.n_elements)
    return Mesh(dim=mesh.dim, nodes=nodes, elements=mesh.elements, mu=mu)


def random_grid(rng: np.random.Generator, n: int, start: float = 0.0) -> TemporalGrid:
    return TemporalGrid(start + np.cumsum(rng.uniform(0.2, 1.0, size=n)))


@pytest.fixture
def jitter_rng():
    return np.random.default_rng(421)
