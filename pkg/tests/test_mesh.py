"""Mesh construction, edge tables, point location, structured generation, file I/O."""
import itertools

import numpy as np
import pytest

from stgp import (Mesh, MeshFormatError, PointLocator, build_edge_table,
                  generate_structured_mesh, locate_point, read_mesh, write_mesh)
from stgp.mesh import LOCAL_EDGE_VERTICES

from conftest import jittered_mesh


def brute_force_edges(mesh):
    """Oracle: distinct node pairs over all element edges, lexicographically sorted."""
    pairs = set()
    for elem in mesh.elements:
        for a, b in itertools.combinations(elem.tolist(), 2):
            pairs.add((min(a, b), max(a, b)))
    return sorted(pairs)


class TestMeshValidation:
    def test_rejects_degenerate_element(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])  # collinear
        with pytest.raises(ValueError, match="element 0"):
            Mesh(dim=2, nodes=nodes, elements=np.array([[0, 1, 2]]), mu=np.array([1.0]))

    def test_rejects_bad_node_index(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="invalid node index"):
            Mesh(dim=2, nodes=nodes, elements=np.array([[0, 1, 9]]), mu=np.array([1.0]))

    def test_rejects_nonpositive_mu(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="mu of element 0"):
            Mesh(dim=2, nodes=nodes, elements=np.array([[0, 1, 2]]), mu=np.array([0.0]))

    def test_rejects_nonfinite_nodes(self):
        nodes = np.array([[0.0, 0.0], [np.inf, 0.0], [0.0, 1.0]])
        with pytest.raises(ValueError, match="finite"):
            Mesh(dim=2, nodes=nodes, elements=np.array([[0, 1, 2]]), mu=np.array([1.0]))

    def test_arrays_are_immutable(self, reference_triangle):
        with pytest.raises(ValueError):
            reference_triangle.nodes[0, 0] = 5.0


class TestEdgeTable:
    def test_single_reference_triangle(self, reference_triangle):
        table = build_edge_table(reference_triangle)
        assert table.edges.tolist() == [[0, 1], [0, 2], [1, 2]]
        assert table.edge_count == 3

    def test_two_triangles_share_one_edge(self, two_triangle_square):
        table = build_edge_table(two_triangle_square)
        assert table.edge_count == 5  # 6 local edges, 1 shared
        shared = table.edges.tolist().index([0, 2])
        assert shared in table.element_edges[0]
        assert shared in table.element_edges[1]

    def test_structured_2x2_edge_count_matches_brute_force(self):
        mesh = generate_structured_mesh("unit-square-tri", 2, 1.0)
        table = build_edge_table(mesh)
        oracle = brute_force_edges(mesh)
        assert table.edges.tolist() == [list(p) for p in oracle]
        assert table.edge_count == 16

    @pytest.mark.parametrize("kind,n", [("unit-square-tri", 3), ("unit-cube-tet", 2)])
    def test_edge_count_matches_brute_force(self, kind, n):
        mesh = generate_structured_mesh(kind, n, 1.0)
        table = build_edge_table(mesh)
        assert table.edges.tolist() == [list(p) for p in brute_force_edges(mesh)]

    def test_deterministic_rebuild(self, jitter_rng):
        mesh = jittered_mesh("unit-square-tri", 3, jitter_rng)
        t1 = build_edge_table(mesh)
        t2 = build_edge_table(mesh)
        assert np.array_equal(t1.edges, t2.edges)
        assert np.array_equal(t1.element_edges, t2.element_edges)
        assert np.array_equal(t1.element_signs, t2.element_signs)

    @pytest.mark.parametrize("kind,n", [("unit-square-tri", 3), ("unit-cube-tet", 1)])
    def test_orientation_consistency(self, kind, n):
        # sign * local direction must always reproduce the stored low->high edge
        mesh = generate_structured_mesh(kind, n, 1.0)
        table = build_edge_table(mesh)
        pairs = LOCAL_EDGE_VERTICES[mesh.dim]
        for e, elem in enumerate(mesh.elements):
            for k, (p, q) in enumerate(pairs):
                a, b = int(elem[p]), int(elem[q])
                if table.element_signs[e, k] < 0:
                    a, b = b, a
                assert [a, b] == table.edges[table.element_edges[e, k]].tolist()

    def test_shared_edges_map_to_same_index(self, jitter_rng):
        mesh = jittered_mesh("unit-cube-tet", 1, jitter_rng)
        table = build_edge_table(mesh)
        seen = {}
        pairs = LOCAL_EDGE_VERTICES[3]
        for e, elem in enumerate(mesh.elements):
            for k, (p, q) in enumerate(pairs):
                key = tuple(sorted((int(elem[p]), int(elem[q]))))
                idx = int(table.element_edges[e, k])
                assert seen.setdefault(key, idx) == idx


class TestPointLocation:
    def test_interior_point(self):
        mesh = generate_structured_mesh("unit-square-tri", 2, 1.0)
        loc = PointLocator(mesh).locate(np.array([0.25, 0.25]))
        assert loc.status == "inside"
        assert abs(loc.barycentric.sum() - 1.0) < 1e-12

    def test_point_on_shared_edge_takes_lowest_element(self, two_triangle_square):
        locator = PointLocator(two_triangle_square)
        loc = locator.locate(np.array([0.5, 0.5]))  # on the diagonal, inside both
        assert loc.status == "inside"
        assert loc.element == 0

    def test_far_outside(self):
        mesh = generate_structured_mesh("unit-square-tri", 2, 1.0)
        loc = PointLocator(mesh).locate(np.array([2.0, 2.0]))
        assert loc.status == "outside"
        assert 0 <= loc.element < mesh.n_elements  # nearest element recorded

    def test_snap_just_outside_boundary(self):
        mesh = generate_structured_mesh("unit-square-tri", 2, 1.0)
        locator = PointLocator(mesh)
        loc = locator.locate(np.array([0.5, -1e-12]), tol=0.0)
        assert loc.status == "snapped"
        assert loc.barycentric.min() >= 0.0
        assert abs(loc.barycentric.sum() - 1.0) < 1e-12

    def test_every_centroid_locates_to_its_element(self, jitter_rng):
        mesh = jittered_mesh("unit-square-tri", 4, jitter_rng)
        locator = PointLocator(mesh)
        centroids = mesh.nodes[mesh.elements].mean(axis=1)
        for e, c in enumerate(centroids):
            loc = locator.locate(c)
            assert loc.status == "inside"
            assert loc.element == e

    def test_matches_linear_scan(self, jitter_rng):
        # bins are an acceleration only; answers must agree with brute force
        mesh = jittered_mesh("unit-square-tri", 3, jitter_rng)
        locator = PointLocator(mesh)
        origins, inv_edges, _ = (locator._origins, locator._inv_edges, locator._grads)
        for p in jitter_rng.uniform(0.0, 1.0, size=(50, 2)):
            loc = locator.locate(p)
            hits = []
            for e in range(mesh.n_elements):
                lam1 = inv_edges[e] @ (p - origins[e])
                lam = np.concatenate([[1 - lam1.sum()], lam1])
                if lam.min() >= -1e-12:
                    hits.append(e)
            if hits:
                assert loc.status == "inside"
                assert loc.element == min(hits)

    def test_random_barycentric_points_are_inside(self, jitter_rng):
        mesh = jittered_mesh("unit-cube-tet", 1, jitter_rng)
        locator = PointLocator(mesh)
        verts = mesh.nodes[mesh.elements]
        for _ in range(30):
            e = int(jitter_rng.integers(mesh.n_elements))
            lam = jitter_rng.dirichlet(np.ones(4))
            p = lam @ verts[e]
            loc = locator.locate(p)
            assert loc.status == "inside"
            assert abs(loc.barycentric.sum() - 1.0) < 1e-12

    def test_rejects_negative_tol(self):
        mesh = generate_structured_mesh("unit-square-tri", 1, 1.0)
        with pytest.raises(ValueError):
            PointLocator(mesh).locate(np.array([0.5, 0.5]), tol=-1.0)

    def test_locate_point_rejects_foreign_accel(self):
        m1 = generate_structured_mesh("unit-square-tri", 1, 1.0)
        m2 = generate_structured_mesh("unit-square-tri", 2, 1.0)
        with pytest.raises(ValueError, match="different mesh"):
            locate_point(m2, PointLocator(m1), np.array([0.5, 0.5]))


class TestStructuredMeshes:
    def test_minimal_square_split(self):
        mesh = generate_structured_mesh("unit-square-tri", 1, 1.0)
        assert mesh.n_elements == 2
        assert mesh.n_nodes == 4

    def test_square_counts_formula(self):
        mesh = generate_structured_mesh("unit-square-tri", 2, 1.0)
        assert mesh.n_elements == 8
        assert mesh.n_nodes == 9

    def test_cube_kuhn_split(self):
        mesh = generate_structured_mesh("unit-cube-tet", 1, 1.0)
        assert mesh.n_elements == 6
        assert mesh.n_nodes == 8

    @pytest.mark.parametrize("n", [2, 3])
    def test_cube_counts_formula(self, n):
        mesh = generate_structured_mesh("unit-cube-tet", n, 1.0)
        assert mesh.n_elements == 6 * n**3
        assert mesh.n_nodes == (n + 1) ** 3

    def test_volumes_tile_the_domain(self):
        from stgp.mesh import signed_volumes
        for kind in ("unit-square-tri", "unit-cube-tet"):
            mesh = generate_structured_mesh(kind, 2, 1.0)
            assert abs(np.abs(signed_volumes(mesh)).sum() - 1.0) < 1e-12

    def test_rejects_zero_subdivisions(self):
        with pytest.raises(ValueError):
            generate_structured_mesh("unit-square-tri", 0, 1.0)

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            generate_structured_mesh("hex-grid", 1, 1.0)


CANONICAL_TWO_TRIANGLES = """stgp-mesh 1
dim 2
nodes 4
0 0.0 0.0
1 1.0 0.0
2 1.0 1.0
3 0.0 1.0
elements 2
0 0 1 2
1 0 2 3
mu 2
0 1.0
1 2.5
"""


class TestMeshIO:
    def test_read_canonical_file(self):
        mesh = read_mesh(CANONICAL_TWO_TRIANGLES)
        assert mesh.n_nodes == 4
        assert mesh.n_elements == 2
        assert mesh.mu.tolist() == [1.0, 2.5]

    def test_write_read_round_trip_is_byte_identical(self):
        mesh = read_mesh(CANONICAL_TWO_TRIANGLES)
        assert write_mesh(mesh) == CANONICAL_TWO_TRIANGLES

    def test_read_write_identity_on_mesh_values(self, jitter_rng):
        mesh = jittered_mesh("unit-cube-tet", 1, jitter_rng)
        back = read_mesh(write_mesh(mesh))
        assert np.array_equal(back.nodes, mesh.nodes)
        assert np.array_equal(back.elements, mesh.elements)
        assert np.array_equal(back.mu, mesh.mu)

    def test_out_of_range_node_index_names_line(self):
        text = CANONICAL_TWO_TRIANGLES.replace("0 0 1 2", "0 0 1 99")
        with pytest.raises(MeshFormatError, match="line 9") as err:
            read_mesh(text)
        assert "node 99" in str(err.value)
        assert err.value.line == 9

    def test_missing_mu_entry_rejected(self):
        text = CANONICAL_TWO_TRIANGLES.replace("mu 2", "mu 1").replace("1 2.5\n", "")
        with pytest.raises(MeshFormatError, match="mu count"):
            read_mesh(text)

    def test_duplicate_mu_entry_rejected(self):
        text = CANONICAL_TWO_TRIANGLES.replace("1 2.5", "0 2.5")
        with pytest.raises(MeshFormatError, match="duplicate mu"):
            read_mesh(text)

    def test_malformed_header_names_line(self):
        with pytest.raises(MeshFormatError, match="line 1"):
            read_mesh("stgp-mesh 2\ndim 2\n")

    def test_comments_and_blank_lines_ignored(self):
        text = "# generated\n\n" + CANONICAL_TWO_TRIANGLES.replace("dim 2", "dim 2  # planar")
        mesh = read_mesh(text)
        assert mesh.dim == 2

    def test_3d_round_trip(self):
        mesh = generate_structured_mesh("unit-cube-tet", 1, 3.0)
        text = write_mesh(mesh)
        assert write_mesh(read_mesh(text)) == text
