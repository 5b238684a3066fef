import numpy as np
import pytest

from ringuda.errors import GraphError, NumericError, ShapeError
from ringuda.graph import build_ring, build_star, cosine_similarity


class TestBuildRing:
    def test_four_nodes_matches_modular_edge_set(self):
        ring = build_ring(4)
        undirected = {(0, 1), (1, 2), (2, 3), (3, 0)}
        expected = undirected | {(j, i) for i, j in undirected}
        assert ring.edges == expected
        assert len(ring.edge_src) == 8

    def test_two_nodes_single_neighbor_each(self):
        ring = build_ring(2)
        assert ring.edges == {(0, 1), (1, 0)}
        assert ring.neighbors == ((1,), (0,))

    def test_one_node_rejected(self):
        with pytest.raises(GraphError):
            build_ring(1)
        with pytest.raises(GraphError):
            build_ring(0)

    @pytest.mark.parametrize("n", range(2, 65))
    def test_degree_and_symmetry_invariants(self, n):
        ring = build_ring(n)
        expected_degree = 1 if n == 2 else 2
        for adj in ring.neighbors:
            assert len(adj) == expected_degree
            assert list(adj) == sorted(adj)
        edges = ring.edges
        assert all((j, i) in edges for i, j in edges)
        total_neighbors = sum(len(adj) for adj in ring.neighbors)
        assert total_neighbors == (2 if n == 2 else 2 * n)

    @pytest.mark.parametrize("n", [2, 3, 5, 8])
    def test_self_loop_option_adds_diagonal(self, n):
        ring = build_ring(n, self_loops=True)
        for i, adj in enumerate(ring.neighbors):
            assert i in adj
        assert all((j, i) in ring.edges for i, j in ring.edges)

    def test_edge_arrays_grouped_by_source(self):
        ring = build_ring(6)
        assert list(ring.edge_src) == sorted(ring.edge_src)
        for i in range(6):
            lo, hi = ring.edge_offsets[i], ring.edge_offsets[i + 1]
            assert list(ring.edge_dst[lo:hi]) == list(ring.neighbors[i])


class TestCosineSimilarity:
    def test_identical_direction(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_closed_form_45_degrees(self):
        value = cosine_similarity(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert value == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_zero_norm_rejected(self):
        with pytest.raises(NumericError):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_range_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a = rng.standard_normal(6)
            b = rng.standard_normal(6)
            assert -1.0 - 1e-12 <= cosine_similarity(a, b) <= 1.0 + 1e-12


class TestBuildStar:
    def test_exact_match_among_orthogonal_prototypes(self):
        prototypes = [np.eye(5)[i] for i in range(5)]
        star = build_star(prototypes[3], prototypes, k=1)
        assert star.prototype_indices == (3,)
        assert star.scores[0] == pytest.approx(1.0)
        assert star.n == 2

    def test_k_clamped_to_prototype_count(self):
        rng = np.random.default_rng(1)
        prototypes = [rng.standard_normal(4) for _ in range(4)]
        star = build_star(rng.standard_normal(4), prototypes, k=10)
        assert len(star.prototype_indices) == 4
        assert star.n == 5

    def test_matches_brute_force_sort(self):
        rng = np.random.default_rng(2)
        query = rng.standard_normal(6)
        prototypes = [rng.standard_normal(6) for _ in range(8)]
        star = build_star(query, prototypes, k=3)

        def cosine(a, b):
            return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

        brute = sorted(range(8), key=lambda i: (-cosine(query, prototypes[i]), i))[:3]
        assert list(star.prototype_indices) == brute
        assert list(star.scores) == sorted(star.scores, reverse=True)

    def test_ties_broken_by_lower_index(self):
        proto = np.array([2.0, 0.0])
        prototypes = [proto, np.array([0.0, 1.0]), 3.0 * proto]
        star = build_star(np.array([1.0, 0.0]), prototypes, k=2)
        # prototypes 0 and 2 both score 1.0; index order decides
        assert star.prototype_indices == (0, 2)

    def test_invariant_under_positive_query_rescaling(self):
        rng = np.random.default_rng(3)
        query = rng.standard_normal(5)
        prototypes = [rng.standard_normal(5) for _ in range(6)]
        base = build_star(query, prototypes, k=3)
        for scale in (1e-3, 0.5, 7.0, 1e4):
            scaled = build_star(scale * query, prototypes, k=3)
            assert scaled.prototype_indices == base.prototype_indices

    def test_star_edges_all_touch_query(self):
        rng = np.random.default_rng(4)
        star = build_star(rng.standard_normal(4), [rng.standard_normal(4) for _ in range(5)], k=3)
        assert all(0 in edge for edge in star.edges)
        assert star.neighbors[0] == (1, 2, 3)

    def test_zero_norm_prototype_rejected(self):
        with pytest.raises(NumericError):
            build_star(np.ones(3), [np.zeros(3)], k=1)

    def test_empty_prototypes_rejected(self):
        with pytest.raises(GraphError):
            build_star(np.ones(3), [], k=1)

    def test_nonpositive_k_rejected(self):
        with pytest.raises(GraphError):
            build_star(np.ones(3), [np.ones(3)], k=0)
