"""Query composition: decomposition identity, parameter counts, reference points."""

import numpy as np
import pytest

from sgrec.queries import GroupQuerySet, compose_group_queries, reference_points


class TestCompose:
    def test_decomposition_identity_is_exact(self):
        for seed in range(5):
            qs = compose_group_queries("decomposed", 7, 4, 10, seed=seed)
            rebuilt = qs.location_queries[:, None, :] + qs.layout_queries[None, :, :]
            assert np.max(np.abs(qs.queries - rebuilt)) == 0.0

    def test_zero_layout_collapses_to_location(self):
        loc = np.random.default_rng(0).normal(size=(3, 8))
        qs = compose_group_queries("decomposed", 3, 2, 8, manifest={
            "query.location": loc, "query.layout": np.zeros((2, 8))})
        for j in range(2):
            np.testing.assert_array_equal(qs.queries[:, j, :], loc)

    def test_vector_addition_example(self):
        qs = compose_group_queries("decomposed", 2, 3, 2, manifest={
            "query.location": np.array([[0.0, 0.0], [1.0, 2.0]]),
            "query.layout": np.array([[0.0, 0.0], [10.0, 20.0], [5.0, 5.0]])})
        np.testing.assert_array_equal(qs.queries[1, 1], [11.0, 22.0])

    def test_parameter_counts_at_reference_config(self):
        naive = compose_group_queries("naive", 300, 12, 512, seed=0)
        dec = compose_group_queries("decomposed", 300, 12, 512, seed=0)
        assert naive.param_count == 1_843_200
        assert dec.param_count == 159_744
        assert round(naive.param_count / dec.param_count, 1) == 11.5

    @pytest.mark.parametrize("g,m,w", [(1, 1, 2), (5, 3, 4), (17, 2, 16)])
    def test_parameter_count_formula(self, g, m, w):
        assert compose_group_queries("naive", g, m, w, seed=1).param_count == g * m * w
        assert compose_group_queries("decomposed", g, m, w, seed=1).param_count == (g + m) * w

    def test_deterministic_given_seed(self):
        a = compose_group_queries("decomposed", 4, 3, 8, seed=42)
        b = compose_group_queries("decomposed", 4, 3, 8, seed=42)
        np.testing.assert_array_equal(a.queries, b.queries)
        c = compose_group_queries("decomposed", 4, 3, 8, seed=43)
        assert not np.array_equal(a.queries, c.queries)

    def test_layout_perturbation_touches_one_column_everywhere(self):
        base = compose_group_queries("decomposed", 5, 4, 6, seed=3)
        layout = base.layout_queries.copy()
        layout[2] += 1.0
        bumped = compose_group_queries("decomposed", 5, 4, 6, manifest={
            "query.location": base.location_queries, "query.layout": layout})
        diff = bumped.queries - base.queries
        assert np.all(diff[:, 2, :] != 0.0)
        np.testing.assert_allclose(diff[:, 2, :], 1.0, rtol=0, atol=1e-12)
        mask = np.ones(4, dtype=bool)
        mask[2] = False
        assert np.all(diff[:, mask, :] == 0.0)  # untouched columns are bit-identical

    def test_manifest_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            compose_group_queries("naive", 2, 2, 4, manifest={
                "query.naive": np.zeros((2, 2, 5))})

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            compose_group_queries("decomposed", 0, 1, 2, seed=0)
        with pytest.raises(ValueError):
            compose_group_queries("mystery", 1, 1, 2, seed=0)
        with pytest.raises(ValueError):
            compose_group_queries("naive", 1, 1, 2)

    def test_odd_width_rejected(self):
        with pytest.raises(ValueError, match="even"):
            GroupQuerySet("naive", 1, 1, 3, np.zeros((1, 1, 3)))


class TestReferencePoints:
    def test_zero_projection_centers_everything(self):
        qs = compose_group_queries("naive", 3, 2, 8, seed=0)
        refs = reference_points(qs, np.zeros((2, 4)))
        np.testing.assert_array_equal(refs, np.full((3, 2, 2), 0.5))

    def test_identical_queries_share_reference_points(self):
        qs = compose_group_queries("decomposed", 4, 3, 8, manifest={
            "query.location": np.tile(np.arange(8.0), (4, 1)),
            "query.layout": np.zeros((3, 8))})
        proj = np.random.default_rng(1).normal(size=(2, 4))
        refs = reference_points(qs, proj)
        assert np.all(refs == refs[0, 0])

    def test_hand_set_projection_matches_scalar_logistic(self):
        # width 4: positional half is the first two lanes
        queries = np.array([[[0.5, -1.0, 9.0, 9.0]]])
        qs = GroupQuerySet("naive", 1, 1, 4, queries)
        proj = np.array([[2.0, 1.0], [0.0, -3.0]])
        refs = reference_points(qs, proj)
        want_x = 1.0 / (1.0 + np.exp(-(2.0 * 0.5 + 1.0 * -1.0)))
        want_y = 1.0 / (1.0 + np.exp(-(0.0 * 0.5 + -3.0 * -1.0)))
        np.testing.assert_allclose(refs[0, 0], [want_x, want_y], rtol=1e-15)
        assert np.all((refs > 0) & (refs < 1))

    def test_wrong_projection_shape(self):
        qs = compose_group_queries("naive", 1, 1, 4, seed=0)
        with pytest.raises(ValueError, match="shape"):
            reference_points(qs, np.zeros((2, 3)))
