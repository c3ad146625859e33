import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcops.data import Dataset, class_subset, generate_paper_sim, split_half, subset
from bcops.learners import LearnerConfig
from bcops.mixshift import (
    DesignSystem,
    RegionModel,
    assemble_system,
    build_region,
    constrained_lstsq,
    fit_eta,
    lower_quantile_threshold,
    mix_estimate,
    project_to_simplex_with_slack,
)
from bcops.learners.kde import fit_kde_1d


from conftest import grid_search_oracle


class TestProjection:
    @settings(max_examples=100, deadline=None)
    @given(
        v=st.lists(
            st.floats(min_value=-5, max_value=5, allow_nan=False), min_size=1, max_size=6
        )
    )
    def test_feasible_and_idempotent(self, v):
        w = project_to_simplex_with_slack(np.array(v))
        assert np.all(w >= 0.0) and w.sum() <= 1.0
        np.testing.assert_allclose(project_to_simplex_with_slack(w), w, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(
        v=st.lists(
            st.floats(min_value=-3, max_value=3, allow_nan=False), min_size=2, max_size=4
        ),
        seed=st.integers(0, 1000),
    )
    def test_no_feasible_point_is_closer(self, v, seed):
        v = np.array(v)
        w = project_to_simplex_with_slack(v)
        rng = np.random.default_rng(seed)
        for _ in range(25):
            z = rng.random(v.size)
            z = z / max(z.sum(), 1.0) * rng.random()  # random feasible point
            assert np.sum((v - w) ** 2) <= np.sum((v - z) ** 2) + 1e-9

    def test_interior_point_unchanged(self):
        v = np.array([0.2, 0.3])
        np.testing.assert_array_equal(project_to_simplex_with_slack(v), v)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            project_to_simplex_with_slack(np.array([np.nan, 0.5]))


class TestSolver:
    @pytest.mark.parametrize(
        "response,expected",
        [
            ((0.2, 0.5), (0.2, 0.5)),
            ((-0.1, 0.5), (0.0, 0.5)),
            ((0.7, 0.6), (0.55, 0.45)),
        ],
    )
    def test_identity_design(self, response, expected):
        pi, _ = constrained_lstsq(np.eye(2), np.array(response))
        np.testing.assert_allclose(pi, expected, atol=1e-9)

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            design = rng.random((3, 3))
            response = rng.random(3)
            _, info = constrained_lstsq(design, response)
            assert np.all(np.diff(info["objective_trace"]) <= 1e-12)

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            design = np.array(
                [
                    [rng.uniform(0.6, 0.95), rng.uniform(0.0, 0.3)],
                    [rng.uniform(0.0, 0.3), rng.uniform(0.6, 0.95)],
                ]
            )
            response = rng.uniform(0.0, 1.0, size=2)
            pi, _ = constrained_lstsq(design, response)
            oracle = grid_search_oracle(design, response)
            assert np.max(np.abs(pi - oracle)) <= 2e-3

    def test_singular_design_still_feasible(self):
        design = np.array([[0.5, 0.5], [0.5, 0.5]])
        pi, info = constrained_lstsq(design, np.array([0.4, 0.4]))
        assert pi.min() >= 0 and pi.sum() <= 1.0
        assert info["ill_conditioned"]

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            constrained_lstsq(np.array([[np.inf, 0], [0, 1]]), np.zeros(2))


class TestQuantile:
    def test_basic(self):
        vals = np.arange(10.0)
        # floor(0.2 * 10) = 2 -> third smallest value
        assert lower_quantile_threshold(vals, 0.2) == 2.0

    def test_zeta_near_zero_keeps_everything(self):
        vals = np.arange(10.0)
        assert lower_quantile_threshold(vals, 1e-9) == 0.0


class TestRegion:
    def test_holdout_mass_close_to_one_minus_zeta(self):
        # oracle: for a symmetric unimodal sample the region is |t| <= c
        # holding ~80% of the sample
        rng = np.random.default_rng(0)
        values = rng.standard_normal(1000)
        region = build_region(values, zeta=0.2)
        mass = region.contains(values).mean()
        assert abs(mass - 0.8) <= 0.03
        assert region.contains(np.array([0.0]))[0]
        assert not region.contains(np.array([5.0]))[0]

    def test_zeta_to_zero_mass_to_one(self):
        rng = np.random.default_rng(1)
        values = rng.standard_normal(400)
        region = build_region(values, zeta=1e-6)
        assert region.contains(values).all()

    def test_two_identical_values_with_bandwidth(self):
        region = build_region(np.array([1.5, 1.5]), zeta=0.3, bandwidth=0.5)
        assert region.contains(np.array([1.5, 1.5])).all()

    def test_zeta_out_of_range(self):
        with pytest.raises(ValueError):
            build_region(np.arange(5.0), zeta=0.0)
        with pytest.raises(ValueError):
            build_region(np.arange(5.0), zeta=1.0)


def _gaussian_train(rng, n_per, centers):
    X = np.vstack([rng.standard_normal((n_per, 2)) + c for c in centers])
    y = np.repeat(np.arange(1, len(centers) + 1), n_per)
    return Dataset(X, y, len(centers))


class TestFitEta:
    def test_identical_distribution_gives_flat_eta(self, glm):
        rng = np.random.default_rng(0)
        train = _gaussian_train(rng, 200, [[0, 0], [0, 0]])
        test = Dataset(rng.standard_normal((300, 2)))
        eta = fit_eta(train, test, glm, seed=0)
        vals = eta.values(rng.standard_normal((400, 2)))
        # balanced class weighting centers the flat score near 1/2 -> eta near 0
        assert np.all(np.abs(vals.mean(axis=0)) < 0.4)
        assert np.all(vals.std(axis=0) < 0.5)

    def test_separated_class_gets_positive_eta(self, glm):
        # oracle: the class-1 log odds at its own center are strongly positive
        rng = np.random.default_rng(1)
        train = _gaussian_train(rng, 200, [[6, 0], [-6, 0]])
        test = Dataset(
            np.vstack([rng.standard_normal((100, 2)) + [6, 0],
                       rng.standard_normal((200, 2)) - [6, 0]])
        )
        eta = fit_eta(train, test, glm, seed=0)
        holdout = rng.standard_normal((100, 2)) + [6, 0]
        assert eta.values(holdout)[:, 0].mean() > 1.0

    def test_empty_test_fold(self, glm):
        rng = np.random.default_rng(2)
        train = _gaussian_train(rng, 20, [[0, 0], [3, 0]])
        with pytest.raises(ValueError):
            fit_eta(train, Dataset(np.zeros((0, 2))), glm, seed=0)

    def test_missing_class(self, glm):
        ds = Dataset(np.random.default_rng(0).standard_normal((10, 2)),
                     np.array([1] * 9 + [2]), 2)
        with pytest.raises(ValueError):
            fit_eta(ds, Dataset(np.zeros((5, 2))), glm, seed=0)


class TestAssembleSystem:
    def _setup(self, glm, n_per=500):
        rng = np.random.default_rng(3)
        train = _gaussian_train(rng, n_per, [[4, 0], [-4, 0]])
        test = Dataset(
            np.vstack([rng.standard_normal((n_per, 2)) + [4, 0],
                       rng.standard_normal((n_per, 2)) - [4, 0]])
        )
        split = split_half(train, stratify=True, seed=0)
        fit_fold = subset(train, split.indices(1))
        holdout = subset(train, split.indices(2))
        eta = fit_eta(fit_fold, test, glm, seed=0)
        zeta = 0.2
        regions = {}
        for l in (1, 2):
            vals = eta.values(class_subset(holdout, l).features)[:, l - 1]
            regions[l] = build_region(vals, zeta)
        return eta, regions, holdout, test, rng

    def test_diagonal_mass(self, glm):
        eta, regions, holdout, test, _ = self._setup(glm)
        system = assemble_system(regions, eta, holdout, test)
        assert np.all(system.design >= 0) and np.all(system.design <= 1)
        for l in (0, 1):
            assert system.design[l, l] >= 1 - 0.2 - 0.05
        # well separated classes: off-diagonals small
        assert system.design[0, 1] <= 0.1 and system.design[1, 0] <= 0.1

    def test_response_matches_single_class_column(self, glm):
        eta, regions, holdout, _, rng = self._setup(glm)
        pure = Dataset(rng.standard_normal((800, 2)) + [4, 0])  # class-1 draws only
        system = assemble_system(regions, eta, holdout, pure)
        np.testing.assert_allclose(system.response, system.design[:, 0], atol=0.06)

    def test_zero_row_flagged(self, glm):
        eta, regions, holdout, test, _ = self._setup(glm, n_per=100)
        dead = RegionModel(kde=regions[1].kde, threshold=np.inf, zeta=0.2)
        system = assemble_system({1: dead, 2: regions[2]}, eta, holdout, test)
        assert system.zero_rows == [1]

    def test_empty_class_holdout(self, glm):
        eta, regions, holdout, test, _ = self._setup(glm, n_per=100)
        only1 = class_subset(holdout, 1)
        with pytest.raises(ValueError):
            assemble_system(regions, eta, only1, test)


class TestMixEstimate:
    def test_feasibility_and_fold_structure(self, paper_sim, glm):
        train, test, _ = paper_sim
        est = mix_estimate(train, test, 0.2, glm, seed=0)
        assert est.pi.min() >= 0 and est.pi.sum() <= 1.0
        assert est.epsilon == pytest.approx(1 - est.pi.sum())
        for t in (1, 2):
            fold = est.diagnostics["folds"][t]
            assert fold["holdout_fold"] == 3 - fold["eta_fold"]
            assert len(fold["bandwidths"]) == 2
            assert np.all(np.asarray(fold["design"]) <= 1.0)

    def test_paper_sim_recovers_class2(self, paper_sim, glm):
        # the linear learner separates class 2 cleanly; its proportion is sharp
        train, test, _ = paper_sim
        est = mix_estimate(train, test, 0.2, glm, seed=0)
        assert abs(est.pi[1] - 1 / 3) <= 0.06

    def test_no_shift_bootstrap_control(self, glm):
        rng = np.random.default_rng(0)
        train, _, _ = generate_paper_sim(3)
        boot = Dataset(train.features[rng.integers(0, train.n, train.n)])
        est = mix_estimate(train, boot, 0.2, glm, seed=3)
        assert est.epsilon <= 0.05
        assert np.all(np.abs(est.pi - 0.5) <= 0.1)

    def test_zeta_validation(self, paper_sim, glm):
        train, test, _ = paper_sim
        for zeta in (0.0, 1.0, 1.5, -0.2):
            with pytest.raises(ValueError):
                mix_estimate(train, test, zeta, glm, seed=0)

    def test_small_class_rejected(self, glm):
        train = Dataset(np.random.default_rng(0).standard_normal((7, 2)),
                        np.array([1, 1, 1, 2, 2, 2, 1]), 2)
        with pytest.raises(ValueError):
            mix_estimate(train, Dataset(np.zeros((8, 2))), 0.2, glm, seed=0)


def test_design_system_validation():
    with pytest.raises(ValueError):
        DesignSystem(design=np.array([[1.2, 0.0], [0.0, 1.0]]), response=np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        DesignSystem(design=np.eye(2), response=np.array([0.5]))
