"""Attacks: budgets, optimality on linear models, radius search, square search."""

import math

import numpy as np
import pytest

from paflab import tensor as T
from paflab.activations import ActivationSpec
from paflab.attacks import (
    AttackSpec, default_l2, default_linf, fgsm, min_radius_search,
    nested_robust_accuracy, pgd, project_linf, robust_accuracy, run_attack,
    scaled_step, square_search,
)
from paflab.data import Dataset, two_moons
from paflab.nnet import Dense, Network, build_mlp


def linear_net(w, b=None):
    """Binary classifier with logits [w.x + b, 0]."""
    w = np.asarray(w, dtype=np.float64).reshape(-1, 1)
    d = w.shape[0]
    weight = np.concatenate([w, np.zeros((d, 1))], axis=1)
    bias = np.array([0.0 if b is None else float(b), 0.0])
    net = Network([Dense(T.Tensor(weight, requires_grad=True),
                         T.Tensor(bias, requires_grad=True))],
                  ActivationSpec("relu"), {"kind": "mlp", "dims": [d, 2]})
    return net


def logistic_1d(slope=8.0, threshold=0.5):
    """1-d model whose decision boundary sits exactly at x = threshold."""
    return linear_net([slope], b=-slope * threshold)


class TestSpecValidation:
    def test_unknown_family_lists_choices(self):
        with pytest.raises(ValueError, match="fgsm"):
            AttackSpec("cw", epsilon=0.1)

    def test_defaults_match_standard_settings(self):
        linf = default_linf()
        assert (linf.epsilon, linf.step_size, linf.steps) == (0.031, 0.0078, 10)
        l2 = default_l2()
        assert (l2.epsilon, l2.step_size, l2.steps) == (0.5, 0.075, 10)

    def test_clip_range_ordering(self):
        with pytest.raises(ValueError, match="lo < hi"):
            AttackSpec("fgsm", epsilon=0.1, clip_range=(1.0, 0.0))

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ValueError, match="epsilon"):
            AttackSpec("fgsm", epsilon=-0.1)


class TestFGSM:
    def test_linear_model_optimality(self):
        # Against logits [w.x, 0] the worst case in the ball moves the
        # margin by exactly eps * ||w||_1; fgsm attains it.
        rng = np.random.default_rng(0)
        w = rng.normal(size=4)
        net = linear_net(w)
        x = np.full((1, 4), 0.5)
        y = np.array([0])
        eps = 0.1
        xa = fgsm(net, x, y, eps)
        margin_before = float((x @ w.reshape(-1, 1)).item())
        margin_after = float((xa @ w.reshape(-1, 1)).item())
        assert margin_before - margin_after == pytest.approx(eps * np.abs(w).sum(), abs=1e-10)
        loss_after = math.log1p(math.exp(-margin_after))
        worst = math.log1p(math.exp(-(margin_before - eps * np.abs(w).sum())))
        assert loss_after == pytest.approx(worst, abs=1e-10)

    def test_zero_epsilon_is_identity(self):
        net = linear_net([1.0, -2.0])
        x = np.array([[0.3, 0.6]])
        xa = fgsm(net, x, np.array([0]), 0.0)
        np.testing.assert_array_equal(xa, x)

    def test_zero_gradient_leaves_input(self):
        net = linear_net([0.0, 0.0])
        x = np.array([[0.3, 0.6]])
        xa = fgsm(net, x, np.array([0]), 0.1)
        np.testing.assert_array_equal(xa, x)

    def test_ball_and_range_containment(self):
        net = linear_net([3.0, -1.0])
        x = np.array([[0.05, 0.99]])
        xa = fgsm(net, x, np.array([0]), 0.2)
        assert np.abs(xa - x).max() <= 0.2 + 1e-9
        assert xa.min() >= 0.0 and xa.max() <= 1.0


class TestPGD:
    def test_projection_oracle(self):
        x0 = np.zeros((1, 3))
        far = np.full((1, 3), 0.2)
        proj = project_linf(far, x0, 0.1)
        np.testing.assert_allclose(np.abs(proj - x0), 0.1)

    def test_crosses_boundary_iff_budget_reaches(self):
        net = logistic_1d(slope=8.0, threshold=0.5)
        x = np.array([[0.7]])  # boundary distance 0.2
        y = np.array([0])
        for eps, should_flip in [(0.202, True), (0.198, False)]:
            spec = AttackSpec("pgd_linf", epsilon=eps, step_size=scaled_step(eps, 10), steps=10)
            xa = pgd(net, x, y, spec, seed=0)
            assert (net.predict(xa)[0] != 0) == should_flip

    def test_zero_epsilon_returns_input_bitwise(self):
        net = linear_net([1.0, 1.0])
        x = np.array([[0.4, 0.6]])
        spec = AttackSpec("pgd_linf", epsilon=0.0, steps=5)
        xa = pgd(net, x, np.array([0]), spec, seed=1)
        assert xa.tobytes() == x.tobytes()

    @pytest.mark.parametrize("family", ["pgd_linf", "pgd_l2"])
    def test_ball_containment_random_trials(self, family):
        rng = np.random.default_rng(2)
        net = build_mlp([3, 6, 2], ActivationSpec("silu"), seed=0)
        for trial in range(20):
            x = rng.uniform(0.2, 0.8, size=(5, 3))
            y = rng.integers(0, 2, size=5)
            eps = rng.uniform(0.01, 0.3)
            spec = AttackSpec(family, epsilon=eps, step_size=scaled_step(eps, 5),
                              steps=5, restarts=2)
            xa = pgd(net, x, y, spec, seed=trial)
            delta = (xa - x).reshape(5, -1)
            if family == "pgd_linf":
                norms = np.abs(delta).max(axis=1)
            else:
                norms = np.linalg.norm(delta, axis=1)
            assert (norms <= eps + 1e-9).all()
            assert xa.min() >= 0.0 and xa.max() <= 1.0 + 1e-12

    def test_restart_selection_prefers_misclassification(self):
        net = logistic_1d(slope=8.0, threshold=0.5)
        x = np.array([[0.65]])
        y = np.array([0])
        spec = AttackSpec("pgd_linf", epsilon=0.2, step_size=0.05, steps=10, restarts=5)
        xa = pgd(net, x, y, spec, seed=3)
        assert net.predict(xa)[0] != 0

    def test_requires_pgd_family(self):
        with pytest.raises(ValueError, match="pgd"):
            pgd(linear_net([1.0]), np.zeros((1, 1)), np.array([0]),
                AttackSpec("fgsm", epsilon=0.1))


class TestMinRadius:
    def test_matches_analytic_boundary_distance(self):
        net = logistic_1d(slope=8.0, threshold=0.5)
        res = min_radius_search(net, np.array([0.7]), 0, attack_steps=4, r_max=0.5, tol=1e-3)
        assert not res.censored
        assert res.radius == pytest.approx(0.2, abs=1e-3)

    def test_point_on_boundary_gives_tiny_radius(self):
        net = logistic_1d(slope=8.0, threshold=0.5)
        res = min_radius_search(net, np.array([0.5]), 0, r_max=0.25, tol=1e-3)
        assert res.radius <= 1e-3

    def test_censored_when_attack_never_succeeds(self):
        net = linear_net([0.0])  # constant margin, unattackable
        res = min_radius_search(net, np.array([0.5]), 0, r_max=0.25)
        assert res.censored and res.radius == 0.25

    def test_initially_misclassified_rejected(self):
        net = logistic_1d(slope=8.0, threshold=0.5)
        with pytest.raises(ValueError, match="correctly classified"):
            min_radius_search(net, np.array([0.7]), 1)

    def test_success_monotone_over_radius_grid(self):
        net = logistic_1d(slope=8.0, threshold=0.5)
        x, y = np.array([[0.7]]), np.array([0])
        flips = []
        for r in np.linspace(0.01, 0.5, 50):
            spec = AttackSpec("pgd_linf", epsilon=r, step_size=scaled_step(r, 4), steps=4)
            xa = pgd(net, x, y, spec, seed=11)
            flips.append(net.predict(xa)[0] != 0)
        first = flips.index(True)
        assert all(flips[first:])

    def test_bracketing_invariant(self):
        # every probed hi must flip and every probed lo must not, under the
        # fixed probe seed used by the search
        net = logistic_1d(slope=8.0, threshold=0.5)
        x = np.array([0.66])
        res = min_radius_search(net, x, 0, r_max=0.5, tol=1e-3, seed=5)

        def flips(eps):
            spec = AttackSpec("pgd_linf", epsilon=eps, step_size=scaled_step(eps, 4), steps=4)
            return net.predict(pgd(net, x[None], np.array([0]), spec, seed=5))[0] != 0

        assert flips(res.radius)
        assert not flips(res.radius - 2e-3)


class _CountingNet:
    """Forward-pass counter used to audit black-box query accounting."""

    def __init__(self, net):
        self.net = net
        self.calls = 0

    def forward(self, x):
        self.calls += 1
        return self.net.forward(x)

    def frozen(self):
        return self.net.frozen()


class TestSquareSearch:
    def test_never_exceeds_query_budget(self):
        inner = build_mlp([4, 8, 3], ActivationSpec("silu"), seed=1)
        counter = _CountingNet(inner)
        for budget in (1, 7, 40):
            counter.calls = 0
            res = square_search(counter, np.full(4, 0.5), 0, eps=0.1,
                                query_budget=budget, seed=0)
            assert counter.calls == res.queries
            assert res.queries <= budget

    def test_constant_classifier_never_succeeds_and_uses_full_budget(self):
        net = linear_net([0.0, 0.0])
        counter = _CountingNet(net)
        res = square_search(counter, np.array([0.4, 0.6]), 0, eps=0.1,
                            query_budget=50, seed=0)
        assert not res.success
        assert res.queries == 50 == counter.calls

    def test_accepted_margins_strictly_decrease(self):
        rng = np.random.default_rng(0)
        net = build_mlp([6, 10, 3], ActivationSpec("silu"), seed=2)
        x = rng.uniform(0.2, 0.8, size=6)
        y = int(net.predict(x[None])[0])

        margins = []
        real_forward = net.forward

        def spy(t):
            out = real_forward(t)
            logits = out.data[0]
            others = np.delete(logits, y)
            margins.append(float(logits[y] - others.max()))
            return out

        net.forward = spy
        res = square_search(net, x, y, eps=0.3, query_budget=60, seed=4)
        net.forward = real_forward
        accepted = []
        best = margins[0]
        for m in margins[1:]:
            if m < best:
                accepted.append(m)
                best = m
        assert all(b < a for a, b in zip(accepted, accepted[1:]))
        # the returned point realizes the lowest margin seen
        logits = net.forward(T.Tensor(res.x_adv[None])).data[0]
        final = float(logits[y] - np.delete(logits, y).max())
        assert final == pytest.approx(min(margins), abs=1e-12)

    def test_perturbation_stays_in_ball_and_range(self):
        net = build_mlp([4, 6, 2], ActivationSpec("relu"), seed=3)
        x = np.array([0.02, 0.5, 0.98, 0.5])
        res = square_search(net, x, 0, eps=0.15, query_budget=30, seed=1)
        assert np.abs(res.x_adv - x).max() <= 0.15 + 1e-12
        assert res.x_adv.min() >= 0.0 and res.x_adv.max() <= 1.0

    def test_image_shaped_input(self):
        net = build_mlp([16, 8, 2], ActivationSpec("relu"), seed=4)

        class FlattenNet:
            def forward(self, t):
                return net.forward(t.reshape((t.shape[0], -1)))

            def frozen(self):
                return net.frozen()

        res = square_search(FlattenNet(), np.full((1, 4, 4), 0.5), 0,
                            eps=0.1, query_budget=20, seed=2)
        assert res.x_adv.shape == (1, 4, 4)


def toy_dataset(n=30, seed=0):
    ds = two_moons(n, 0.05, seed=seed)
    return ds


class TestRobustAccuracy:
    def test_zero_epsilon_equals_clean_accuracy(self):
        net = build_mlp([2, 8, 2], ActivationSpec("relu"), seed=0)
        ds = toy_dataset()
        clean = float(np.mean(net.predict(ds.x) == ds.y))
        spec = AttackSpec("pgd_linf", epsilon=0.0, steps=3)
        assert robust_accuracy(net, ds, spec, seed=0) == clean

    def test_non_increasing_in_epsilon_with_carried_successes(self):
        net = build_mlp([2, 8, 2], ActivationSpec("silu"), seed=1)
        ds = toy_dataset(40, seed=2)
        spec = AttackSpec("pgd_linf", epsilon=0.031, step_size=0.01, steps=10)
        accs = nested_robust_accuracy(net, ds, spec, [0.01, 0.02, 0.031], seed=0)
        assert accs[0] >= accs[1] >= accs[2]

    def test_constant_margin_model_immune(self):
        # zero weights: logits are constant, fgsm/pgd cannot flip class 0
        net = linear_net([0.0, 0.0])
        x = np.random.default_rng(0).uniform(0.2, 0.8, size=(10, 2))
        ds = Dataset(x, np.zeros(10, dtype=np.int64))
        spec = AttackSpec("pgd_linf", epsilon=0.1, step_size=0.02, steps=5)
        assert robust_accuracy(net, ds, spec, seed=0) == 1.0

    def test_min_radius_not_an_accuracy_family(self):
        net = linear_net([1.0, 1.0])
        ds = Dataset(np.full((2, 2), 0.5), np.zeros(2, dtype=np.int64))
        with pytest.raises(ValueError, match="radius"):
            robust_accuracy(net, ds, AttackSpec("min_radius", epsilon=0.25))

    def test_run_attack_rows_schema(self):
        net = build_mlp([2, 6, 2], ActivationSpec("relu"), seed=2)
        ds = toy_dataset(10, seed=3)
        rows = run_attack(net, ds, AttackSpec("pgd_linf", epsilon=0.05, step_size=0.02, steps=3),
                          seed=1)
        assert len(rows) == 10
        assert set(rows[0]) == {"index", "clean_correct", "success", "queries", "r_min", "norm"}
        assert all(r["norm"] <= 0.05 + 1e-9 for r in rows)

    def test_multi_restart_point_robust_only_if_all_restarts_fail(self):
        net = logistic_1d(slope=8.0, threshold=0.5)
        x = np.array([[0.65], [0.05]])
        ds = Dataset(x, np.array([0, 1]))
        spec = AttackSpec("pgd_linf", epsilon=0.2, step_size=0.05, steps=10, restarts=4)
        rows = run_attack(net, ds, spec, seed=0)
        assert rows[0]["success"]          # boundary within reach of some restart
        assert not rows[1]["success"]      # boundary 0.45 away, no restart can cross
