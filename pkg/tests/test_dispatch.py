import numpy as np
import pytest

from sdndispatch import mlp
from sdndispatch.dispatch import (ALPHA_REF, EWMA_WEIGHT, FEATURE_DIM,
                                  GLOBAL_DIM, HISTORY_LEN, TIME_REF,
                                  NeuralDispatchPolicy, StateTracker,
                                  action_probability,
                                  action_probability_and_gradient,
                                  compute_priorities, policy_mlp_spec,
                                  project, value_mlp_spec)
from sdndispatch.sim import ReportArrival, Response, SimStep

from conftest import make_setting
from _oracles import directional_derivative


def step_with(time, responses=(), reports=()):
    return SimStep(request=None, reward=0.0, responses=list(responses),
                   reports=list(reports), time=time)


# ---------------------------------------------------------------- priorities

def test_network_shapes():
    assert policy_mlp_spec().input_dim == FEATURE_DIM
    assert policy_mlp_spec().output == "softplus"
    assert value_mlp_spec().input_dim == GLOBAL_DIM
    assert value_mlp_spec().output == "identity"


def test_zero_weights_give_uniform_priorities():
    params = mlp.MlpParams(policy_mlp_spec(), np.zeros(policy_mlp_spec().param_count))
    pri = compute_priorities(params, np.random.default_rng(0).normal(size=(4, FEATURE_DIM)))
    assert np.allclose(pri, np.log(2.0))


def test_priorities_are_row_equivariant():
    rng = np.random.default_rng(1)
    params = mlp.init_params(policy_mlp_spec(), rng)
    feats = rng.normal(size=(5, FEATURE_DIM))
    pri = compute_priorities(params, feats)
    perm = rng.permutation(5)
    assert np.allclose(compute_priorities(params, feats[perm]), pri[perm])


def test_priorities_reject_bad_features():
    params = mlp.init_params(policy_mlp_spec(), 0)
    with pytest.raises(ValueError):
        compute_priorities(params, np.zeros((2, FEATURE_DIM + 1)))
    bad = np.zeros((2, FEATURE_DIM))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        compute_priorities(params, bad)


# ---------------------------------------------------- probability + gradient

def _clean_case(rng, n, m):
    """Draw a case away from sort and support boundaries."""
    params = mlp.init_params(policy_mlp_spec(), rng)
    while True:
        feats = rng.normal(0.0, 0.8, size=(n, FEATURE_DIM))
        dist = project(compute_priorities(params, feats), m)
        sorted_p = dist.normalized_sorted
        if m < n and sorted_p[m - 1] - sorted_p[m] < 1e-3:
            continue
        support = np.flatnonzero(dist.probabilities > 1e-3)
        if support.size:
            action = int(support[rng.integers(support.size)])
            return params, feats, dist, action


def test_probability_gradient_matches_finite_differences():
    # acceptance-grade: 100 clean cases, relative error < 1e-4
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, n + 1))
        params, feats, dist, action = _clean_case(rng, n, m)
        prob, grad = action_probability_and_gradient(params, feats, m, action)
        assert prob == pytest.approx(float(dist.probabilities[action]))

        def prob_of(flat):
            return action_probability(mlp.MlpParams(params.spec, flat), feats, m, action)

        d = rng.normal(size=params.spec.param_count)
        d /= np.linalg.norm(d)
        fd = directional_derivative(prob_of, params.flat.copy(), d, 1e-6)
        got = float(grad @ d)
        assert abs(got - fd) <= 1e-4 * max(1e-3, abs(fd))


def test_gradients_sum_to_zero_across_actions():
    # probabilities sum to one, so their parameter gradients must cancel
    rng = np.random.default_rng(7)
    for _ in range(20):
        params, feats, dist, _ = _clean_case(rng, 4, 2)
        total = np.zeros(params.spec.param_count)
        norms = 0.0
        for a in range(4):
            _, g = action_probability_and_gradient(params, feats, 2, a)
            total += g
            norms += np.linalg.norm(g)
        assert np.linalg.norm(total) <= 1e-10 * max(1.0, norms)


def test_out_of_support_action_has_zero_gradient():
    rng = np.random.default_rng(13)
    params, feats, dist, _ = _clean_case(rng, 4, 2)
    dropped = int(dist.permutation[-1])
    prob, grad = action_probability_and_gradient(params, feats, 2, dropped)
    assert prob == 0.0
    assert np.all(grad == 0.0)


def test_single_controller_probability_is_exactly_one():
    rng = np.random.default_rng(3)
    params = mlp.init_params(policy_mlp_spec(), rng)
    feats = rng.normal(size=(1, FEATURE_DIM))
    prob, grad = action_probability_and_gradient(params, feats, 2, 0)
    assert prob == 1.0
    assert np.all(grad == 0.0)  # p == 1 identically, no parameter can move it


def test_gradient_rejects_bad_action():
    params = mlp.init_params(policy_mlp_spec(), 0)
    feats = np.zeros((2, FEATURE_DIM))
    with pytest.raises(ValueError):
        action_probability_and_gradient(params, feats, 2, 2)


# -------------------------------------------------------------- state tracker

def test_cold_start_features():
    setting = make_setting()
    tracker = StateTracker(setting)
    f = tracker.features(0, 0.0)
    assert f.shape == (2, FEATURE_DIM)
    assert np.allclose(f[:, 0], 9000.0 / ALPHA_REF)
    assert np.allclose(f[:, 1], np.array([0.002, 0.02]) / TIME_REF)
    assert np.all(f[:, 2:] == 0.0)


def test_response_average_first_sample_seeds():
    tracker = StateTracker(make_setting())
    tracker.observe(step_with(0.01, responses=[Response(0, 0, 0.010, 0.01)]))
    f = tracker.features(0, 0.011)
    assert f[0, 4] == pytest.approx(0.010 / TIME_REF)
    assert f[0, 5] == 0.0  # no change defined after a single sample
    tracker.observe(step_with(0.02, responses=[Response(0, 0, 0.020, 0.02)]))
    f = tracker.features(0, 0.021)
    ewma = 0.010 + EWMA_WEIGHT * (0.020 - 0.010)
    assert f[0, 4] == pytest.approx(ewma / TIME_REF)
    assert f[0, 5] == pytest.approx((ewma - 0.010) / TIME_REF)
    # the other controller is untouched
    assert f[1, 4] == 0.0 and f[1, 5] == 0.0


def test_utilization_needs_two_reports_for_a_delta():
    tracker = StateTracker(make_setting())
    tracker.observe(step_with(0.01, reports=[ReportArrival(0, 1, 0.5, 0.01)]))
    f = tracker.features(0, 0.011)
    assert f[1, 2] == 0.5
    assert f[1, 3] == 0.0
    tracker.observe(step_with(0.02, reports=[ReportArrival(0, 1, 0.8, 0.02)]))
    f = tracker.features(0, 0.021)
    assert f[1, 2] == pytest.approx(0.8)
    assert f[1, 3] == pytest.approx(0.3)


def test_rate_estimate_counts_prior_arrivals_in_window():
    setting = make_setting()
    tracker = StateTracker(setting)
    # the decision itself is noted only after its features are built
    f = tracker.features(0, 0.10)
    assert f[0, 6] == 0.0
    tracker.note_arrival(0, 0.10)
    tracker.note_arrival(0, 0.15)
    f = tracker.features(0, 0.16)
    assert f[0, 6] == pytest.approx(2 / 0.1 / ALPHA_REF)
    # entries older than the window fall out (0.10 < 0.21 - 0.1)
    f = tracker.features(0, 0.21)
    assert f[0, 6] == pytest.approx(1 / 0.1 / ALPHA_REF)


def test_rate_window_scales_with_time_scale():
    setting = make_setting().scaled(0.1)
    tracker = StateTracker(setting)
    tracker.note_arrival(0, 0.005)
    f = tracker.features(0, 0.008)  # window is 0.01 now
    assert f[0, 6] == pytest.approx(1 / 0.01 / ALPHA_REF)
    f = tracker.features(0, 0.0151)
    assert f[0, 6] == 0.0


def test_global_state_head_and_histories():
    setting = make_setting()
    tracker = StateTracker(setting)
    g = tracker.global_state(0)
    assert g.shape == (GLOBAL_DIM,)
    assert g[0] == pytest.approx(2 * 9000.0 / ALPHA_REF)
    assert g[1] == pytest.approx(((0.002 + 0.02) / 2) / TIME_REF)
    assert g[2] == pytest.approx(5000.0 / ALPHA_REF)
    assert np.all(g[3:] == 0.0)
    # one delivered response inside the first report window
    tracker.observe(step_with(0.01, responses=[Response(0, 0, 0.010, 0.01)]))
    tracker.observe(step_with(0.06))  # crosses the 0.05 boundary, rolls history
    g = tracker.global_state(0)
    assert g[3 + HISTORY_LEN - 1] == pytest.approx(0.010 / TIME_REF)
    assert np.all(g[3:3 + HISTORY_LEN - 1] == 0.0)


def test_history_window_mean_over_multiple_responses():
    tracker = StateTracker(make_setting())
    tracker.observe(step_with(0.02, responses=[
        Response(0, 0, 0.010, 0.01), Response(0, 1, 0.030, 0.02)]))
    tracker.observe(step_with(0.051))
    g = tracker.global_state(0)
    assert g[3 + HISTORY_LEN - 1] == pytest.approx(0.020 / TIME_REF)


def test_features_return_copies():
    tracker = StateTracker(make_setting())
    f1 = tracker.features(0, 0.0)
    f1[:, 0] = -1.0
    f2 = tracker.features(0, 0.0)
    assert np.all(f2[:, 0] == 9000.0 / ALPHA_REF)


# -------------------------------------------------------------------- policy

def test_policy_rejects_mismatched_parameters():
    value_params = mlp.init_params(value_mlp_spec(), 0)
    with pytest.raises(ValueError):
        NeuralDispatchPolicy(value_params)
    params = mlp.init_params(policy_mlp_spec(), 0)
    with pytest.raises(ValueError):
        NeuralDispatchPolicy(params, support_size=0)


def test_policy_decisions_stay_in_support_and_replay_exactly():
    setting = make_setting()
    params = mlp.init_params(policy_mlp_spec(), 5)

    class Req:
        def __init__(self, switch, t):
            self.switch = switch
            self.generated_at = t

    def run():
        policy = NeuralDispatchPolicy(params, support_size=2)
        policy.reset(setting, np.random.default_rng(99))
        picks = []
        for i in range(50):
            d = policy.decide(Req(0, 0.001 * i))
            assert d.distribution.probabilities[d.action] > 0.0
            assert d.features.shape == (2, FEATURE_DIM)
            assert d.global_state.shape == (GLOBAL_DIM,)
            picks.append(d.action)
        return picks

    assert run() == run()
