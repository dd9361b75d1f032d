import numpy as np

from swarmfl import byzantine, contract


def test_faulty_bounds_and_mean():
    w, n = byzantine.faulty_submission(np.random.default_rng(0), 1_000_000, 42)
    assert n == 42
    assert w.min() >= -0.5 and w.max() <= 0.5
    assert abs(w.mean()) < 0.002


def test_faulty_is_seeded():
    a, _ = byzantine.faulty_submission(np.random.default_rng(3), 100, 1)
    b, _ = byzantine.faulty_submission(np.random.default_rng(3), 100, 1)
    assert np.array_equal(a, b)


def _after_round_one():
    p = contract.ContractParams(n_weights=8)
    w0 = np.linspace(-0.02, 0.02, 8)
    s = contract.genesis_state(p, w0)
    rng = np.random.default_rng(0)
    for k in range(7):
        s, _ = contract.submit_model(s, w0 + rng.uniform(-0.01, 0.01, 8), 10, k)
    return s, w0


def test_malicious_replays_previous_model():
    s, w0 = _after_round_one()
    w, n = byzantine.malicious_submission(s, 9)
    assert s.round == 1 and np.array_equal(w, w0) and n == 9
    d = contract.mean_abs_distance(w, s.shared_weights)
    assert d == contract.mean_abs_distance(s.shared_weights, s.prev_shared_weights)


def test_malicious_before_any_round_sends_genesis():
    w0 = np.linspace(0, 1, 8)
    s = contract.genesis_state(contract.ContractParams(n_weights=8), w0)
    assert np.array_equal(byzantine.malicious_submission(s, 1)[0], w0)


def test_smart_example_bounds():
    w, _ = byzantine.smart_submission(np.array([0.2, 0.4]), np.array([0.1, 0.5]), np.random.default_rng(0))
    assert 0.2 <= w[0] <= 0.4 and 0.4 <= w[1] <= 0.6


def test_smart_without_drift_repeats_model():
    wt = np.random.default_rng(1).normal(size=20)
    w, _ = byzantine.smart_submission(wt, wt, np.random.default_rng(2), 5)
    assert np.array_equal(w, wt)


def test_smart_mean_offset_is_delta():
    rng = np.random.default_rng(3)
    wt = rng.normal(0, 0.1, 50)
    wp = wt + rng.normal(0, 0.01, 50)
    delta = np.mean(np.abs(wt - wp))
    # 40k draws per coordinate: the 2% band is about 7 standard errors wide
    reps = 40_000
    tiled_t, tiled_p = np.tile(wt, (reps, 1)), np.tile(wp, (reps, 1))
    draws = byzantine.smart_submission(tiled_t, tiled_p, rng)[0] - tiled_t
    assert np.all(np.abs(draws.mean(axis=0) / delta - 1) < 0.02)


def test_claimed_samples_is_honest_median():
    s, _ = _after_round_one()
    assert byzantine.claimed_samples(s, byzantine_ids={0, 1}) == 10
    g = contract.genesis_state(contract.ContractParams(n_weights=8), np.zeros(8))
    assert byzantine.claimed_samples(g, {0}, fallback=33) == 33
