"""Defense contracts: consensus voting, stream monitoring, ensemble voting,
and the defense evaluation harness."""

import numpy as np
import pytest

import advkit
from advkit.errors import ConfigurationError, InputError
from advkit.mitigation import (ConsensusDefense, StreamMonitor, VotingEnsemble,
                               evaluate_defense, replay_monitor)
from advkit.pgm import write_pgm

from conftest import linear_model


@pytest.fixture()
def toy_model():
    rng = np.random.default_rng(31)
    return linear_model(rng.normal(size=(3, 16)) * 2.0, np.zeros(3),
                        input_shape=(4, 4))


# -- consensus ----------------------------------------------------------------


def test_consensus_identity_generator_always_accepts(toy_model):
    x = np.random.default_rng(0).random((4, 4))
    defense = ConsensusDefense(q=5, generator="pixel_shift", max_offset=0)
    decision = defense.decide(toy_model, x)
    assert decision.accepted
    assert decision.label == toy_model.predict_bundle(x).predicted_class
    assert decision.votes == {decision.label: 5}


def test_consensus_votes_are_deterministic(toy_model):
    x = np.random.default_rng(1).random((4, 4))
    defense = ConsensusDefense(q=7, generator="gaussian_jitter", sigma=0.2, seed=9)
    d1, d2 = defense.decide(toy_model, x), defense.decide(toy_model, x)
    assert d1.votes == d2.votes
    assert np.array_equal(defense.variants(x), defense.variants(x))


def test_consensus_no_majority_is_rejected():
    class Scripted:
        def __init__(self, labels):
            self.labels = np.asarray(labels)

        def predict(self, X):
            return self.labels[:len(X)]

    defense = ConsensusDefense(q=5, generator="pixel_shift", max_offset=0)
    decision = defense.decide(Scripted([0, 0, 1, 1, 2]), np.zeros((4, 4)))
    assert not decision.accepted
    assert decision.label is None
    assert decision.votes == {0: 2, 1: 2, 2: 1}


def test_consensus_threshold_monotonicity(toy_model):
    # same votes: raising the threshold can only flip accept -> reject
    x = np.random.default_rng(2).random((4, 4))
    accepted = []
    for threshold in (0.4, 0.6, 0.8, 1.0):
        defense = ConsensusDefense(q=5, generator="gaussian_jitter",
                                   sigma=0.35, threshold=threshold, seed=4)
        accepted.append(defense.decide(toy_model, x).accepted)
    for earlier, later in zip(accepted, accepted[1:]):
        assert earlier or not later


def test_consensus_config_validation(toy_model):
    x = np.zeros((4, 4))
    with pytest.raises(ConfigurationError):
        ConsensusDefense(q=2).decide(toy_model, x)
    with pytest.raises(ConfigurationError):
        ConsensusDefense(generator="rotate").decide(toy_model, x)
    with pytest.raises(ConfigurationError):
        ConsensusDefense(max_offset=4).decide(toy_model, x)  # >= image size


def test_pixel_shift_geometry():
    from advkit.mitigation import _shift
    x = np.arange(9, dtype=float).reshape(3, 3) / 10.0
    right = _shift(x, 0, 1)
    assert right[:, 0].tolist() == [0.0, 0.0, 0.0]
    assert right[1, 2] == x[1, 1]
    down = _shift(x, 1, 0)
    assert down[0].tolist() == [0.0, 0.0, 0.0]
    assert down[2, 1] == x[1, 1]
    assert np.array_equal(_shift(x, 0, 0), x)


# -- stream monitor -------------------------------------------------------------


def test_monitor_flags_identical_run():
    monitor = StreamMonitor(tau=0.5, k=5, window=10)
    x = np.random.default_rng(3).random((4, 4))
    verdicts = [monitor.observe("c1", x) for _ in range(5)]
    assert not any(v.flagged for v in verdicts[:4])
    assert verdicts[4].flagged
    assert verdicts[4].reason == "near_duplicate"


def test_monitor_tau_zero_never_flags_non_identical():
    monitor = StreamMonitor(tau=0.0, k=2, window=10)
    rng = np.random.default_rng(4)
    for _ in range(10):
        assert not monitor.observe("c", rng.random((4, 4))).flagged


def test_monitor_tau_infinite_flags_any_k_run():
    monitor = StreamMonitor(tau=np.inf, k=3, window=5)
    rng = np.random.default_rng(5)
    verdicts = [monitor.observe("c", rng.random((4, 4))) for _ in range(3)]
    assert verdicts[2].flagged


def test_monitor_clients_are_isolated():
    monitor = StreamMonitor(tau=np.inf, k=2, window=5)
    assert not monitor.observe("a", np.zeros((2, 2))).flagged
    assert not monitor.observe("b", np.zeros((2, 2))).flagged  # separate history
    assert monitor.observe("a", np.zeros((2, 2))).flagged


def test_monitor_distant_queries_stay_clear():
    monitor = StreamMonitor(tau=0.5, k=2, window=10)
    base = np.zeros((4, 4))
    assert not monitor.observe("c", base).flagged
    far = base.copy()
    far[0, 0] = 1.0  # L2 distance 1 > tau
    assert not monitor.observe("c", far).flagged


def test_monitor_iteration_budget_flags_time_out():
    monitor = StreamMonitor(tau=0.1, k=2, window=4, iteration_budget=3)
    v = monitor.observe("c", np.zeros((2, 2)), served_iterations=7)
    assert v.flagged and v.reason == "time_out"


def test_monitor_config_validation():
    with pytest.raises(ConfigurationError):
        StreamMonitor(tau=0.1, k=1).observe("c", np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        StreamMonitor(tau=-1.0).observe("c", np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        StreamMonitor(tau=0.1, k=5, window=3).observe("c", np.zeros((2, 2)))


def test_replay_file_drives_monitor(tmp_path):
    rng = np.random.default_rng(6)
    for i in range(4):
        write_pgm(tmp_path / f"q{i}.pgm", np.full((4, 4), 0.5))
    write_pgm(tmp_path / "other.pgm", rng.random((4, 4)))
    replay = tmp_path / "replay.txt"
    replay.write_text("# comment line\n"
                      + "\n".join(f"alice,q{i}.pgm" for i in range(4))
                      + "\nbob,other.pgm\n")
    monitor = StreamMonitor(tau=0.01, k=3, window=8)
    verdicts = replay_monitor(monitor, replay)
    assert len(verdicts) == 5
    flagged = [c for c, v in verdicts if v.flagged]
    assert "alice" in flagged and "bob" not in flagged


def test_replay_rejects_malformed_lines(tmp_path):
    replay = tmp_path / "bad.txt"
    replay.write_text("just-a-token\n")
    with pytest.raises(InputError):
        replay_monitor(StreamMonitor(tau=1.0), replay)


# -- ensemble -------------------------------------------------------------------


def scripted_member(label, m=3, shape=(2, 2)):
    """Constant-prediction member built from a biased linear model."""
    W = np.zeros((m, shape[0] * shape[1]))
    b = np.eye(m)[label] * 10.0
    return linear_model(W, b, input_shape=shape)


def test_ensemble_majority_and_tie():
    members = [scripted_member(0), scripted_member(0), scripted_member(1)]
    ensemble = VotingEnsemble(members)
    accepted, label = ensemble.decide(np.zeros((2, 2)))
    assert accepted and label == 0

    tied = VotingEnsemble([scripted_member(0), scripted_member(1)])
    accepted, label = tied.decide(np.zeros((2, 2)))
    assert not accepted and label is None
    assert tied.predict(np.zeros((1, 2, 2))).tolist() == [-1]


def test_ensemble_identical_members_equal_single_model(toy_model):
    rng = np.random.default_rng(8)
    X = rng.random((6, 4, 4))
    ensemble = VotingEnsemble([toy_model, toy_model, toy_model])
    assert np.array_equal(ensemble.predict(X), toy_model.predict(X))


def test_ensemble_config_validation(toy_model):
    with pytest.raises(ConfigurationError):
        VotingEnsemble([toy_model]).decide(np.zeros((4, 4)))
    other = scripted_member(0, shape=(3, 3))
    with pytest.raises(ConfigurationError):
        VotingEnsemble([toy_model, other]).decide(np.zeros((4, 4)))


# -- evaluation harness ----------------------------------------------------------


def test_evaluate_defense_degenerate_policies():
    benign = [np.zeros((2, 2))] * 4
    adversarial = [(np.ones((2, 2)), 0)] * 6
    accept_all = evaluate_defense(lambda x: (True, 1), benign, adversarial)
    assert accept_all.benign_rejection_rate == 0.0
    assert accept_all.adversarial_rejection_rate == 0.0
    assert accept_all.post_defense_misclassification_rate == 1.0

    reject_all = evaluate_defense(lambda x: (False, None), benign, adversarial)
    assert reject_all.benign_rejection_rate == 1.0
    assert reject_all.adversarial_rejection_rate == 1.0
    assert reject_all.post_defense_misclassification_rate == 0.0

    with pytest.raises(InputError):
        evaluate_defense(lambda x: (True, 1), [], adversarial)
