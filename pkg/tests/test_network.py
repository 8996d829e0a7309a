"""Scorer internals: initialization, GRU passes, gradients, Adam, training."""

import math

import numpy as np
import pytest

from tasign.dtw import AlignedPair, WarpingPath
from tasign.errors import ConfigurationError, DegenerateSignatureError, ParseError
from tasign.ingest import SynthConfig, synth_dataset
from tasign.network import (
    BRANCH_HIDDEN,
    BRANCH_INPUT,
    HEAD_INPUT,
    MERGE_HIDDEN,
    MERGE_INPUT,
    PARAM_COUNT,
    AdamState,
    GruWeights,
    ModelParams,
    TrainConfig,
    adam_step,
    backward,
    finite_difference_check,
    forward,
    gru_forward,
    init_params,
    load_checkpoint,
    loss,
    save_checkpoint,
    train,
    _loss_and_grads,
)

# golden forward value for seed-42 params on the fixed random pair below;
# recorded once from this implementation and asserted bit-exactly
GOLDEN_FORWARD = 0.5020355920664072


def make_pair(seed=123, length=30):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((23, length))
    b = rng.standard_normal((23, length))
    pairs = np.stack([np.arange(length), np.arange(length)], axis=1)
    return AlignedPair(a=a, b=b, path=WarpingPath(pairs=pairs, ta=length, tb=length))


def scalar_weights(wz, uz, bz, wr, ur, br, wh, uh, bh) -> GruWeights:
    arr = lambda v, shape: np.full(shape, float(v))
    return GruWeights(
        wz=arr(wz, (1, 1)), wr=arr(wr, (1, 1)), wh=arr(wh, (1, 1)),
        uz=arr(uz, (1, 1)), ur=arr(ur, (1, 1)), uh=arr(uh, (1, 1)),
        bz=arr(bz, (1,)), br=arr(br, (1,)), bh=arr(bh, (1,)),
    )


class TestParamLayout:
    def test_total_parameter_count(self):
        branch_dir = 3 * BRANCH_HIDDEN * BRANCH_INPUT + 3 * BRANCH_HIDDEN ** 2 + 3 * BRANCH_HIDDEN
        merge_dir = 3 * MERGE_HIDDEN * MERGE_INPUT + 3 * MERGE_HIDDEN ** 2 + 3 * MERGE_HIDDEN
        assert PARAM_COUNT == 2 * branch_dir + 2 * merge_dir + HEAD_INPUT + 1
        assert PARAM_COUNT == 48071

    def test_views_share_flat_storage(self):
        p = ModelParams()
        p.branch_fwd.wz[0, 0] = 3.5
        assert p.flat[0] == 3.5
        p.flat[-1] = -2.0
        assert p.head_b[0] == -2.0


class TestInitParams:
    def test_same_seed_identical(self):
        assert np.array_equal(init_params(7).flat, init_params(7).flat)

    def test_different_seed_differs(self):
        assert not np.array_equal(init_params(7).flat, init_params(8).flat)

    def test_moments_match_target(self):
        flat = init_params(0).flat
        n = flat.size
        assert abs(flat.mean()) < 3 * (0.05 / math.sqrt(n))
        assert abs(flat.std() - 0.05) < 0.02 * 0.05


class TestGruForward:
    def test_zero_weights_keep_state_zero(self):
        w = scalar_weights(0, 0, 0, 0, 0, 0, 0, 0, 0)
        out = gru_forward(w, np.ones((1, 5)))
        np.testing.assert_array_equal(out, np.zeros((1, 5)))

    def test_hand_evaluated_single_step(self):
        wz, bz = 0.3, 0.1
        wr, br = -0.2, 0.05
        wh, bh = 0.7, -0.4
        x = 1.5
        w = scalar_weights(wz, 0.9, bz, wr, 0.8, br, wh, 0.6, bh)
        out = gru_forward(w, np.array([[x]]))
        # h0 = 0, so the recurrent terms vanish:
        z = 1.0 / (1.0 + math.exp(-(wz * x + bz)))
        g = math.tanh(wh * x + bh)
        expected = z * g
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(expected, abs=1e-15)

    def test_states_strictly_inside_unit_interval(self):
        # mathematically |h| < 1 always; in float64 tanh saturates to exactly
        # 1.0 for pre-activations beyond ~19, so probe the representable range
        rng = np.random.default_rng(5)
        p = init_params(5)
        out = gru_forward(p.branch_fwd, 5.0 * rng.standard_normal((23, 200)))
        assert np.all(out > -1.0) and np.all(out < 1.0)


class TestForward:
    def test_zero_params_score_half(self):
        assert forward(ModelParams(), make_pair()) == 0.5

    def test_score_strictly_inside_unit_interval(self):
        for seed in range(4):
            score = forward(init_params(seed), make_pair(seed))
            assert 0.0 < score < 1.0

    def test_golden_value_reproducible(self):
        score = forward(init_params(42), make_pair())
        assert score == GOLDEN_FORWARD
        assert forward(init_params(42), make_pair()) == score

    def test_truncation_leaves_short_pairs_unmodified(self):
        pair = make_pair(length=25)
        assert forward(init_params(1), pair, max_len=25) == forward(
            init_params(1), pair, max_len=1500
        )

    def test_longer_pairs_are_tail_truncated(self):
        pair = make_pair(length=40)
        head = AlignedPair(
            a=pair.a[:, :16], b=pair.b[:, :16],
            path=WarpingPath(
                pairs=np.stack([np.arange(16), np.arange(16)], axis=1), ta=16, tb=16
            ),
        )
        assert forward(init_params(1), pair, max_len=16) == forward(
            init_params(1), head, max_len=16
        )


class TestLoss:
    def test_half_score_gives_ln2(self):
        assert loss(0.5, 0) == pytest.approx(math.log(2.0), abs=1e-12)
        assert loss(0.5, 1) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_confident_wrong_answer(self):
        assert loss(0.9, 0) == pytest.approx(-math.log(0.1), abs=1e-12)

    def test_limit_toward_label(self):
        assert loss(1.0 - 1e-12, 1) < 1e-11
        assert loss(1e-12, 0) < 1e-11

    def test_clamp_keeps_loss_finite(self):
        assert math.isfinite(loss(0.0, 1))
        assert math.isfinite(loss(1.0, 0))


class TestBackward:
    def test_head_bias_gradient_is_score_minus_label(self):
        pair = make_pair(9, 15)
        p = init_params(9)
        score = forward(p, pair)
        grads = backward(p, pair, label=1)
        assert grads.head_b[0] == score - 1
        grads0 = backward(p, pair, label=0)
        assert grads0.head_b[0] == score - 0

    def test_finite_difference_agreement(self):
        rng = np.random.default_rng(3)
        p = init_params(3)
        a = rng.standard_normal((23, 20))
        b = rng.standard_normal((23, 20))
        err = finite_difference_check(p, a, b, label=1, n_samples=200, eps=1e-5, seed=5)
        assert err < 1e-4

    def test_finite_difference_over_multiple_draws(self):
        # central differences at eps = 1e-5 cannot resolve gradients below
        # ~1e-9 against an O(1) loss, so each draw samples enough indices
        # that the check is dominated by measurable gradients
        worst = 0.0
        for draw in range(5):
            rng = np.random.default_rng(100 + draw)
            p = init_params(200 + draw)
            a = rng.standard_normal((23, 20))
            b = rng.standard_normal((23, 20))
            err = finite_difference_check(
                p, a, b, label=draw % 2, n_samples=60, eps=1e-5, seed=300 + draw
            )
            worst = max(worst, err)
        assert worst < 1e-4

    def test_shared_branch_contributions_are_symmetric(self):
        # the two branch passes share one weight set; with identical inputs
        # and an identical injected output gradient their contributions must
        # match exactly (the merge layer itself weighs its two input halves
        # differently, so the full a/b parts only agree under this control)
        from tasign.network import ModelParams, _bgru_backward, _bgru_forward

        rng = np.random.default_rng(4)
        x = rng.standard_normal((18, 23))
        p = init_params(4)
        _, ca_f, ca_b = _bgru_forward(p.branch_fwd, p.branch_bwd, x.copy())
        _, cb_f, cb_b = _bgru_forward(p.branch_fwd, p.branch_bwd, x.copy())
        d_out = rng.standard_normal((18, 2 * BRANCH_HIDDEN))
        part_a = ModelParams()
        part_b = ModelParams()
        _bgru_backward(p.branch_fwd, p.branch_bwd, ca_f, ca_b, d_out,
                       part_a.branch_fwd, part_a.branch_bwd)
        _bgru_backward(p.branch_fwd, p.branch_bwd, cb_f, cb_b, d_out,
                       part_b.branch_fwd, part_b.branch_bwd)
        assert np.any(part_a.flat != 0.0)
        np.testing.assert_array_equal(part_a.flat, part_b.flat)

    def test_branch_gradient_decomposition(self):
        # total gradient = merge/head gradients + a-path part + b-path part
        rng = np.random.default_rng(6)
        xa = rng.standard_normal((16, 23))
        xb = rng.standard_normal((16, 23))
        p = init_params(6)
        _, _, grads, (part_a, part_b) = _loss_and_grads(
            p, xa, xb, label=1, want_branch_parts=True
        )
        _, _, plain = _loss_and_grads(p, xa, xb, label=1)
        np.testing.assert_allclose(grads.flat, plain.flat, atol=1e-15)
        branch_span = part_a.flat + part_b.flat
        assert np.any(part_a.flat != part_b.flat)  # concat merge is asymmetric
        np.testing.assert_allclose(
            grads.flat - branch_span, plain.flat - branch_span, atol=0
        )


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = init_params(0)
        updated, state = adam_step(p, ModelParams(), AdamState.fresh())
        np.testing.assert_array_equal(updated.flat, p.flat)
        assert state.step_count == 1

    def test_unit_gradient_first_step_magnitude(self):
        # t = 1: m_hat = v_hat = 1, so the step is lr / (1 + eps) ~ lr
        p = init_params(0)
        g = ModelParams()
        g.flat[10] = 1.0
        updated, _ = adam_step(p, g, AdamState.fresh())
        step = p.flat[10] - updated.flat[10]
        assert step == pytest.approx(0.001, abs=1e-6)
        mask = np.ones(PARAM_COUNT, dtype=bool)
        mask[10] = False
        np.testing.assert_array_equal(updated.flat[mask], p.flat[mask])

    def test_state_advances_between_calls(self):
        p = init_params(0)
        g = ModelParams(np.full(PARAM_COUNT, 0.5))
        p1, s1 = adam_step(p, g, AdamState.fresh())
        p2, s2 = adam_step(p1, g, s1)
        assert (s1.step_count, s2.step_count) == (1, 2)
        assert not np.array_equal(s1.m, s2.m)
        assert not np.array_equal(s1.v, s2.v)
        assert not np.array_equal(p1.flat, p2.flat)

    def test_shape_mismatch_rejected(self):
        p = init_params(0)
        bad = AdamState(m=np.zeros(3), v=np.zeros(3))
        with pytest.raises(ConfigurationError):
            adam_step(p, ModelParams(), bad)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(max_len=8)
        with pytest.raises(ConfigurationError):
            TrainConfig(validation_fraction=0.6)
        with pytest.raises(ConfigurationError):
            TrainConfig(epochs=0)


@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    config = SynthConfig(n_users=3, genuine_per_session=2, sessions=1,
                         forgeries_per_user=1, seed=21)
    return synth_dataset(config, out)


class TestTrain:
    def config(self):
        return TrainConfig(epochs=2, batch_size=4, max_len=64, seed=11,
                           validation_fraction=0.2)

    def test_deterministic_history_and_params(self, tiny_manifest):
        p1, h1 = train(tiny_manifest, self.config())
        p2, h2 = train(tiny_manifest, self.config())
        assert np.array_equal(p1.flat, p2.flat)
        assert h1 == h2
        assert len(h1) == 2
        assert all(s.val_loss is not None for s in h1)

    def test_balanced_pair_construction(self, tiny_manifest):
        from tasign.network import build_training_pairs

        rng = np.random.default_rng(0)
        pairs = build_training_pairs(tiny_manifest, rng, balance=True)
        labels = [label for _, _, label in pairs]
        assert abs(labels.count(0) - labels.count(1)) <= 1

    def test_insufficient_data_rejected(self, tmp_path):
        config = SynthConfig(n_users=2, genuine_per_session=1, sessions=1,
                             forgeries_per_user=0, seed=1)
        manifest = synth_dataset(config, tmp_path)
        with pytest.raises(ConfigurationError):
            train(manifest, self.config())


class TestCheckpoint:
    def test_round_trip_bytes(self, tmp_path):
        p = init_params(33)
        config = TrainConfig(epochs=1, max_len=32).to_dict()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, p, config)
        loaded, loaded_config = load_checkpoint(path)
        assert np.array_equal(loaded.flat, p.flat)
        assert loaded_config == config
        save_checkpoint(tmp_path / "again.ckpt", loaded, loaded_config)
        assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_rejects_truncated_payload(self, tmp_path):
        p = init_params(1)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, p, {})
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(ParseError):
            load_checkpoint(path)


class TestPairValidation:
    def test_zero_length_pair_rejected(self):
        pair = AlignedPair(
            a=np.zeros((23, 0)), b=np.zeros((23, 0)),
            path=WarpingPath(pairs=np.zeros((0, 2), dtype=int), ta=0, tb=0),
        )
        with pytest.raises(DegenerateSignatureError):
            forward(ModelParams(), pair)
