"""Window-attention detector: network math, training, scoring, checkpoints.

The gradient tests check the analytic backward pass against central finite
differences of an independently assembled objective.  The sigma blocks are
trained to *climb* the discrepancy term, so their finite-difference oracle
uses the sign-flipped objective; every other block uses the plain loss.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdibench.detectors.transformer import (
    CLASS_NAMES,
    LossWeights,
    NetConfig,
    TrainConfig,
    TransformerDetector,
    anomaly_attention,
    apply_onset_rule,
    embed_window,
    forward,
    grad,
    init_params,
    load_checkpoint,
    loss_terms,
    param_count,
    param_spec,
    positional_encoding,
    prior_rows,
    save_checkpoint,
    stream_scores,
    sym_kl_rows,
    train,
    window_label,
)
from fdibench.errors import ConfigError, ContractViolation, TrainingDivergedError

from conftest import toy_sequence

TINY = NetConfig(n_channels=2, window=4, d_model=4, n_heads=2, n_layers=2,
                 d_ff=8)


def rand_window_batch(config, batch, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * rng.normal(size=(batch, config.window, config.n_channels))


# ---------------------------------------------------------------------------
# attention invariants


class TestAttention:
    def test_series_rows_stochastic(self):
        params = init_params(TINY, seed=3)
        res = forward(TINY, params, rand_window_batch(TINY, 5, seed=1))
        for S in res.series:
            assert S.shape == (5, TINY.n_heads, TINY.window, TINY.window)
            assert np.all(S >= 0)
            np.testing.assert_allclose(S.sum(axis=-1), 1.0, atol=1e-6)

    def test_prior_rows_stochastic_and_peaked_at_diagonal(self):
        P = prior_rows(np.array([0.5, 2.0, 1.0, 0.7, 1.5, 3.0]), window=6)
        assert P.shape == (6, 6)
        np.testing.assert_allclose(P.sum(axis=-1), 1.0, atol=1e-12)
        for i in range(6):
            assert np.argmax(P[i]) == i

    def test_zeroed_query_key_gives_uniform_series_rows(self):
        params = init_params(TINY, seed=0)
        for layer in range(TINY.n_layers):
            for name in ("Wq", "bq", "Wk", "bk"):
                params[f"layer{layer}.{name}"][:] = 0.0
        res = forward(TINY, params, rand_window_batch(TINY, 3, seed=2))
        for S in res.series:
            np.testing.assert_allclose(S, 1.0 / TINY.window, atol=1e-12)

    def test_huge_sigma_gives_uniform_prior(self):
        P = prior_rows(np.full(8, 1e6), window=8)
        np.testing.assert_allclose(P, 1.0 / 8, atol=1e-9)

    def test_discrepancy_zero_on_equal_rows(self):
        rng = np.random.default_rng(5)
        rows = rng.dirichlet(np.ones(6), size=(2, 3, 6))
        np.testing.assert_allclose(sym_kl_rows(rows, rows), 0.0, atol=1e-12)

    def test_discrepancy_nonnegative(self):
        rng = np.random.default_rng(6)
        p = rng.dirichlet(np.ones(5), size=(4, 5))
        s = rng.dirichlet(np.ones(5), size=(4, 5))
        assert np.all(sym_kl_rows(p, s) >= 0)

    def test_two_step_hand_value(self):
        # independent hand computation of the symmetrized KL between
        # (0.9, 0.1) and (0.5, 0.5), mean of the two directed divergences
        p, s = (0.9, 0.1), (0.5, 0.5)
        kl_ps = sum(a * math.log(a / b) for a, b in zip(p, s))
        kl_sp = sum(b * math.log(b / a) for a, b in zip(p, s))
        expected = 0.5 * (kl_ps + kl_sp)
        assert abs(expected - 0.4394449) < 1e-6  # freeze the oracle itself
        got = sym_kl_rows(np.array([[p, p]]), np.array([[s, s]]))
        np.testing.assert_allclose(got, expected, atol=1e-4)

    def test_anomaly_attention_shapes_and_consistency(self):
        params = init_params(TINY, seed=9)
        enc = embed_window(TINY, params,
                           rand_window_batch(TINY, 1, seed=7)[0])
        out = anomaly_attention(TINY, params, enc, layer=0)
        W = TINY.window
        assert out["series"].shape == (TINY.n_heads, W, W)
        assert out["prior"].shape == (W, W)
        assert out["discrepancy"].shape == (W,)
        assert out["transformed"].shape == (W, TINY.d_model)
        assert np.all(out["discrepancy"] >= 0)
        np.testing.assert_allclose(out["series"].sum(axis=-1), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# embedding


class TestEmbedding:
    def test_positional_encoding_shape_and_range(self):
        pos = positional_encoding(16, 8)
        assert pos.shape == (16, 8)
        assert np.all(np.abs(pos) <= 1.0 + 1e-12)

    def test_zero_window_zero_bias_yields_positional_table(self):
        params = init_params(TINY, seed=1)
        params["embed_b"][:] = 0.0
        got = embed_window(TINY, params,
                           np.zeros((TINY.window, TINY.n_channels)))
        np.testing.assert_array_equal(
            got, positional_encoding(TINY.window, TINY.d_model))

    def test_embedding_is_affine(self):
        params = init_params(TINY, seed=2)
        w1 = rand_window_batch(TINY, 1, seed=3)[0]
        w2 = rand_window_batch(TINY, 1, seed=4)[0]
        base = embed_window(TINY, params, np.zeros_like(w1))
        e1 = embed_window(TINY, params, w1) - base
        e2 = embed_window(TINY, params, w2) - base
        both = embed_window(TINY, params, w1 + w2) - base
        np.testing.assert_allclose(both, e1 + e2, atol=1e-12)


# ---------------------------------------------------------------------------
# forward pass


class TestForward:
    def test_deterministic_bitwise(self):
        params = init_params(TINY, seed=11)
        X = rand_window_batch(TINY, 4, seed=12)
        a = forward(TINY, params, X)
        b = forward(TINY, params, X)
        np.testing.assert_array_equal(a.recon, b.recon)
        np.testing.assert_array_equal(a.cls_logits, b.cls_logits)
        np.testing.assert_array_equal(a.disc, b.disc)

    def test_batch_entries_independent(self):
        params = init_params(TINY, seed=13)
        X = rand_window_batch(TINY, 6, seed=14)
        full = forward(TINY, params, X)
        one = forward(TINY, params, X[2:3])
        np.testing.assert_allclose(full.recon[2], one.recon[0], atol=1e-12)
        np.testing.assert_allclose(full.cls_logits[2], one.cls_logits[0],
                                   atol=1e-12)
        perm = np.array([3, 0, 5, 1, 4, 2])
        permuted = forward(TINY, params, X[perm])
        np.testing.assert_allclose(permuted.recon, full.recon[perm],
                                   atol=1e-12)

    def test_rejects_bad_shapes_and_nonfinite(self):
        params = init_params(TINY, seed=15)
        with pytest.raises(ContractViolation):
            forward(TINY, params, np.zeros((2, TINY.window + 1,
                                            TINY.n_channels)))
        bad = rand_window_batch(TINY, 1)
        bad[0, 0, 0] = np.nan
        with pytest.raises(Exception):
            forward(TINY, params, bad)


# ---------------------------------------------------------------------------
# loss


class TestLoss:
    def test_zero_input_zero_heads_zero_loss(self):
        params = init_params(TINY, seed=20)
        params["recon_W"][:] = 0.0
        params["recon_b"][:] = 0.0
        X = np.zeros((3, TINY.window, TINY.n_channels))
        total, bd = loss_terms(TINY, params, X,
                               weights=LossWeights(rec=1.0, disc=0.0,
                                                   cls=0.0))
        assert total == 0.0
        assert bd["rec"] == 0.0

    def test_unlabeled_batch_has_exactly_zero_ce(self):
        params = init_params(TINY, seed=21)
        X = rand_window_batch(TINY, 4, seed=22)
        _, bd = loss_terms(TINY, params, X, window_labels=None)
        assert bd["cls"] == 0.0
        _, bd = loss_terms(TINY, params, X,
                           window_labels=np.array([-1, -1, -1, -1]))
        assert bd["cls"] == 0.0

    def test_zeroed_classifier_gives_log3_ce(self):
        params = init_params(TINY, seed=23)
        params["cls_W"][:] = 0.0
        params["cls_b"][:] = 0.0
        X = rand_window_batch(TINY, 2, seed=24)
        _, bd = loss_terms(TINY, params, X,
                           window_labels=np.array([1, -1]))
        assert abs(bd["cls"] - math.log(3.0)) < 1e-12

    def test_total_is_weighted_sum(self):
        params = init_params(TINY, seed=25)
        X = rand_window_batch(TINY, 3, seed=26)
        w = LossWeights(rec=2.0, disc=0.3, cls=1.5)
        total, bd = loss_terms(TINY, params, X,
                               window_labels=np.array([0, 2, -1]), weights=w)
        assert abs(total - (2.0 * bd["rec"] + 0.3 * bd["disc"]
                            + 1.5 * bd["cls"])) < 1e-12

    def test_bad_labels_rejected(self):
        params = init_params(TINY, seed=27)
        X = rand_window_batch(TINY, 2, seed=28)
        with pytest.raises(ContractViolation):
            loss_terms(TINY, params, X, window_labels=np.array([0, 3]))
        with pytest.raises(ContractViolation):
            loss_terms(TINY, params, X, window_labels=np.array([0]))


# ---------------------------------------------------------------------------
# gradients vs finite differences


def fd_gradient(config, params, X, labels, weights, name, h=1e-5):
    """Central finite differences of the block's own training objective.

    sigma blocks perform gradient *ascent* on the discrepancy term, so the
    objective they descend is rec*w_rec - disc*w_disc + cls*w_cls; every
    other block descends the plain weighted loss.
    """
    flipped = name.endswith("sigma_raw")

    def objective():
        _, bd = loss_terms(config, params, X, labels, weights)
        sign = -1.0 if flipped else 1.0
        return (weights.rec * bd["rec"] + sign * weights.disc * bd["disc"]
                + weights.cls * bd["cls"])

    out = np.zeros_like(params[name])
    flat = params[name].ravel()
    got = out.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = objective()
        flat[i] = keep - h
        lo = objective()
        flat[i] = keep
        got[i] = (hi - lo) / (2 * h)
    return out


def max_rel_err(analytic, fd, floor=1e-5):
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / scale))


class TestGradients:
    def test_matches_finite_differences(self):
        config = TINY
        weights = LossWeights(rec=1.0, disc=0.1, cls=1.0)
        worst = 0.0
        for seed in (0, 1, 2):
            params = init_params(config, seed=seed)
            rng = np.random.default_rng(100 + seed)
            X = rng.normal(size=(2, config.window, config.n_channels))
            labels = np.array([seed % 3, -1])
            _, _, g = grad(config, params, X, labels, weights)
            for name, _ in param_spec(config):
                fd = fd_gradient(config, params, X, labels, weights, name)
                worst = max(worst, max_rel_err(g[name], fd))
        assert worst < 1e-4, f"worst rel err {worst:.3e}"

    def test_zero_weights_zero_gradients(self):
        params = init_params(TINY, seed=30)
        X = rand_window_batch(TINY, 2, seed=31)
        w = LossWeights(rec=0.0, disc=0.0, cls=0.0)
        total, _, g = grad(TINY, params, X, np.array([0, 1]), w)
        assert total == 0.0
        for name, arr in g.items():
            np.testing.assert_array_equal(arr, np.zeros_like(arr),
                                          err_msg=name)

    def test_reconstruction_gradient_scales_with_weight(self):
        params = init_params(TINY, seed=32)
        X = rand_window_batch(TINY, 2, seed=33)
        w1 = LossWeights(rec=1.0, disc=0.0, cls=0.0)
        w2 = LossWeights(rec=2.0, disc=0.0, cls=0.0)
        _, _, g1 = grad(TINY, params, X, None, w1)
        _, _, g2 = grad(TINY, params, X, None, w2)
        for name in g1:
            np.testing.assert_allclose(g2[name], 2.0 * g1[name], atol=1e-12,
                                       err_msg=name)


# ---------------------------------------------------------------------------
# training loop


def smooth_stream(t, m=2, seed=0):
    rng = np.random.default_rng(seed)
    k = np.arange(t)[:, None]
    phases = rng.uniform(0, 2 * np.pi, size=m)
    return np.sin(0.11 * k + phases) + 0.1 * rng.normal(size=(t, m))


class TestTraining:
    small = NetConfig(n_channels=2, window=8, d_model=8, n_heads=2,
                      n_layers=1, d_ff=16)

    def test_zero_epochs_returns_initialization(self):
        seq = toy_sequence(smooth_stream(64))
        tc = TrainConfig(epochs=0, seed=5, allow_labeled_only=True,
                         allow_unlabeled_only=True)
        result = train([], [seq], net_config=self.small, train_config=tc)
        fresh = init_params(self.small, seed=5)
        for name, arr in result.params.items():
            np.testing.assert_array_equal(arr, fresh[name], err_msg=name)
        assert result.final_loss == result.initial_loss
        assert result.log == []

    def test_overfits_a_small_corpus(self):
        seq = toy_sequence(smooth_stream(64, seed=3))
        tc = TrainConfig(epochs=400, lr=3e-3, batch_size=8, stride=8,
                         seed=0, allow_unlabeled_only=True,
                         weights=LossWeights(rec=1.0, disc=0.0, cls=0.0))
        result = train([], [seq], net_config=self.small, train_config=tc)
        assert result.n_windows == 8
        assert len(result.log) == 400
        first = result.log[0]["rec"]
        last = result.log[-1]["rec"]
        assert last < 0.1 * first, (first, last)

    def test_same_seed_is_bit_identical(self):
        seq = toy_sequence(smooth_stream(80, seed=4))
        lab = toy_sequence(smooth_stream(80, seed=5),
                           labels=["attack1"] * 80)
        tc = TrainConfig(epochs=3, seed=17)
        a = train([lab], [seq], net_config=self.small, train_config=tc)
        b = train([lab], [seq], net_config=self.small, train_config=tc)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name],
                                          err_msg=name)

    def test_divergence_carries_last_checkpoint(self):
        seq = toy_sequence(smooth_stream(64, seed=6))
        tc = TrainConfig(epochs=50, lr=1e10, clip_norm=1e30, seed=2,
                         allow_unlabeled_only=True)
        with pytest.raises(TrainingDivergedError) as err:
            train([], [seq], net_config=self.small, train_config=tc)
        ckpt = err.value.last_checkpoint
        assert ckpt is not None
        assert set(ckpt) == {name for name, _ in param_spec(self.small)}
        assert all(np.isfinite(v).all() for v in ckpt.values())

    def test_missing_sides_rejected_without_waiver(self):
        seq = toy_sequence(smooth_stream(64, seed=7))
        with pytest.raises(ContractViolation):
            train([], [seq], net_config=self.small)
        with pytest.raises(ContractViolation):
            train([seq], [], net_config=self.small)

    def test_window_label_majority_rule(self):
        assert window_label(["clean"] * 8, 8) == 0
        assert window_label(["attack1"] * 5 + ["clean"] * 3, 8) == 1
        # half attacked is not a majority
        assert window_label(["attack2"] * 4 + ["clean"] * 4, 8) == 0
        assert window_label(["attack2"] * 5 + ["clean"] * 3, 8) == 2


# ---------------------------------------------------------------------------
# scoring and the onset rule


class TestOnsetRule:
    def test_run_of_three_marks_onset(self):
        scores = np.zeros(200)
        scores[100:103] = 5.0
        attacked, onset = apply_onset_rule(scores, threshold=1.0, h_run=3)
        assert onset == 100
        expect = np.zeros(200, dtype=bool)
        expect[100:103] = True
        np.testing.assert_array_equal(attacked, expect)

    def test_isolated_exceedances_ignored(self):
        scores = np.zeros(100)
        scores[50] = 10.0
        scores[60] = 10.0
        attacked, onset = apply_onset_rule(scores, threshold=1.0, h_run=3)
        assert onset is None
        assert not attacked.any()

    def test_two_runs_first_wins(self):
        scores = np.zeros(60)
        scores[10:14] = 2.0
        scores[40:50] = 2.0
        attacked, onset = apply_onset_rule(scores, threshold=1.0, h_run=3)
        assert onset == 10
        assert attacked[10:14].all() and attacked[40:50].all()
        assert not attacked[14:40].any()

    @given(st.lists(st.floats(0, 10, allow_nan=False), min_size=5,
                    max_size=60),
           st.floats(0.1, 9.0), st.floats(0.1, 9.0))
    @settings(max_examples=60, deadline=None)
    def test_raising_threshold_never_adds_alarms(self, scores, t1, t2):
        lo, hi = sorted((t1, t2))
        scores = np.asarray(scores)
        a_lo, _ = apply_onset_rule(scores, lo, h_run=3)
        a_hi, _ = apply_onset_rule(scores, hi, h_run=3)
        assert not np.any(a_hi & ~a_lo)


class TestDetector:
    def make(self, threshold=float("inf")):
        params = init_params(TINY, seed=40)
        return TransformerDetector(config=TINY, params=params,
                                   threshold=threshold)

    def test_stream_shorter_than_window_rejected(self):
        det = self.make()
        with pytest.raises(ContractViolation):
            det.scores(np.zeros((TINY.window - 1, TINY.n_channels)))

    def test_scores_cover_every_step(self):
        det = self.make()
        data = np.random.default_rng(41).normal(size=(30, TINY.n_channels))
        sc = det.scores(data)
        assert sc.shape == (30,)
        assert np.isfinite(sc).all()
        assert np.all(sc >= 0)

    def test_run_consistent_with_onset_rule(self):
        params = init_params(TINY, seed=42)
        det = TransformerDetector(config=TINY, params=params, threshold=0.0)
        data = np.random.default_rng(43).normal(size=(40, TINY.n_channels))
        run = det.run(data)
        expect, _ = apply_onset_rule(run.scores, 0.0, det.h_run)
        np.testing.assert_array_equal(run.attacked, expect)
        assert all((c in CLASS_NAMES) == a
                   for c, a in zip(run.classes, run.attacked))

    def test_online_step_warms_up_clean(self):
        det = self.make(threshold=0.0)
        det.reset()
        data = np.random.default_rng(44).normal(size=(TINY.window + 4,
                                                      TINY.n_channels))
        verdicts = [det.step(r) for r in data]
        for v in verdicts[:TINY.window - 1]:
            assert not v.attacked and v.score == 0.0
        # beyond the buffer the windows are full and scores are real
        assert all(v.score > 0 for v in verdicts[TINY.window - 1:])

    def test_with_threshold_shares_parameters(self):
        det = self.make()
        tuned = det.with_threshold(0.5)
        assert tuned.threshold == 0.5
        assert tuned.params is det.params
        data = np.random.default_rng(45).normal(size=(20, TINY.n_channels))
        np.testing.assert_array_equal(det.scores(data), tuned.scores(data))

    def test_stream_scores_average_covering_windows(self):
        # T = W makes exactly one window: per-step scores are that window's
        params = init_params(TINY, seed=46)
        data = np.random.default_rng(47).normal(size=(TINY.window,
                                                      TINY.n_channels))
        sc, logits = stream_scores(TINY, params, data)
        from fdibench.detectors.transformer import window_scores
        wsc, wlog = window_scores(TINY, params, data[None])
        np.testing.assert_allclose(sc, wsc[0], atol=1e-12)
        np.testing.assert_allclose(logits, np.repeat(wlog, TINY.window,
                                                     axis=0), atol=1e-12)


# ---------------------------------------------------------------------------
# checkpoints


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = init_params(TINY, seed=50)
        path = tmp_path / "net.ckpt"
        digest = save_checkpoint(str(path), TINY, params, seed=50,
                                 extra={"threshold": 0.25})
        assert len(digest) == 64
        config, loaded, header = load_checkpoint(str(path))
        assert config == TINY
        assert header["seed"] == 50
        assert header["extra"]["threshold"] == 0.25
        for name, arr in params.items():
            np.testing.assert_array_equal(arr, loaded[name], err_msg=name)

    def test_digest_matches_file_bytes(self, tmp_path):
        import hashlib
        params = init_params(TINY, seed=51)
        path = tmp_path / "net.ckpt"
        digest = save_checkpoint(str(path), TINY, params)
        assert digest == hashlib.sha256(path.read_bytes()).hexdigest()

    def test_truncated_payload_rejected(self, tmp_path):
        params = init_params(TINY, seed=52)
        path = tmp_path / "net.ckpt"
        save_checkpoint(str(path), TINY, params)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ConfigError):
            load_checkpoint(str(path))

    def test_corrupt_header_rejected(self, tmp_path):
        path = tmp_path / "net.ckpt"
        path.write_bytes(b"{not json\n" + b"\x00" * 64)
        with pytest.raises(ConfigError):
            load_checkpoint(str(path))

    def test_param_count_matches_spec_and_init(self):
        total = sum(int(np.prod(shape)) for _, shape in param_spec(TINY))
        assert param_count(TINY) == total
        params = init_params(TINY, seed=53)
        assert sum(v.size for v in params.values()) == total
