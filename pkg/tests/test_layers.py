import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slufuse import numcore as nc
from slufuse.layers import (ConvEncoderParams, CrfParams, DenseParams, RnnParams, birnn,
                            conv_encoder, crf_log_partition, crf_nll, crf_viterbi, dense, dropout,
                            embed_lookup, path_score, rnn_direction)
from slufuse.numcore import ShapeError


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


class TestEmbedLookup:
    def test_row_select(self):
        table = nc.parameter(np.arange(12.0).reshape(4, 3))
        np.testing.assert_array_equal(embed_lookup(np.array([[2]]), table).data, [[[6, 7, 8]]])

    def test_pad_row_is_zero(self):
        table = nc.parameter(np.vstack([np.zeros(3), np.ones((3, 3))]))
        np.testing.assert_array_equal(embed_lookup(np.array([[0, 1]]), table).data[0, 0], 0.0)

    def test_shape(self, rng):
        table = nc.parameter(rng.normal(size=(10, 300)))
        assert embed_lookup(rng.integers(0, 10, size=(2, 50)), table).shape == (2, 50, 300)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            embed_lookup(np.array([[4]]), nc.parameter(np.zeros((4, 2))))

    def test_gradient_reaches_rows(self, f64):
        table = nc.parameter(np.zeros((4, 2)))
        g = nc.backward(nc.sum(embed_lookup(np.array([[1, 1, 3]]), table)), {"t": table})["t"]
        np.testing.assert_array_equal(g[:, 0], [0, 2, 0, 1])


class TestDense:
    def test_identity(self, rng):
        x = nc.Tensor(rng.normal(size=(2, 3)))
        p = DenseParams(nc.parameter(np.eye(3)), nc.parameter(np.zeros(3)))
        np.testing.assert_array_equal(dense(x, p).data, x.data)

    def test_hand_arithmetic(self):
        p = DenseParams(nc.parameter([[1.0], [1.0]]), nc.parameter([1.0]))
        assert dense(nc.Tensor([[1.0, 2.0]]), p).data.tolist() == [[4.0]]

    def test_per_position(self, rng):
        p = DenseParams.init(rng, 4, 6)
        x = nc.Tensor(rng.normal(size=(3, 5, 4)))
        y = dense(x, p, "relu")
        assert y.shape == (3, 5, 6)
        np.testing.assert_allclose(y.data[1, 2], np.maximum(x.data[1, 2] @ p.weight.data, 0),
                                   rtol=1e-6)

    def test_softmax_activation(self, rng):
        p = DenseParams.init(rng, 4, 5)
        y = dense(nc.Tensor(rng.normal(size=(3, 4))), p, "softmax")
        np.testing.assert_allclose(y.data.sum(axis=-1), 1.0, rtol=1e-6)

    def test_trailing_mismatch(self, rng):
        with pytest.raises(ShapeError):
            dense(nc.Tensor(np.ones((2, 3))), DenseParams.init(rng, 4, 2))


class TestDropout:
    @pytest.mark.parametrize("mode", ["train", "infer"])
    def test_zero_rate_identity(self, mode, rng):
        x = nc.Tensor(rng.normal(size=(4, 4)))
        np.testing.assert_array_equal(dropout(x, 0.0, mode, rng).data, x.data)

    def test_infer_identity(self, rng):
        x = nc.Tensor(rng.normal(size=(4, 4)))
        assert dropout(x, 0.5, "infer", None) is x

    def test_expectation_preserved(self, f64):
        x = nc.Tensor(np.full((100, 100), 3.0))
        y = dropout(x, 0.5, "train", np.random.default_rng(0)).data
        assert abs(y.mean() - 3.0) / 3.0 < 0.05
        assert set(np.unique(y)) <= {0.0, 6.0}

    def test_rate_one_rejected(self, rng):
        with pytest.raises(ValueError):
            dropout(nc.Tensor([1.0]), 1.0, "train", rng)


def sliding_window_oracle(x, filters, biases):
    out = []
    for w in sorted(filters):
        f, b = filters[w], biases[w]
        steps = x.shape[1] - w + 1
        group = np.zeros((x.shape[0], f.shape[0]))
        for bi in range(x.shape[0]):
            acts = np.array([[np.sum(x[bi, t:t + w] * f[k]) + b[k] for k in range(f.shape[0])]
                             for t in range(steps)])
            group[bi] = np.maximum(acts, 0).max(axis=0)
        out.append(group)
    return np.concatenate(out, axis=1)


class TestConvEncoder:
    def test_zero_filters(self, rng):
        p = ConvEncoderParams.init(rng, 6, n_filters=3)
        for t in p.named("c").values():
            t.data[...] = 0
        out = conv_encoder(nc.Tensor(rng.normal(size=(2, 7, 6))), p)
        assert out.shape == (2, 12)
        assert np.all(out.data == 0)

    def test_selector_filter(self, rng):
        p = ConvEncoderParams.init(rng, 4, n_filters=1, widths=(1,))
        p.filters[1].data[...] = [[[0, 0, 1, 0]]]
        p.biases[1].data[...] = 0
        x = np.abs(rng.normal(size=(1, 6, 4)))
        assert conv_encoder(nc.Tensor(x), p).data[0, 0] == pytest.approx(x[0, :, 2].max())

    def test_sliding_window_oracle(self, f64, rng):
        p = ConvEncoderParams.init(rng, 5, n_filters=4)
        for b in p.biases.values():
            b.data[...] = rng.normal(size=b.shape)
        x = rng.normal(size=(3, 8, 5))
        got = conv_encoder(nc.Tensor(x), p).data
        want = sliding_window_oracle(x, {w: f.data for w, f in p.filters.items()},
                                     {w: b.data for w, b in p.biases.items()})
        assert got.shape == (3, 16)
        assert np.max(np.abs(got - want)) < 1e-10

    def test_default_width_is_512(self, rng):
        p = ConvEncoderParams.init(rng, 3)
        assert conv_encoder(nc.Tensor(rng.normal(size=(1, 5, 3))), p).shape == (1, 512)

    def test_too_short(self, rng):
        p = ConvEncoderParams.init(rng, 3, n_filters=2)
        with pytest.raises(ShapeError):
            conv_encoder(nc.Tensor(np.zeros((1, 4, 3))), p)

    def test_permutation_covariance(self, f64, rng):
        p = ConvEncoderParams.init(rng, 3, n_filters=4, widths=(1, 2))
        x = nc.Tensor(rng.normal(size=(2, 6, 3)))
        base = conv_encoder(x, p).data
        perm = rng.permutation(4)
        p.filters[2].data[...] = p.filters[2].data[perm]
        p.biases[2].data[...] = p.biases[2].data[perm]
        moved = conv_encoder(x, p).data
        np.testing.assert_array_equal(moved[:, :4], base[:, :4])
        np.testing.assert_array_equal(moved[:, 4:], base[:, 4:][:, perm])


class TestBirnn:
    @pytest.mark.parametrize("cell", ["gru", "lstm"])
    def test_zero_weights_zero_output(self, cell, rng):
        pf, pb = RnnParams.init(rng, cell, 3, 2), RnnParams.init(rng, cell, 3, 2)
        for t in [*pf.named("f").values(), *pb.named("b").values()]:
            t.data[...] = 0
        out = birnn(nc.Tensor(rng.normal(size=(2, 5, 3))), pf, pb)
        assert out.shape == (2, 5, 4) and np.all(out.data == 0)

    def test_published_shape(self, rng):
        pf, pb = RnnParams.init(rng, "gru", 8, 128), RnnParams.init(rng, "gru", 8, 128)
        assert birnn(nc.Tensor(rng.normal(size=(2, 36, 8))), pf, pb).shape == (2, 36, 256)

    def test_gru_hand_step(self, f64):
        # gate blocks [z, r, h], scalars
        p = RnnParams("gru", nc.parameter([[0.5, -0.3, 0.8]]), nc.parameter([[0.2, 0.4, -0.6]]),
                      nc.parameter([0.1, 0.05, -0.2]))
        x = [0.7, -1.1]
        h = 0.0
        want = []
        for xt in x:
            z = sigmoid(0.5 * xt + 0.2 * h + 0.1)
            r = sigmoid(-0.3 * xt + 0.4 * h + 0.05)
            cand = math.tanh(0.8 * xt - 0.6 * (r * h) - 0.2)
            h = (1 - z) * h + z * cand
            want.append(h)
        got = rnn_direction(nc.Tensor(np.array(x).reshape(1, 2, 1)), p).data.ravel()
        assert np.max(np.abs(got - want)) < 1e-12

    def test_lstm_hand_step(self, f64):
        # gate blocks [i, f, g, o], scalars
        p = RnnParams("lstm", nc.parameter([[0.3, -0.2, 0.9, 0.4]]),
                      nc.parameter([[0.1, 0.5, -0.7, 0.2]]), nc.parameter([0.0, 1.0, 0.1, -0.1]))
        h = c = 0.0
        want = []
        for xt in [0.6, -0.4, 1.2]:
            i = sigmoid(0.3 * xt + 0.1 * h)
            f = sigmoid(-0.2 * xt + 0.5 * h + 1.0)
            g = math.tanh(0.9 * xt - 0.7 * h + 0.1)
            o = sigmoid(0.4 * xt + 0.2 * h - 0.1)
            c = f * c + i * g
            h = o * math.tanh(c)
            want.append(h)
        got = rnn_direction(nc.Tensor(np.array([0.6, -0.4, 1.2]).reshape(1, 3, 1)), p).data
        assert np.max(np.abs(got.ravel() - want)) < 1e-12

    def test_backward_direction_is_reversed_forward(self, f64, rng):
        p = RnnParams.init(rng, "gru", 3, 2)
        x = rng.normal(size=(1, 4, 3))
        rev = rnn_direction(nc.Tensor(x), p, reverse=True).data
        fwd_on_flipped = rnn_direction(nc.Tensor(x[:, ::-1].copy()), p).data
        np.testing.assert_allclose(rev, fwd_on_flipped[:, ::-1], rtol=1e-14)

    def test_input_width_mismatch(self, rng):
        p = RnnParams.init(rng, "gru", 3, 2)
        with pytest.raises(ShapeError):
            birnn(nc.Tensor(np.zeros((1, 2, 4))), p, p)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.sampled_from(["gru", "lstm"]), st.integers(0, 10_000))
    def test_forward_outputs_ignore_padding_content(self, length, cell, seed):
        rng = np.random.default_rng(seed)
        pf, pb = RnnParams.init(rng, cell, 3, 2), RnnParams.init(rng, cell, 3, 2)
        x = rng.normal(size=(1, 6, 3))
        y = x.copy()
        y[:, length:] = rng.normal(size=y[:, length:].shape)
        with nc.precision(64):
            a = birnn(nc.Tensor(x), pf, pb).data
            b = birnn(nc.Tensor(y), pf, pb).data
        np.testing.assert_array_equal(a[:, :length, :2], b[:, :length, :2])


def random_crf(rng, k, scale=1.0, integer=False):
    draw = (lambda s: rng.integers(-2, 3, size=s).astype(float)) if integer else \
        (lambda s: rng.normal(scale=scale, size=s))
    return CrfParams(nc.parameter(draw((k, k))), nc.parameter(draw(k)), nc.parameter(draw(k)))


def all_path_scores(em, p):
    t, k = em.shape
    return {path: path_score(em, path, p.transitions.data, p.start.data, p.end.data)
            for path in itertools.product(range(k), repeat=t)}


class TestCrf:
    def test_four_equal_paths(self, f64):
        p = CrfParams.init(2)
        loss = crf_nll(nc.Tensor(np.zeros((1, 2, 2))), np.array([[1, 0]]), np.array([2]), p)
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)
        assert loss.item() == pytest.approx(1.386294, abs=1e-6)

    def test_single_step(self, f64):
        loss = crf_nll(nc.Tensor(np.zeros((1, 1, 3))), np.array([[2]]), np.array([1]),
                       CrfParams.init(3))
        assert loss.item() == pytest.approx(math.log(3), abs=1e-12)

    @pytest.mark.parametrize("seed", range(12))
    def test_enumeration_oracle(self, f64, seed):
        rng = np.random.default_rng(seed)
        t, k = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        p = random_crf(rng, k)
        em = rng.normal(size=(t, k))
        gold = rng.integers(0, k, size=t)
        scores = all_path_scores(em, p)
        log_z = np.logaddexp.reduce(list(scores.values()))
        want = log_z - scores[tuple(gold)]
        got = crf_nll(nc.Tensor(em[None]), gold[None], np.array([t]), p).item()
        assert abs(got - want) < 1e-8

    def test_padding_positions_ignored(self, f64, rng):
        p = random_crf(rng, 3)
        em = rng.normal(size=(1, 5, 3))
        em2 = em.copy()
        em2[:, 3:] = 100.0
        gold = np.array([[0, 2, 1, 3, 3]])
        a = crf_nll(nc.Tensor(em), gold, np.array([3]), p).item()
        b = crf_nll(nc.Tensor(em2), gold, np.array([3]), p).item()
        assert a == b

    def test_batch_mean(self, f64, rng):
        p = random_crf(rng, 3)
        em = rng.normal(size=(2, 4, 3))
        gold = rng.integers(0, 3, size=(2, 4))
        lengths = np.array([4, 2])
        both = crf_nll(nc.Tensor(em), gold, lengths, p).item()
        each = [crf_nll(nc.Tensor(em[i:i + 1]), gold[i:i + 1], lengths[i:i + 1], p).item()
                for i in range(2)]
        assert both == pytest.approx(np.mean(each), abs=1e-12)

    def test_path_probabilities_normalize(self, f64, rng):
        k, t = 3, 3
        p = random_crf(rng, k)
        em = rng.normal(size=(1, t, k))
        total = 0.0
        for path in itertools.product(range(k), repeat=t):
            total += math.exp(-crf_nll(nc.Tensor(em), np.array([path]), np.array([t]), p).item())
        assert abs(total - 1.0) < 1e-8

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 100_000))
    def test_log_partition_bounds_gold(self, seed):
        rng = np.random.default_rng(seed)
        k, t = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        with nc.precision(64):
            p = random_crf(rng, k, scale=3.0)
            em = rng.normal(scale=3.0, size=(1, t, k))
            gold = rng.integers(0, k, size=(1, t))
            assert crf_nll(nc.Tensor(em), gold, np.array([t]), p).item() >= -1e-12

    def test_zero_length(self):
        with pytest.raises(ValueError):
            crf_log_partition(nc.Tensor(np.zeros((1, 2, 2))), np.array([0]), CrfParams.init(2))

    def test_pad_tag_inside_length(self):
        with pytest.raises(ValueError, match="PAD"):
            crf_nll(nc.Tensor(np.zeros((1, 2, 2))), np.array([[0, 2]]), np.array([2]),
                    CrfParams.init(2))


def tie_rule_best(em, p):
    # among max-score paths, the one the lowest-id argmax rule selects: compare reversed paths
    scores = all_path_scores(em, p)
    best = max(scores.values())
    return min((path for path, s in scores.items() if s == best), key=lambda q: q[::-1])


class TestViterbi:
    def test_all_zero_tie(self):
        assert crf_viterbi(np.zeros((2, 2)), 2, CrfParams.init(2)) == [0, 0]

    def test_dominant_emission(self):
        em = np.tile([0.0, 10.0], (4, 1))
        assert crf_viterbi(em, 4, CrfParams.init(2)) == [1, 1, 1, 1]

    def test_respects_length(self):
        em = np.tile([0.0, 10.0], (4, 1))
        assert crf_viterbi(em, 2, CrfParams.init(2)) == [1, 1]

    @pytest.mark.parametrize("seed", range(20))
    def test_exhaustive_max(self, seed):
        rng = np.random.default_rng(seed)
        t, k = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        p = random_crf(rng, k)
        em = rng.normal(size=(t, k))
        path = crf_viterbi(em, t, p)
        scores = all_path_scores(em, p)
        assert scores[tuple(path)] == pytest.approx(max(scores.values()), abs=1e-12)

    @pytest.mark.parametrize("seed", range(30))
    def test_tie_break_on_integer_scores(self, seed):
        rng = np.random.default_rng(seed)
        t, k = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        p = random_crf(rng, k, integer=True)
        em = rng.integers(-2, 3, size=(t, k)).astype(float)
        assert tuple(crf_viterbi(em, t, p)) == tie_rule_best(em, p)

    def test_zero_length(self):
        with pytest.raises(ValueError):
            crf_viterbi(np.zeros((2, 2)), 0, CrfParams.init(2))
