"""Network building blocks: embedding, dense, dropout, CNN encoder, Bi-RNNs, CRF."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import ShapeError, Tensor

CONV_WIDTHS = (1, 2, 3, 5)


def glorot(rng: np.random.Generator, shape: Sequence[int], fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=tuple(shape))


def _bias_add(x2d: Tensor, bias: Tensor) -> Tensor:
    return nc.add(x2d, nc.expand(bias, 0, x2d.shape[0]))


# ---------------------------------------------------------------------------
# embedding / dense / dropout


def embed_lookup(token_ids: np.ndarray, table: Tensor) -> Tensor:
    """Select rows of ``table``; output shape is ``token_ids.shape + (dim,)``."""
    token_ids = np.asarray(token_ids)
    if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= table.shape[0]):
        raise IndexError(
            f"token id out of range [0, {table.shape[0]}): "
            f"min={token_ids.min()}, max={token_ids.max()}")
    return nc.index(table, token_ids)


@dataclass
class DenseParams:
    weight: Tensor  # (in, out)
    bias: Tensor  # (out,)

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int) -> DenseParams:
        return cls(nc.parameter(glorot(rng, (n_in, n_out), n_in, n_out)),
                   nc.parameter(np.zeros(n_out)))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def dense(x: Tensor, p: DenseParams, activation: str = "none") -> Tensor:
    """Affine map over the trailing axis, with optional relu or softmax."""
    n_in, n_out = p.weight.shape
    if x.shape[-1] != n_in:
        raise ShapeError(f"dense: input trailing extent {x.shape[-1]} != weight rows {n_in}")
    lead = x.shape[:-1]
    flat = nc.reshape(x, (-1, n_in))
    y = nc.reshape(_bias_add(nc.matmul(flat, p.weight), p.bias), lead + (n_out,))
    if activation == "none":
        return y
    if activation == "relu":
        return nc.relu(y)
    if activation == "softmax":
        return nc.softmax(y, axis=-1)
    raise ValueError(f"unknown activation {activation!r}")


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in ``infer`` mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if mode not in ("train", "infer"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "infer" or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    return nc.hadamard(x, nc.constant(mask))


# ---------------------------------------------------------------------------
# convolutional sentence encoder


@dataclass
class ConvEncoderParams:
    filters: dict[int, Tensor]  # width -> (n_filters, width, in_dim)
    biases: dict[int, Tensor]  # width -> (n_filters,)

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, n_filters: int = 128,
             widths: Sequence[int] = CONV_WIDTHS) -> ConvEncoderParams:
        filters, biases = {}, {}
        for w in widths:
            fan_in = w * in_dim
            filters[w] = nc.parameter(glorot(rng, (n_filters, w, in_dim), fan_in, n_filters))
            biases[w] = nc.parameter(np.zeros(n_filters))
        return cls(filters, biases)

    @property
    def widths(self) -> list[int]:
        return sorted(self.filters)

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for w in self.widths:
            out[f"{prefix}.w{w}.filters"] = self.filters[w]
            out[f"{prefix}.w{w}.bias"] = self.biases[w]
        return out


def conv_encoder(x: Tensor, p: ConvEncoderParams) -> Tensor:
    """Parallel valid convolutions over time, relu, max-pool; groups concatenated."""
    batch, length, in_dim = x.shape
    widest = max(p.widths)
    if length < widest:
        raise ShapeError(f"conv_encoder: sequence length {length} < widest filter {widest}")
    pooled = []
    for w in p.widths:
        filt = p.filters[w]
        n_f, fw, fd = filt.shape
        if fd != in_dim:
            raise ShapeError(f"conv_encoder: filter depth {fd} != input width {in_dim}")
        steps = length - w + 1
        # each window row is [x_t ; x_{t+1} ; ... ; x_{t+w-1}]
        windows = nc.concat([nc.index(x, (slice(None), slice(s, s + steps))) for s in range(w)],
                            axis=-1)
        kernel = nc.transpose(nc.reshape(filt, (n_f, w * in_dim)))
        conv = _bias_add(nc.matmul(nc.reshape(windows, (batch * steps, w * in_dim)), kernel),
                         p.biases[w])
        act = nc.relu(nc.reshape(conv, (batch, steps, n_f)))
        pooled.append(nc.max(act, axis=1))
    return nc.concat(pooled, axis=-1)


# ---------------------------------------------------------------------------
# recurrent encoders

_GATES = {"gru": 3, "lstm": 4}


@dataclass
class RnnParams:
    """Gate blocks are stacked column-wise: GRU [z, r, h]; LSTM [i, f, g, o]."""

    cell: str
    w_in: Tensor  # (in, G*H)
    w_hid: Tensor  # (H, G*H)
    bias: Tensor  # (G*H,)

    @classmethod
    def init(cls, rng: np.random.Generator, cell: str, in_dim: int, hidden: int) -> RnnParams:
        g = _GATES[cell]
        w_in = np.concatenate([glorot(rng, (in_dim, hidden), in_dim, hidden) for _ in range(g)], 1)
        w_hid = np.concatenate([glorot(rng, (hidden, hidden), hidden, hidden) for _ in range(g)], 1)
        return cls(cell, nc.parameter(w_in), nc.parameter(w_hid), nc.parameter(np.zeros(g * hidden)))

    @property
    def hidden(self) -> int:
        return self.w_hid.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w_in.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_in": self.w_in, f"{prefix}.w_hid": self.w_hid,
                f"{prefix}.bias": self.bias}


def _cols(t: Tensor, lo: int, hi: int) -> Tensor:
    return nc.index(t, (slice(None), slice(lo, hi))) if t.ndim == 2 else nc.index(t, slice(lo, hi))


def _gru_run(xs: list[Tensor], p: RnnParams) -> list[Tensor]:
    hdim = p.hidden
    u_zr = _cols(p.w_hid, 0, 2 * hdim)
    u_h = _cols(p.w_hid, 2 * hdim, 3 * hdim)
    h = nc.constant(np.zeros((xs[0].shape[0], hdim), dtype=p.w_hid.data.dtype))
    out = []
    for xt in xs:
        zr = nc.sigmoid(nc.add(_cols(xt, 0, 2 * hdim), nc.matmul(h, u_zr)))
        z, r = _cols(zr, 0, hdim), _cols(zr, hdim, 2 * hdim)
        cand = nc.tanh(nc.add(_cols(xt, 2 * hdim, 3 * hdim), nc.matmul(nc.hadamard(r, h), u_h)))
        h = nc.add(h, nc.hadamard(z, nc.sub(cand, h)))
        out.append(h)
    return out


def _lstm_run(xs: list[Tensor], p: RnnParams) -> list[Tensor]:
    hdim = p.hidden
    zeros = np.zeros((xs[0].shape[0], hdim), dtype=p.w_hid.data.dtype)
    h, c = nc.constant(zeros), nc.constant(zeros)
    out = []
    for xt in xs:
        pre = nc.add(xt, nc.matmul(h, p.w_hid))
        ifo = nc.sigmoid(nc.concat([_cols(pre, 0, 2 * hdim), _cols(pre, 3 * hdim, 4 * hdim)], -1))
        i, f, o = (_cols(ifo, k * hdim, (k + 1) * hdim) for k in range(3))
        g = nc.tanh(_cols(pre, 2 * hdim, 3 * hdim))
        c = nc.add(nc.hadamard(f, c), nc.hadamard(i, g))
        h = nc.hadamard(o, nc.tanh(c))
        out.append(h)
    return out


def rnn_direction(x: Tensor, p: RnnParams, reverse: bool = False) -> Tensor:
    """Run one direction over ``x`` (B, T, d); returns (B, T, H) in input order."""
    batch, length, in_dim = x.shape
    if in_dim != p.in_dim:
        raise ShapeError(f"{p.cell}: input width {in_dim} != cell input width {p.in_dim}")
    proj = _bias_add(nc.matmul(nc.reshape(x, (batch * length, in_dim)), p.w_in), p.bias)
    proj = nc.transpose(nc.reshape(proj, (batch, length, -1)), (1, 0, 2))
    steps = [nc.index(proj, t) for t in range(length)]
    if reverse:
        steps.reverse()
    hs = (_gru_run if p.cell == "gru" else _lstm_run)(steps, p)
    if reverse:
        hs.reverse()
    return nc.stack(hs, axis=1)


def birnn(x: Tensor, p_fwd: RnnParams, p_bwd: RnnParams) -> Tensor:
    """Bidirectional encoder; per-position ``[h_fwd ; h_bwd]`` of width 2H."""
    if p_fwd.cell != p_bwd.cell:
        raise ValueError("forward and backward cells differ")
    return nc.concat([rnn_direction(x, p_fwd), rnn_direction(x, p_bwd, reverse=True)], axis=-1)


# ---------------------------------------------------------------------------
# linear-chain CRF


@dataclass
class CrfParams:
    transitions: Tensor  # (K, K): score of tag j following tag i at [i, j]
    start: Tensor  # (K,)
    end: Tensor  # (K,)

    @classmethod
    def init(cls, num_tags: int) -> CrfParams:
        return cls(nc.parameter(np.zeros((num_tags, num_tags))),
                   nc.parameter(np.zeros(num_tags)), nc.parameter(np.zeros(num_tags)))

    @property
    def num_tags(self) -> int:
        return self.start.shape[0]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.transitions": self.transitions, f"{prefix}.start": self.start,
                f"{prefix}.end": self.end}


def _check_lengths(lengths: np.ndarray, max_len: int) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.size and lengths.min() < 1:
        raise ValueError("CRF needs sequences of length >= 1")
    if lengths.size and lengths.max() > max_len:
        raise ValueError(f"length {lengths.max()} exceeds emission window {max_len}")
    return lengths


def crf_log_partition(emissions: Tensor, lengths: np.ndarray, p: CrfParams) -> Tensor:
    """Forward algorithm in log space; returns logZ per sequence, shape (B,)."""
    batch, length, k = emissions.shape
    lengths = _check_lengths(lengths, length)
    trans = nc.expand(p.transitions, 0, batch)
    alpha = nc.add(nc.index(emissions, (slice(None), 0)), nc.expand(p.start, 0, batch))
    for t in range(1, int(lengths.max())):
        scores = nc.add(nc.add(nc.expand(alpha, 2, k), trans),
                        nc.expand(nc.index(emissions, (slice(None), t)), 1, k))
        nxt = nc.logsumexp(scores, axis=1)
        live = np.repeat((t < lengths)[:, None], k, axis=1)
        alpha = nc.where(live, nxt, alpha)
    return nc.logsumexp(nc.add(alpha, nc.expand(p.end, 0, batch)), axis=1)


def crf_gold_score(emissions: Tensor, gold: np.ndarray, lengths: np.ndarray,
                   p: CrfParams) -> Tensor:
    """Total score of the gold paths, summed over the batch."""
    batch, length, k = emissions.shape
    lengths = _check_lengths(lengths, length)
    gold = np.asarray(gold, dtype=np.int64)
    valid = np.arange(length)[None, :] < lengths[:, None]
    if np.any((gold[valid] < 0) | (gold[valid] >= k)):
        raise ValueError("gold tag outside [0, K) inside sequence length (PAD tag?)")
    b_idx, t_idx = np.nonzero(valid)
    total = nc.sum(nc.index(emissions, (b_idx, t_idx, gold[b_idx, t_idx])))
    rows = np.arange(batch)
    total = nc.add(total, nc.sum(nc.index(p.start, gold[:, 0])))
    total = nc.add(total, nc.sum(nc.index(p.end, gold[rows, lengths - 1])))
    pair = np.arange(1, length)[None, :] < lengths[:, None]
    pb, pt = np.nonzero(pair)
    if pb.size:
        pt = pt + 1
        total = nc.add(total, nc.sum(nc.index(p.transitions, (gold[pb, pt - 1], gold[pb, pt]))))
    return total


def crf_nll(emissions: Tensor, gold: np.ndarray, lengths: np.ndarray, p: CrfParams) -> Tensor:
    """Batch-mean negative log-likelihood of the gold tag paths."""
    batch = emissions.shape[0]
    log_z = nc.sum(crf_log_partition(emissions, lengths, p))
    return nc.scale(nc.sub(log_z, crf_gold_score(emissions, gold, lengths, p)), 1.0 / batch)


def path_score(emissions: np.ndarray, path: Sequence[int], transitions: np.ndarray,
               start: np.ndarray, end: np.ndarray) -> float:
    em = np.asarray(emissions)
    s = start[path[0]] + end[path[-1]] + sum(em[t, y] for t, y in enumerate(path))
    s += sum(transitions[a, b] for a, b in zip(path[:-1], path[1:]))
    return float(s)


def crf_viterbi(emissions: np.ndarray, length: int, p: CrfParams) -> list[int]:
    """Best path over the first ``length`` positions; ties go to the lowest tag id."""
    if length < 1:
        raise ValueError("viterbi needs length >= 1")
    em = np.asarray(emissions.data if isinstance(emissions, Tensor) else emissions,
                    dtype=np.float64)[:length]
    trans = p.transitions.data.astype(np.float64)
    delta = em[0] + p.start.data
    back = []
    for t in range(1, length):
        cand = delta[:, None] + trans  # (prev, cur)
        best_prev = cand.argmax(axis=0)
        back.append(best_prev)
        delta = cand[best_prev, np.arange(len(best_prev))] + em[t]
    last = int((delta + p.end.data).argmax())
    path = [last]
    for bp in reversed(back):
        path.append(int(bp[path[-1]]))
    path.reverse()
    return path
