"""64-bit central-difference checks for every layer and a toy full model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numcore as nc
from .datapipe import Batch, LabelMaps, Vocabulary, random_embeddings
from .fusion import MlbParams, broadcast_intent, dense_add, mlb_fuse
from .layers import (ConvEncoderParams, CrfParams, DenseParams, RnnParams, birnn, conv_encoder,
                     crf_nll, dense, dropout)
from .model import ModelConfig, build_model, joint_loss, model_forward
from .numcore import GradientReport, Tensor

H_STEP = 1e-5
TOL = 1e-4


def _randomize(params: dict[str, Tensor], rng: np.random.Generator, scale: float = 0.5) -> None:
    for t in params.values():
        t.data[...] = rng.normal(scale=scale, size=t.shape)


def check_dense(rng):
    x = nc.parameter(rng.normal(size=(2, 3, 4)))
    p = DenseParams.init(rng, 4, 5)
    _randomize(p.named("d"), rng)
    w = rng.normal(size=(2, 3, 5))
    return {"x": x, **p.named("d")}, lambda: nc.sum(nc.hadamard(dense(x, p), nc.constant(w)))


def check_dropout_off(rng):
    x = nc.parameter(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 4))
    return {"x": x}, lambda: nc.sum(nc.hadamard(dropout(x, 0.5, "infer", None), nc.constant(w)))


def check_conv(rng):
    x = nc.parameter(rng.normal(size=(2, 6, 3)))
    p = ConvEncoderParams.init(rng, 3, n_filters=2)
    _randomize(p.named("c"), rng)
    w = rng.normal(size=(2, 8))
    return {"x": x, **p.named("c")}, lambda: nc.sum(nc.hadamard(conv_encoder(x, p), nc.constant(w)))


def _check_rnn(cell):
    def build(rng):
        x = nc.parameter(rng.normal(size=(2, 4, 3)))
        pf, pb = RnnParams.init(rng, cell, 3, 2), RnnParams.init(rng, cell, 3, 2)
        _randomize({**pf.named("f"), **pb.named("b")}, rng)
        w = rng.normal(size=(2, 4, 4))
        return ({"x": x, **pf.named("f"), **pb.named("b")},
                lambda: nc.sum(nc.hadamard(birnn(x, pf, pb), nc.constant(w))))
    return build


def check_crf(rng):
    em = nc.parameter(rng.normal(size=(3, 4, 3)))
    p = CrfParams.init(3)
    _randomize(p.named("crf"), rng)
    gold = rng.integers(0, 3, size=(3, 4))
    lengths = np.array([4, 2, 1])
    return {"emissions": em, **p.named("crf")}, lambda: crf_nll(em, gold, lengths, p)


def check_mlb(rng):
    x = nc.parameter(rng.normal(size=(2, 3, 4)))
    y = nc.parameter(rng.normal(size=(2, 3, 5)))
    p = MlbParams.init(rng, 4, 5, 2, 3)
    _randomize(p.named("mlb"), rng)
    w = rng.normal(size=(2, 3, 3))
    return ({"x": x, "y": y, **p.named("mlb")},
            lambda: nc.sum(nc.hadamard(mlb_fuse(x, y, p), nc.constant(w))))


def check_dense_add(rng):
    x = nc.parameter(rng.normal(size=(2, 3, 4)))
    y = nc.parameter(rng.normal(size=(2, 3, 4)))
    w = rng.normal(size=(2, 3, 4))
    return {"x": x, "y": y}, lambda: nc.sum(nc.hadamard(dense_add(x, y), nc.constant(w)))


def check_broadcast(rng):
    v = nc.parameter(rng.normal(size=(2, 3)))
    w = rng.normal(size=(2, 4, 3))
    return {"v": v}, lambda: nc.sum(nc.hadamard(broadcast_intent(v, 4), nc.constant(w)))


def check_softmax_ce(rng):
    logits = nc.parameter(rng.normal(size=(4, 5)))
    gold = rng.integers(0, 5, size=4)

    def loss():
        probs = nc.softmax(logits, axis=-1)
        return nc.scale(nc.sum(nc.log(nc.index(probs, (np.arange(4), gold)))), -0.25)

    return {"logits": logits}, loss


def toy_model(variant: str = "model2b", seed: int = 0):
    """Toy dims: L2=4, L1=5, H=3, vocab 7, 2 intents, 3 tags, k=2, l=3, no dropout."""
    cfg = ModelConfig(variant=variant, embed_dim=5, max_len=4, hidden=3, feature_width=4,
                      conv_widths=(1, 2), conv_filters=2, dropout=0.0, mlb_rank=2, mlb_out=3,
                      seed=seed, width=64)
    vocab = Vocabulary.from_list(["<pad>", "<unk>", "a", "b", "c", "d", "e"])
    labels = LabelMaps(["x", "y"], ["O", "B-t", "I-t"])
    model = build_model(cfg, vocab, labels, random_embeddings(vocab, seed, 5))
    batch = Batch(token_ids=np.array([[2, 3, 4, 0], [5, 6, 1, 2]]),
                  tag_ids=np.array([[0, 1, 2, 3], [1, 2, 0, 0]]),
                  intent_ids=np.array([0, 1]), lengths=np.array([3, 4]))
    return model, batch


def _check_model(variant):
    def build(rng):
        model, batch = toy_model(variant)
        params = model.parameters()
        # break the zero-initialized biases so no gradient sits at an exact kink
        for name, t in params.items():
            if name != "embedding":
                t.data[...] = rng.normal(scale=0.5, size=t.shape)
        return params, lambda: joint_loss(model_forward(model, batch, "infer"), batch, model)
    return build


CHECKS: dict[str, Callable] = {
    "dense": check_dense,
    "dropout (off path)": check_dropout_off,
    "conv_encoder": check_conv,
    "BiGRU": _check_rnn("gru"),
    "BiLSTM": _check_rnn("lstm"),
    "CRF NLL": check_crf,
    "mlb_fuse": check_mlb,
    "dense_add": check_dense_add,
    "broadcast_intent": check_broadcast,
    "softmax + cross-entropy": check_softmax_ce,
    "model2b (toy)": _check_model("model2b"),
    "model1b (toy)": _check_model("model1b"),
}


def run_suite(seed: int = 0, h: float = H_STEP, tol: float = TOL) -> dict[str, GradientReport]:
    reports = {}
    with nc.precision(64):
        for i, (name, build) in enumerate(CHECKS.items()):
            rng = np.random.default_rng([seed, i])
            params, fn = build(rng)
            reports[name] = nc.grad_check(fn, params, h, tol)
    return reports
