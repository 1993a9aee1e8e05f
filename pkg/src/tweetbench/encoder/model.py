"""Mini BERT-style encoder: embeddings, post-LN transformer blocks, [CLS] head, MLM head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..tokenizer import MaskedBatch, NOT_MASKED, TokenSequence, stack_sequences
from . import functional as F
from .config import EncoderConfig, parameter_shapes

INIT_STD = 0.02
_ZERO_INIT = {"beta", "b", "bq", "bk", "bv", "bo", "b1", "b2", "out_bias"}


class SequenceLengthError(ValueError):
    pass


class VocabRangeError(ValueError):
    pass


class LossError(ValueError):
    pass


class EncoderModel:
    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray]):
        expected = parameter_shapes(cfg)
        if list(params) != list(expected):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape}, expected {shape}")
        self.cfg = cfg
        self.params = params

    @property
    def dtype(self):
        return self.params["emb.token"].dtype

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "EncoderModel":
        return EncoderModel(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params.values())

    def __repr__(self):
        c = self.cfg
        return (f"EncoderModel(L={c.num_layers}, H={c.hidden_size}, A={c.num_heads}, "
                f"F={c.ffn_size}, V={c.vocab_size}, C={c.num_classes}, "
                f"params={self.num_parameters():,})")


def _is_zero_init(name: str) -> bool:
    return name.rsplit(".", 1)[-1] in _ZERO_INIT


def init_model(cfg: EncoderConfig, dtype=np.float64) -> EncoderModel:
    """Weights ~ N(0, 0.02^2) drawn in parameter order from ``cfg.seed``; biases 0, LN scale 1."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith("gamma"):
            params[name] = np.ones(shape, dtype=dtype)
        elif _is_zero_init(name):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = rng.normal(0.0, INIT_STD, size=shape).astype(dtype)
    return EncoderModel(cfg, params)


class ForwardOutput(NamedTuple):
    logits: np.ndarray
    hidden: np.ndarray


def as_arrays(batch):
    """Accept TokenSequences or an (ids, segment_ids, attention_mask) triple."""
    if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], TokenSequence):
        return stack_sequences(batch, trim=False)
    ids, segs, mask = batch
    return np.asarray(ids), np.asarray(segs), np.asarray(mask)


def _check_inputs(cfg: EncoderConfig, ids, segs):
    if ids.ndim != 2:
        raise ValueError("ids must be a (batch, length) array")
    if ids.shape[1] > cfg.max_len:
        raise SequenceLengthError(f"sequence length {ids.shape[1]} exceeds max_len {cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise VocabRangeError(f"token ids must lie in [0, {cfg.vocab_size})")
    if segs.size and (segs.min() < 0 or segs.max() >= cfg.num_segments):
        raise VocabRangeError(f"segment ids must lie in [0, {cfg.num_segments})")


@dataclass
class _Cache:
    ids: np.ndarray
    segs: np.ndarray
    mask: np.ndarray
    emb_ln: tuple
    emb_keep: np.ndarray | None
    layers: list
    hidden: np.ndarray


def encode_hidden(model: EncoderModel, ids, segs, mask, rng=None):
    """Final hidden states (B, T, H). Dropout is active only when ``rng`` is given."""
    cfg, P = model.cfg, model.params
    _check_inputs(cfg, ids, segs)
    B, T = ids.shape
    H, A, d = cfg.hidden_size, cfg.num_heads, cfg.head_dim
    rate = cfg.dropout_rate if rng is not None else 0.0
    dt = model.dtype

    e = P["emb.token"][ids] + P["emb.position"][:T] + P["emb.segment"][segs]
    x, emb_ln = F.layer_norm(e, P["emb.ln.gamma"], P["emb.ln.beta"])
    emb_keep = F.dropout_mask(rng, x.shape, rate, dt)
    if emb_keep is not None:
        x = x * emb_keep
    key_mask = np.asarray(mask)[:, None, :]

    def heads(t):
        return t.reshape(B, T, A, d).transpose(0, 2, 1, 3)

    layers = []
    for i in range(cfg.num_layers):
        p = f"layer{i}."
        q = heads(x @ P[p + "attn.wq"] + P[p + "attn.bq"])
        k = heads(x @ P[p + "attn.wk"] + P[p + "attn.bk"])
        v = heads(x @ P[p + "attn.wv"] + P[p + "attn.bv"])
        w = F.attention_weights(q, k, key_mask)
        keep_a = F.dropout_mask(rng, w.shape, rate, dt)
        ctx = (w if keep_a is None else w * keep_a) @ v
        ctx = ctx.transpose(0, 2, 1, 3).reshape(B, T, H)
        o = ctx @ P[p + "attn.wo"] + P[p + "attn.bo"]
        keep_o = F.dropout_mask(rng, o.shape, rate, dt)
        if keep_o is not None:
            o = o * keep_o
        h1, ln1 = F.layer_norm(x + o, P[p + "attn.ln.gamma"], P[p + "attn.ln.beta"])
        u = h1 @ P[p + "ffn.w1"] + P[p + "ffn.b1"]
        f = F.gelu(u)
        g = f @ P[p + "ffn.w2"] + P[p + "ffn.b2"]
        keep_g = F.dropout_mask(rng, g.shape, rate, dt)
        if keep_g is not None:
            g = g * keep_g
        h2, ln2 = F.layer_norm(h1 + g, P[p + "ffn.ln.gamma"], P[p + "ffn.ln.beta"])
        layers.append(dict(x=x, q=q, k=k, v=v, w=w, keep_a=keep_a, ctx=ctx, keep_o=keep_o,
                           ln1=ln1, h1=h1, u=u, f=f, keep_g=keep_g, ln2=ln2))
        x = h2
    return x, _Cache(ids, segs, mask, emb_ln, emb_keep, layers, x)


def encode_hidden_backward(model: EncoderModel, cache: _Cache, dh) -> dict[str, np.ndarray]:
    cfg, P = model.cfg, model.params
    B, T = cache.ids.shape
    H, A, d = cfg.hidden_size, cfg.num_heads, cfg.head_dim
    grads: dict[str, np.ndarray] = {}

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(B, T, H)

    def flat(t):
        return t.reshape(-1, t.shape[-1])

    for i in reversed(range(cfg.num_layers)):
        p = f"layer{i}."
        c = cache.layers[i]
        ds2, grads[p + "ffn.ln.gamma"], grads[p + "ffn.ln.beta"] = F.layer_norm_backward(
            dh, P[p + "ffn.ln.gamma"], c["ln2"])
        dg = ds2 if c["keep_g"] is None else ds2 * c["keep_g"]
        grads[p + "ffn.w2"] = flat(c["f"]).T @ flat(dg)
        grads[p + "ffn.b2"] = dg.sum(axis=(0, 1))
        du = (dg @ P[p + "ffn.w2"].T) * F.gelu_grad(c["u"])
        grads[p + "ffn.w1"] = flat(c["h1"]).T @ flat(du)
        grads[p + "ffn.b1"] = du.sum(axis=(0, 1))
        dh1 = ds2 + du @ P[p + "ffn.w1"].T

        ds1, grads[p + "attn.ln.gamma"], grads[p + "attn.ln.beta"] = F.layer_norm_backward(
            dh1, P[p + "attn.ln.gamma"], c["ln1"])
        do = ds1 if c["keep_o"] is None else ds1 * c["keep_o"]
        grads[p + "attn.wo"] = flat(c["ctx"]).T @ flat(do)
        grads[p + "attn.bo"] = do.sum(axis=(0, 1))
        dctx = (do @ P[p + "attn.wo"].T).reshape(B, T, A, d).transpose(0, 2, 1, 3)
        dq, dk, dv = F.attention_backward(dctx, c["q"], c["k"], c["v"], c["w"], c["keep_a"])
        dx = ds1
        x = flat(c["x"])
        for name, dt in (("q", dq), ("k", dk), ("v", dv)):
            dt = merge(dt)
            grads[p + f"attn.w{name}"] = x.T @ flat(dt)
            grads[p + f"attn.b{name}"] = dt.sum(axis=(0, 1))
            dx = dx + dt @ P[p + f"attn.w{name}"].T
        dh = dx

    if cache.emb_keep is not None:
        dh = dh * cache.emb_keep
    de, grads["emb.ln.gamma"], grads["emb.ln.beta"] = F.layer_norm_backward(
        dh, P["emb.ln.gamma"], cache.emb_ln)
    dtok = np.zeros_like(P["emb.token"])
    np.add.at(dtok, cache.ids, de)
    dpos = np.zeros_like(P["emb.position"])
    dpos[:T] = de.sum(axis=0)
    dseg = np.zeros_like(P["emb.segment"])
    np.add.at(dseg, cache.segs, de)
    grads["emb.token"] = dtok
    grads["emb.position"] = dpos
    grads["emb.segment"] = dseg
    return grads


def classifier_head(model: EncoderModel, hidden, rng=None):
    P = model.params
    cls = hidden[:, 0, :]
    pooled = np.tanh(cls @ P["pooler.w"] + P["pooler.b"])
    rate = model.cfg.dropout_rate if rng is not None else 0.0
    keep = F.dropout_mask(rng, pooled.shape, rate, model.dtype)
    dropped = pooled if keep is None else pooled * keep
    logits = dropped @ P["classifier.w"] + P["classifier.b"]
    return logits, (cls, pooled, keep, dropped)


def classifier_head_backward(model: EncoderModel, cache, dlogits, hidden_shape):
    P = model.params
    cls, pooled, keep, dropped = cache
    grads = {"classifier.w": dropped.T @ dlogits, "classifier.b": dlogits.sum(axis=0)}
    dp = dlogits @ P["classifier.w"].T
    if keep is not None:
        dp = dp * keep
    dz = dp * (1.0 - pooled * pooled)
    grads["pooler.w"] = cls.T @ dz
    grads["pooler.b"] = dz.sum(axis=0)
    dh = np.zeros(hidden_shape, dtype=dlogits.dtype)
    dh[:, 0, :] = dz @ P["pooler.w"].T
    return grads, dh


def forward(model: EncoderModel, batch, train: bool = False, rng=None) -> ForwardOutput:
    """Class logits (B, C) read from the [CLS] position, plus final hidden states.

    Inference (the default) is deterministic; ``train=True`` with an ``rng``
    turns dropout on.
    """
    ids, segs, mask = as_arrays(batch)
    hidden, _ = encode_hidden(model, ids, segs, mask, rng if train else None)
    logits, _ = classifier_head(model, hidden, rng if train else None)
    return ForwardOutput(logits, hidden)


def _zero_missing(model: EncoderModel, grads: dict) -> dict:
    return {k: grads[k] if k in grads else np.zeros_like(v) for k, v in model.params.items()}


def classification_loss_and_grads(model: EncoderModel, ids, segs, mask, labels, rng=None):
    """Mean cross-entropy over the batch and gradients for every parameter."""
    hidden, cache = encode_hidden(model, ids, segs, mask, rng)
    logits, head_cache = classifier_head(model, hidden, rng)
    loss, dlogits = F.cross_entropy(logits, np.asarray(labels))
    grads, dh = classifier_head_backward(model, head_cache, dlogits, hidden.shape)
    grads.update(encode_hidden_backward(model, cache, dh))
    return float(loss), _zero_missing(model, grads), logits


class MLMOutput(NamedTuple):
    logits: np.ndarray
    targets: np.ndarray
    loss: float


def _mlm_head(model: EncoderModel, hidden, rows, cols):
    P = model.params
    hm = hidden[rows, cols]
    u = hm @ P["mlm.w"] + P["mlm.b"]
    t = F.gelu(u)
    tn, ln = F.layer_norm(t, P["mlm.ln.gamma"], P["mlm.ln.beta"])
    logits = tn @ P["emb.token"].T + P["mlm.out_bias"]
    return logits, (hm, u, tn, ln)


def _masked_arrays(masked: MaskedBatch):
    ids, segs, mask = stack_sequences(masked.inputs, trim=False)
    labels = np.array(masked.mlm_labels, dtype=np.int64)
    rows, cols = np.nonzero(labels != NOT_MASKED)
    if rows.size == 0:
        raise LossError("the batch has no masked positions")
    return ids, segs, mask, rows, cols, labels[rows, cols]


def mlm_forward(model: EncoderModel, masked: MaskedBatch) -> MLMOutput:
    """Vocabulary logits at every masked position and their mean cross-entropy."""
    if not model.cfg.mlm_head:
        raise ValueError("model was built without an MLM head (EncoderConfig.mlm_head)")
    ids, segs, mask, rows, cols, targets = _masked_arrays(masked)
    hidden, _ = encode_hidden(model, ids, segs, mask)
    logits, _ = _mlm_head(model, hidden, rows, cols)
    loss, _ = F.cross_entropy(logits, targets)
    return MLMOutput(logits, targets, float(loss))


def mlm_loss_and_grads(model: EncoderModel, masked: MaskedBatch, rng=None):
    if not model.cfg.mlm_head:
        raise ValueError("model was built without an MLM head (EncoderConfig.mlm_head)")
    P = model.params
    ids, segs, mask, rows, cols, targets = _masked_arrays(masked)
    hidden, cache = encode_hidden(model, ids, segs, mask, rng)
    logits, (hm, u, tn, ln) = _mlm_head(model, hidden, rows, cols)
    loss, dlogits = F.cross_entropy(logits, targets)

    grads = {"mlm.out_bias": dlogits.sum(axis=0)}
    dtok_out = dlogits.T @ tn
    dtn = dlogits @ P["emb.token"]
    dt, grads["mlm.ln.gamma"], grads["mlm.ln.beta"] = F.layer_norm_backward(
        dtn, P["mlm.ln.gamma"], ln)
    du = dt * F.gelu_grad(u)
    grads["mlm.w"] = hm.T @ du
    grads["mlm.b"] = du.sum(axis=0)
    dh = np.zeros_like(hidden)
    np.add.at(dh, (rows, cols), du @ P["mlm.w"].T)
    grads.update(encode_hidden_backward(model, cache, dh))
    grads["emb.token"] = grads["emb.token"] + dtok_out
    return float(loss), _zero_missing(model, grads)


def predict_logits(model: EncoderModel, seqs: Sequence[TokenSequence], batch_size: int = 64):
    out = []
    for start in range(0, len(seqs), batch_size):
        ids, segs, mask = stack_sequences(seqs[start:start + batch_size])
        hidden, _ = encode_hidden(model, ids, segs, mask)
        out.append(classifier_head(model, hidden)[0])
    if not out:
        return np.zeros((0, model.cfg.num_classes), dtype=model.dtype)
    return np.concatenate(out, axis=0)
