import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tweetbench.corpus import Dataset
from tweetbench.encoder import (BASE, DESK, LARGE, ConfigError, ConfigMismatchError,
                                EncoderConfig, EncoderModel, LossError, SequenceLengthError,
                                TrainConfig, TrainingDivergedError, VocabRangeError,
                                WeightFormatError, attention_weights, forward, grad_check,
                                init_model, load_weights, mlm_forward, parameter_count,
                                parameter_shapes, pretrain_mlm, read_history, save_weights,
                                self_attention, train_classifier)
from tweetbench.encoder.config import tensor_kind
from tweetbench.encoder.functional import AttentionMaskError, layer_norm
from tweetbench.encoder.train import accuracy, label_indices
from tweetbench.fixtures import fixture_datasets, synthetic_records, toy_dataset
from tweetbench.tokenizer import (CLS_ID, NOT_MASKED, MaskedBatch, TextEncoder, TokenSequence,
                                  apply_mlm_mask, build_vocab, encode)


def oracle_softmax(row):
    m = max(row)
    e = [math.exp(x - m) for x in row]
    s = sum(e)
    return [x / s for x in e]


# attention -------------------------------------------------------------------

def test_identical_rows_give_mean_of_unmasked_values():
    rng = np.random.default_rng(0)
    q = np.tile(rng.normal(size=8), (5, 1))
    v = rng.normal(size=(5, 3))
    mask = np.array([1, 1, 0, 1, 0])
    out = self_attention(q, q, v, mask)
    np.testing.assert_allclose(out, np.tile(v[mask == 1].mean(axis=0), (5, 1)), atol=1e-12)


def test_single_unmasked_position():
    rng = np.random.default_rng(1)
    q, k, v = rng.normal(size=(3, 4, 8))
    out = self_attention(q, k, v, np.array([0, 0, 1, 0]))
    assert (out == v[2]).all()


def test_weights_match_direct_softmax():
    rng = np.random.default_rng(2)
    q, k = rng.normal(size=(2, 4, 8))
    mask = np.array([1, 0, 1, 1])
    w = attention_weights(q, k, mask)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    for i in range(4):
        scores = [float(q[i] @ k[j]) / math.sqrt(8) for j in range(4) if mask[j]]
        want = oracle_softmax(scores)
        np.testing.assert_allclose(w[i, mask == 1], want, atol=1e-12)
        assert w[i, 1] == 0.0


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_attention_rows_are_stochastic(seed, tq, tk):
    rng = np.random.default_rng(seed)
    q, k = rng.normal(size=(tq, 4)), rng.normal(size=(tk, 4))
    mask = rng.integers(0, 2, tk)
    mask[rng.integers(tk)] = 1
    w = attention_weights(q, k, mask)
    assert np.all(np.abs(w.sum(-1) - 1) < 1e-12)
    assert (w[:, mask == 0] == 0).all()


def test_all_masked_raises():
    with pytest.raises(AttentionMaskError):
        attention_weights(np.ones((2, 4)), np.ones((2, 4)), np.zeros(2))


def test_layer_norm_moments():
    x = np.random.default_rng(3).normal(3.0, 5.0, size=(4, 7, 64))
    y, _ = layer_norm(x, np.ones(64), np.zeros(64))
    assert np.abs(y.mean(-1)).max() < 1e-9
    assert np.abs(y.var(-1) - 1).max() < 1e-9


# configuration and parameters ------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(hidden_size=66, num_heads=4)
    with pytest.raises(ConfigError):
        EncoderConfig(num_layers=0)
    with pytest.raises(ConfigError):
        EncoderConfig.from_dict({"layers": 2})
    assert (LARGE.num_layers, LARGE.hidden_size, LARGE.num_heads) == (24, 1024, 16)
    assert EncoderConfig.from_dict(DESK.to_dict()) == DESK


def test_desk_parameter_count_by_hand():
    H, F, V, T, C, L = 64, 128, 1000, 64, 3, 2
    emb = V * H + T * H + 2 * H + 2 * H
    per_layer = 4 * (H * H + H) + 2 * H + H * F + F + F * H + H + 2 * H
    head = H * H + H + H * C + C
    assert parameter_count(DESK) == emb + L * per_layer + head
    assert init_model(DESK).num_parameters() == parameter_count(DESK)


def test_base_count_near_110m():
    n = parameter_count(BASE)
    assert abs(n - 110e6) / 110e6 < 0.05


@settings(max_examples=20)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 8), st.integers(1, 64),
       st.integers(5, 500), st.integers(1, 32), st.integers(1, 5), st.booleans())
def test_count_matches_brute_force(L, A, hd, F, V, T, C, mlm):
    cfg = EncoderConfig(num_layers=L, hidden_size=A * hd, num_heads=A, ffn_size=F, vocab_size=V,
                        max_len=T, num_classes=C, mlm_head=mlm)
    model = init_model(cfg)
    assert sum(p.size for p in model.params.values()) == parameter_count(cfg)
    assert all(model.params[n].shape == s for n, s in parameter_shapes(cfg).items())


def test_init_is_deterministic_and_conventional():
    a, b = init_model(DESK), init_model(DESK)
    assert all(np.array_equal(a.params[n], b.params[n]) for n in a.params)
    c = init_model(DESK.replace(seed=1))
    assert not np.array_equal(a.params["emb.token"], c.params["emb.token"])
    assert (a.params["layer0.attn.ln.gamma"] == 1).all()
    assert (a.params["layer0.attn.ln.beta"] == 0).all()
    assert abs(a.params["emb.token"].std() - 0.02) < 0.001
    assert a.all_finite()


def test_tensor_kind():
    assert tensor_kind("layer11.ffn.w1") == "ffn.w1"
    assert tensor_kind("emb.token") == "emb.token"


# forward ---------------------------------------------------------------------

def random_batch(cfg, B=3, T=12, seed=0, pad_row=1, pad_from=9):
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, cfg.vocab_size, (B, T))
    ids[:, 0] = CLS_ID
    mask = np.ones((B, T), dtype=np.int64)
    mask[pad_row, pad_from:] = 0
    ids[mask == 0] = 0
    segs = np.zeros((B, T), dtype=np.int64)
    segs[:, T // 2:] = 1
    return ids, segs, mask


def test_logit_shape_and_inference_determinism():
    model = init_model(DESK)
    batch = random_batch(DESK, B=5)
    out = forward(model, batch)
    assert out.logits.shape == (5, 3)
    assert out.hidden.shape == (5, 12, 64)
    assert np.array_equal(out.logits, forward(model, batch).logits)


def test_dropout_only_in_training_mode():
    model = init_model(DESK.replace(dropout_rate=0.5))
    batch = random_batch(DESK)
    a = forward(model, batch, train=True, rng=np.random.default_rng(0)).logits
    assert not np.array_equal(a, forward(model, batch).logits)


@pytest.mark.parametrize("cfg", [DESK, DESK.replace(num_layers=1, hidden_size=16, num_heads=2,
                                                    ffn_size=8, seed=4)])
def test_padding_invariance_is_exact(cfg):
    model = init_model(cfg)
    ids, segs, mask = random_batch(cfg)
    base = forward(model, (ids, segs, mask)).logits
    rng = np.random.default_rng(9)
    for _ in range(5):
        ids2 = ids.copy()
        ids2[mask == 0] = rng.integers(0, cfg.vocab_size, (mask == 0).sum())
        assert np.array_equal(forward(model, (ids2, segs, mask)).logits, base)


def test_input_errors():
    model = init_model(DESK)
    ids, segs, mask = random_batch(DESK)
    with pytest.raises(VocabRangeError):
        forward(model, (ids + DESK.vocab_size, segs, mask))
    long = np.ones((1, DESK.max_len + 1), dtype=np.int64)
    with pytest.raises(SequenceLengthError):
        forward(model, (long, long * 0, long))


_SUBPROCESS = """
import numpy as np
from tweetbench.encoder import DESK, forward, init_model
rng = np.random.default_rng(0)
ids = rng.integers(5, 1000, (2, 10)); ids[:, 0] = 2
print(forward(init_model(DESK), (ids, np.zeros_like(ids), np.ones_like(ids))).logits.tobytes().hex())
"""


def test_logits_identical_across_processes():
    runs = [subprocess.run([sys.executable, "-c", _SUBPROCESS], capture_output=True, text=True,
                           check=True).stdout for _ in range(2)]
    assert runs[0] == runs[1] and len(runs[0]) > 10


# gradient check --------------------------------------------------------------

def test_grad_check_desk_config_every_kind():
    model = init_model(DESK.replace(dropout_rate=0.0))
    ids, segs, mask = random_batch(DESK)
    res = grad_check(model, (ids, segs, mask), np.array([0, 2, 1]), epsilon=1e-3, n_coords=200)
    assert res.n_coords >= 200
    assert set(res.per_kind) == {tensor_kind(n) for n in model.params}
    assert res.max_rel_error < 1e-4, res.per_kind


def test_grad_check_mutation_is_detected():
    model = init_model(DESK.replace(dropout_rate=0.0))
    batch = random_batch(DESK)
    res = grad_check(model, batch, np.array([0, 2, 1]), n_coords=60,
                     mutate={"layer1.attn.wv": 2.0})
    assert not res.passed
    assert res.max_rel_error > 0.1


def test_grad_check_saturated_loss_uses_absolute_threshold():
    model = init_model(DESK.replace(dropout_rate=0.0))
    model.params["classifier.b"][:] = [60.0, 0.0, 0.0]
    res = grad_check(model, random_batch(DESK), np.zeros(3, dtype=np.int64), n_coords=60)
    assert res.passed
    assert res.max_abs_error < 1e-8


def test_grad_check_mlm_loss():
    cfg = DESK.replace(dropout_rate=0.0, mlm_head=True, vocab_size=60)
    model = init_model(cfg)
    ids, segs, mask = random_batch(cfg)
    seqs = [TokenSequence(tuple(map(int, i)), tuple(map(int, s)), tuple(map(int, m)),
                          frozenset({0})) for i, s, m in zip(ids, segs, mask)]
    masked = apply_mlm_mask(seqs, 0.3, 1)
    # truncation error of the central difference is O(eps^2); 1e-4 isolates the MLM path
    res = grad_check(model, masked, epsilon=1e-4, n_coords=200)
    assert res.passed, res.per_kind


# masked LM -------------------------------------------------------------------

def _lm_corpus(n=200, seed=0):
    return [r.text for r in synthetic_records(n, seed)]


def test_initial_mlm_loss_near_log_vocab():
    texts = _lm_corpus()
    vocab = build_vocab(texts, 300, 2)
    seqs = [encode(vocab, t, max_len=32) for t in texts[:64]]
    for seed in range(3):
        model = init_model(DESK.replace(vocab_size=len(vocab), mlm_head=True, seed=seed,
                                        max_len=32))
        out = mlm_forward(model, apply_mlm_mask(seqs, 0.15, seed))
        assert abs(out.loss - math.log(len(vocab))) / math.log(len(vocab)) < 0.15


def test_saturated_mlm_logits_give_zero_loss():
    cfg = EncoderConfig(num_layers=1, hidden_size=8, num_heads=2, ffn_size=8, vocab_size=12,
                        max_len=8, mlm_head=True)
    model = init_model(cfg)
    model.params["emb.token"][:] = 0.0
    model.params["mlm.out_bias"][:] = 0.0
    model.params["mlm.out_bias"][7] = 30.0
    seq = TokenSequence((CLS_ID, 4, 3), (0, 0, 0), (1, 1, 1), frozenset({0, 2}))
    masked = MaskedBatch((seq,), ((NOT_MASKED, 7, NOT_MASKED),))
    out = mlm_forward(model, masked)
    assert out.logits.shape == (1, 12)
    assert out.loss < 1e-9


def test_mlm_errors():
    seq = TokenSequence((CLS_ID, 5, 3), (0, 0, 0), (1, 1, 1), frozenset({0, 2}))
    model = init_model(DESK.replace(mlm_head=True))
    with pytest.raises(LossError):
        mlm_forward(model, MaskedBatch((seq,), ((NOT_MASKED,) * 3,)))
    with pytest.raises(ValueError):
        mlm_forward(init_model(DESK), MaskedBatch((seq,), ((NOT_MASKED, 5, NOT_MASKED),)))


def test_pretraining_reduces_mlm_loss():
    texts = _lm_corpus()
    vocab = build_vocab(texts, 300, 2)
    seqs = [encode(vocab, t, max_len=32) for t in texts]
    model = init_model(DESK.replace(vocab_size=len(vocab), mlm_head=True, max_len=32,
                                    dropout_rate=0.0))
    _, losses = pretrain_mlm(model, seqs, 50, TrainConfig(learning_rate=2e-3, batch_size=32))
    assert len(losses) == 50
    assert np.mean(losses[-10:]) < np.mean(losses[:10]) - 0.5


# fine-tuning -----------------------------------------------------------------

@pytest.fixture(scope="module")
def toy():
    ds = toy_dataset()
    te = TextEncoder(build_vocab(ds.texts, 8000, 2))
    return ds, te


def _desk(te, seed=0, **kw):
    return init_model(DESK.replace(vocab_size=len(te.vocab), dropout_rate=0.0, seed=seed, **kw))


def test_overfits_toy_set(toy):
    ds, te = toy
    _, hist = train_classifier(_desk(te), ds, ds, TrainConfig(epochs=200), te,
                               stop_at_train_accuracy=1.0)
    assert hist[-1].train_accuracy == 1.0
    assert hist[-1].epoch <= 200


def test_zero_learning_rate_leaves_weights(toy):
    ds, te = toy
    model = _desk(te)
    best, _ = train_classifier(model, ds, ds, TrainConfig(learning_rate=0.0, weight_decay=0.0,
                                                           epochs=1), te)
    assert all(np.array_equal(model.params[n], best.params[n]) for n in model.params)


def test_same_seed_same_history(toy, tmp_path):
    ds, te = toy
    tcfg = TrainConfig(epochs=3, seed=5)
    model = init_model(DESK.replace(vocab_size=len(te.vocab), dropout_rate=0.1))
    a, ha = train_classifier(model, ds, ds, tcfg, te, log_path=tmp_path / "h.jsonl")
    b, hb = train_classifier(model, ds, ds, tcfg, te)
    assert ha == hb
    assert all(np.array_equal(a.params[n], b.params[n]) for n in a.params)
    assert read_history(tmp_path / "h.jsonl") == ha
    assert [r.epoch for r in ha] == [1, 2, 3]


@pytest.mark.parametrize("seed", range(5))
def test_loss_falls_by_epoch_ten(toy, seed):
    ds, te = toy
    _, hist = train_classifier(_desk(te, seed), ds, ds, TrainConfig(epochs=10, seed=seed), te)
    assert hist[9].loss < hist[0].loss


def test_best_dev_checkpoint_is_returned():
    d = fixture_datasets(120, 2, "B")
    te = TextEncoder(build_vocab(d["train"].texts, 500, 2))
    model = init_model(DESK.replace(vocab_size=len(te.vocab), num_classes=2, dropout_rate=0.0))
    best, hist = train_classifier(model, d["train"], d["dev"], TrainConfig(epochs=4), te)
    got = accuracy(best, te.encode_dataset(d["dev"]), label_indices(d["dev"]))
    assert got == max(r.dev_accuracy for r in hist)


def test_training_errors(toy):
    ds, te = toy
    b = fixture_datasets(50, 1, "B")["train"]
    with pytest.raises(ConfigError):
        train_classifier(_desk(te), ds, b, TrainConfig(epochs=1), te)
    with pytest.raises(ConfigError):
        train_classifier(_desk(te, num_classes=5), ds, ds, TrainConfig(epochs=1), te)
    with pytest.raises(ConfigError):
        train_classifier(_desk(te), Dataset("A", ds.scale, ()), ds, TrainConfig(epochs=1), te)
    bad = _desk(te)
    bad.params["classifier.b"][:] = np.nan
    with pytest.raises(TrainingDivergedError):
        train_classifier(bad, ds, ds, TrainConfig(epochs=1), te)


# weight files ----------------------------------------------------------------

def test_weights_round_trip_bitwise(tmp_path):
    model = init_model(DESK.replace(mlm_head=True, seed=3))
    save_weights(model, tmp_path / "w.bin")
    back = load_weights(tmp_path / "w.bin", expected=model.cfg)
    assert back.cfg == model.cfg
    assert all(back.params[n].tobytes() == model.params[n].tobytes() for n in model.params)


def test_truncated_weights(tmp_path):
    save_weights(init_model(DESK), tmp_path / "w.bin")
    data = (tmp_path / "w.bin").read_bytes()
    for cut in (4, 20, len(data) // 2, len(data) - 1):
        (tmp_path / "t.bin").write_bytes(data[:cut])
        with pytest.raises(WeightFormatError):
            load_weights(tmp_path / "t.bin")
    (tmp_path / "x.bin").write_bytes(b"not a weight file at all")
    with pytest.raises(WeightFormatError):
        load_weights(tmp_path / "x.bin")


def test_config_mismatch(tmp_path):
    big = EncoderConfig(num_layers=12, hidden_size=768, num_heads=12, ffn_size=32, vocab_size=8,
                        max_len=4)
    save_weights(init_model(big), tmp_path / "big.bin")
    with pytest.raises(ConfigMismatchError):
        load_weights(tmp_path / "big.bin", expected=DESK)


def test_model_shape_validation():
    params = dict(init_model(DESK).params)
    params["pooler.w"] = np.zeros((3, 3))
    with pytest.raises(ValueError):
        EncoderModel(DESK, params)
