"""
A desk-scale encoder, checked then trained
==========================================

Verify the hand-written gradients against finite differences, then
overfit the 32-tweet toy set.
"""

import numpy as np

from tweetbench.encoder import (BASE, DESK, TrainConfig, grad_check, init_model,
                                parameter_count, train_classifier)
from tweetbench.fixtures import toy_dataset
from tweetbench.tokenizer import TextEncoder, build_vocab

print(f"desk {parameter_count(DESK):,} parameters, base {parameter_count(BASE):,}")

cfg = DESK.replace(dropout_rate=0.0)
model = init_model(cfg)
rng = np.random.default_rng(0)
ids = rng.integers(5, cfg.vocab_size, (2, 10))
ids[:, 0] = 2
batch = (ids, np.zeros_like(ids), np.ones_like(ids))
res = grad_check(model, batch, np.array([0, 1]))
print(f"gradient check: max relative error {res.max_rel_error:.2e}")
for kind, err in sorted(res.per_kind.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {kind:<18} {err:.2e}")

toy = toy_dataset()
te = TextEncoder(build_vocab(toy.texts, 8000, 2))
model = init_model(DESK.replace(vocab_size=len(te.vocab), dropout_rate=0.0))
_, history = train_classifier(model, toy, toy, TrainConfig(epochs=200), te,
                              stop_at_train_accuracy=1.0)
for rec in history[::5]:
    print(f"epoch {rec.epoch:3d}  loss {rec.loss:.4f}  train acc {rec.train_accuracy:.3f}")
print("reached", history[-1].train_accuracy, "at epoch", history[-1].epoch)
