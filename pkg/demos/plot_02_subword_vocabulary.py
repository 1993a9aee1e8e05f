"""
Building a subword vocabulary
=============================

Merges are learned greedily from pair counts. Words are then split by greedy
longest match, and a tweet/topic pair is packed into one fixed-length row.
"""

from tweetbench.tokenizer import apply_mlm_mask, build_vocab, decode, encode

corpus = ["low low lowest", "newer newest wider", "lower slower"]
vocab = build_vocab(corpus, max_size=40, min_freq=1)
print(len(vocab), "tokens")
print(vocab.tokens[5:])

print(vocab.tokenize("slowest lowly"))

seq = encode(vocab, "low newest", pair="wider", max_len=16)
print(seq.ids)
print(seq.segment_ids)
print(seq.attention_mask)
print(decode(vocab, seq.ids))

# mask about 15% of the real, non-special positions
masked = apply_mlm_mask([seq] * 4, rate=0.15, seed=0)
print(masked.n_masked, "positions masked")
