"""
Naive Bayes on a synthetic two-point fixture
============================================

Load the bundled subtask-B fixture, train the unigram baseline and score it.
"""

from pathlib import Path

from tweetbench import evaluate, load_dataset, render_report, train_nb
from tweetbench.corpus import class_distribution
from tweetbench.nb import nb_probabilities, predict_many

FIX = Path(__file__).resolve().parents[1] / "fixtures"

train = load_dataset(FIX / "synthetic_b500.train.tsv", "B")
test = load_dataset(FIX / "synthetic_b500.test.tsv", "B")
print(len(train), "training tweets", class_distribution(train))

# the normalized text is what the model sees: handles and links are folded
ex = train.examples[0]
print(repr(ex.raw_text))
print(repr(ex.norm_text))

model = train_nb(train, alpha=1.0)
report = evaluate(test.labels, predict_many(model, test.texts), test.scale)
print(render_report({"naive_bayes": report}))

# posterior over the two labels for a made-up tweet
print(nb_probabilities(model, "@someone this phone is absolutely awful"))
