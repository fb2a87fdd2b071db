"""
Scoring span tags
=================

Entity spans are labelled per token with B (begin), I (inside) and O.
Precision, recall and F1 are micro-averaged over the B and I tokens;
accuracy is also split by whether the token was seen in the source data.
"""

import numpy as np

from advmask import corpus, taskeval

gold = [np.array([0, 1, 2, 0, 0, 1]), np.array([1, 0, 0])]
pred = [np.array([0, 1, 0, 0, 1, 1]), np.array([1, 0, 0])]
oov = [np.array([False, True, True, False, False, False]), np.array([True, False, False])]
report = taskeval.score(gold, pred, oov)
print(report.table())

# predictions files are "token gold pred" lines with a blank line between sentences
sents = [corpus.TokenSequence(("acme", "corp", "rose"), labels=("B", "I", "O")),
         corpus.TokenSequence(("it", "fell"), labels=("O", "O"))]
taskeval.write_predictions("/tmp/demo_predictions.txt", sents, [np.array([1, 0, 0]), np.array([0, 0])])
print(open("/tmp/demo_predictions.txt").read())
print("rescored f1", taskeval.score_predictions_file("/tmp/demo_predictions.txt", {"rose", "it"}).f1)
