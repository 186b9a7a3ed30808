"""
Ranking metrics
===============

Average precision and ROC AUC, both exact under tied scores, plus the
confusion counts at a threshold.
"""

import numpy as np

from tgtn import average_precision, metrics_report, roc_auc

###############################################################################

rng = np.random.default_rng(0)
y = (rng.random(300) < 0.1).astype(int)
s = rng.normal(size=300) + 1.5 * y
print("AP ", round(average_precision(s, y), 4))
print("AUC", round(roc_auc(s, y), 4))

###############################################################################
# AUC is the Mann-Whitney statistic: ties between a positive and a negative
# count one half. Coarse scores show this off.

coarse = np.round(s)
pos, neg = coarse[y == 1], coarse[y == 0]
pairs = (pos[:, None] > neg).mean() + 0.5 * (pos[:, None] == neg).mean()
print(roc_auc(coarse, y), pairs)

###############################################################################
# Both metrics depend only on the ordering.

assert roc_auc(np.exp(s), y) == roc_auc(s, y)

print(metrics_report(1 / (1 + np.exp(-s)), y, threshold=0.5).to_json())
