"""Synthetic purchase logs with planted directed complements.

Items come in twin pairs that share a category, a successor distribution and
(nearly) an embedding, so a hidden twin can be recovered through its
partner. Users walk a Markov chain over twin families; consecutive purchases
share a timestamp with probability ``tie_prob``.
"""

import numpy as np

from .dataset import InteractionLog
from .model import EmbeddingTable

DAY = 86400


def synthetic_log(n_users=300, n_families=40, n_categories=6, length=(5, 15),
                  follow_prob=0.85, tie_prob=0.3, dim=16, embedding_noise=0.05, seed=0):
    """Return ``(log, embeddings)`` for a generated interaction history."""
    rng = np.random.default_rng(seed)
    n_items = 2 * n_families
    family_cat = rng.integers(1, n_categories + 1, size=n_families)
    successors = np.stack([rng.choice(n_families, 3, replace=False) for _ in range(n_families)])
    succ_p = np.array([0.6, 0.3, 0.1])

    records = []
    for u in range(n_users):
        n = int(rng.integers(length[0], length[1] + 1))
        fam = int(rng.integers(n_families))
        t = int(rng.integers(0, 1000)) * DAY
        for _ in range(n):
            item = 2 * fam + int(rng.integers(2))
            records.append((f"u{u}", f"i{item}", t, f"c{family_cat[fam]}"))
            if rng.random() >= tie_prob:
                t += int(rng.integers(1, 4)) * DAY
            if rng.random() < follow_prob:
                fam = int(successors[fam, rng.choice(3, p=succ_p)])
            else:
                fam = int(rng.integers(n_families))
    log = InteractionLog.from_records(records)

    centers = rng.normal(size=(n_families, dim))
    vectors = {f"i{i}": centers[i // 2] + embedding_noise * rng.normal(size=dim) for i in range(n_items)}
    return log, EmbeddingTable(dim, vectors)
