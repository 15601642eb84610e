# coding: utf-8

# # Building a complement graph by hand
#
# Three shoppers, five products. We follow each intermediate matrix from the
# purchase log to the final directed item graph and check a few entries by eye.

# In[1]:

import numpy as np

from copgraph import InteractionLog, ModelParams, build_model, recommend
from copgraph import projection
from copgraph.directionality import category_co_counts, combine, item_co_counts, lift_category_matrix, row_normalize


# In[2]:

records = [
    ("ann", "camera", 1, "photo"), ("ann", "sd-card", 2, "storage"), ("ann", "tripod", 3, "photo"),
    ("bob", "camera", 5, "photo"), ("bob", "sd-card", 6, "storage"), ("bob", "bag", 9, "photo"),
    ("cat", "laptop", 2, "computer"), ("cat", "sd-card", 4, "storage"), ("cat", "bag", 7, "photo"),
]
log = InteractionLog.from_records(records)
print(log.item_ids)
print(log.n_users, log.n_items, log.n_events)


# The undirected side: a two-step walk item -> shopper -> item, started from a
# uniformly chosen item, then symmetrized.

# In[3]:

g = projection.build_bipartite(log)
p_uv, p_vu = projection.transition_matrices(g)
q = projection.two_step_item_matrix(p_vu, p_uv, log.n_items)
p_vv = projection.symmetrize(q)
np.set_printoptions(precision=3, suppress=True)
print(q.toarray())
print("sums to", q.sum())


# Raising it to a power mixes in longer walks. With lambda=2 the laptop now
# reaches the camera through the bag and sd-card buyers.

# In[4]:

w_v = projection.matrix_power(p_vv, 2)
idx = log.item_index()
print("laptop->camera at lambda=1:", p_vv[idx["laptop"], idx["camera"]])
print("laptop->camera at lambda=2:", w_v[idx["laptop"], idx["camera"]])


# The directed side counts who bought what *after* what, weighted by 1/gap.

# In[5]:

ci = item_co_counts(log, kappa=2)
print(ci.toarray())
print("camera->sd-card", ci[idx["camera"], idx["sd-card"]], " sd-card->camera", ci[idx["sd-card"], idx["camera"]])


# Category counts are lifted back to item pairs, only where the walk graph has an edge.

# In[6]:

cc = row_normalize(category_co_counts(log, 2))
lifted = lift_category_matrix(cc, log.item_category, w_v)
w = combine(w_v, row_normalize(ci), lifted, alpha=0.5)
print(w.toarray())


# The same thing in one call, and the ranked complements of a camera.

# In[7]:

model = build_model(log, ModelParams(alpha=0.5, lam=2, kappa=2))
print(np.allclose(model.W.toarray(), w.toarray()))
for item, score in recommend(model, "camera", 3):
    print(f"{item:10s} {score:.4f}")
