# coding: utf-8

# # Leave-last-out evaluation on a synthetic shop
#
# The generator makes product "families" with a fixed follow-up structure, so
# a good complement graph should clearly beat a popularity list.

# In[1]:

from copgraph import EvalConfig, GridSpec, ModelParams, SplitSpec, build_model, evaluate, grid_search, split
from copgraph.eval import evaluate_ranker, popularity_ranker, report_table
from copgraph.synthetic import synthetic_log


# In[2]:

log, _ = synthetic_log(n_users=800, n_families=60, seed=0)
print(log.n_users, "users,", log.n_items, "items,", log.n_events, "events")
s = split(log, SplitSpec("sequential"))
print(len(s.test), "test users,", s.n_skipped, "skipped")


# In[3]:

config = EvalConfig((5, 10))
model = build_model(s.train_valid, ModelParams(alpha=0.5, lam=2, kappa=3))
ours = evaluate(model, s, config)
pop = evaluate_ranker(popularity_ranker(s.train_valid), s, config)
print(report_table([("ours", "a=0.5", ours), ("popularity", "-", pop)], (5, 10)))


# A small grid. The winner is refit on train+validation and scored once on test.

# In[4]:

grid = GridSpec(alphas=(0.0, 0.5, 1.0), lambdas=(1, 2, 3), kappas=(1, 3))
result = grid_search(log, grid, config, workers=2)
print("best:", result.best.to_dict())
print(result.test_report.summary())


# Every evaluated point is kept, so the choice can be checked afterwards.

# In[5]:

for point, value in sorted(zip(result.points, result.objective_values()), key=lambda t: -t[1])[:5]:
    p = point.params
    print(f"alpha={p.alpha:.1f} lambda={p.lam} kappa={p.kappa}  ndcg@5={value:.4f}")
