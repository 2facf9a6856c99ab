"""
Routing seen and unseen samples
===============================

Walk through the four pieces of the method on synthetic data: a seen-class
MLP, a text-aligned unseen expert, a detector built from the MLP's energy
and a residual-subspace norm, and the routing step that sends each test
sample to one expert.
"""

import numpy as np

from ezavood.data import SynthConfig, generate_synthetic, split_views
from ezavood.metrics import harmonic_mean, ood_report, per_class_accuracy
from ezavood.ood import DetectorConfig, fit_detector
from ezavood.pipeline import PipelineConfig, auto_gamma
from ezavood.seen import TrainConfig, forward, predict_seen, train_seen
from ezavood.unseen import AlignerConfig, AlignerExpert, train_unseen

# 5 seen and 3 unseen classes in 64 dimensions. Unseen classes only show
# up in the test split; their text embeddings are known up front.
# per-stage seeds derived the same way the pipeline derives them
data_seed, seen_seed, unseen_seed = PipelineConfig(seed=0).seeds()
dataset, table = generate_synthetic(SynthConfig(seed=data_seed))
views = split_views(dataset)
print("train seen / test seen / test unseen:",
      views.train_seen.n_samples, views.test_seen.n_samples, views.test_unseen.n_samples)

# %% Seen expert: an MLP over seen classes only.
mlp = train_seen(views.train_seen, TrainConfig(seed=seen_seed))
print("seen-expert loss, first and last epoch:", mlp.loss_history[0], mlp.loss_history[-1])

# %% Unseen expert: align features and class texts in a shared space.
params, history = train_unseen(views.train_seen, table, AlignerConfig(seed=unseen_seed))
unseen_expert = AlignerExpert(params, table)
print("aligner loss, first and last epoch:", history[0], history[-1])

# %% Detector. gamma trades the energy term against the residual term;
# here we balance their spreads on training data.
from ezavood.ood import energy_score, fit_subspace, residual_score  # noqa: E402

train_x = views.train_seen.features
sub = fit_subspace(train_x, 16)
gamma = auto_gamma(energy_score(forward(mlp, train_x)), residual_score(sub, train_x))
detector = fit_detector(mlp, train_x, DetectorConfig(gamma=gamma, principal_dim=16))
print(f"gamma = {gamma:.3f}, threshold = {detector.config.threshold:.3f}")

# %% Score the test split and look at how well seen and unseen separate.
test = dataset.split == 1
x, y = dataset.features[test], dataset.labels[test]
is_seen_class = dataset.seen_mask[y]
scores = detector.scores(mlp, x)
for name in ("energy", "residual", "combined"):
    s = getattr(scores, name)
    r = ood_report(s[is_seen_class], s[~is_seen_class])
    print(f"{name:>9}: AUROC {r.auroc:.4f}  FPR95 {r.fpr95:.4f}  AUPR {r.aupr:.4f}")

# %% Route: accepted samples go to the MLP, the rest to the unseen expert.
routed_seen = detector.is_seen(mlp, x)
pred = np.empty_like(y)
pred[routed_seen] = predict_seen(mlp, x[routed_seen])
pred[~routed_seen] = unseen_expert.predict(x[~routed_seen], dataset.unseen_classes)

acc_s, _ = per_class_accuracy(pred[is_seen_class], y[is_seen_class], dataset.seen_classes)
acc_u, _ = per_class_accuracy(pred[~is_seen_class], y[~is_seen_class], dataset.unseen_classes)
print(f"acc_S {acc_s:.3f}  acc_U {acc_u:.3f}  H {harmonic_mean(acc_s, acc_u):.3f}")

# A sample routed to the wrong expert is always misclassified, so the
# detector's errors show up directly in acc_S and acc_U.
print("seen samples rejected:", int(np.sum(is_seen_class & ~routed_seen)),
      " unseen samples accepted:", int(np.sum(~is_seen_class & routed_seen)))
