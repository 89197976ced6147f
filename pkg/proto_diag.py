"""Diagnose discriminator behavior on the two-Gaussian fixture."""
import numpy as np
from scipy.stats import spearmanr

from feddisk import data, made, nn, ratio
from feddisk.rng import substream

seed = 0
spec = data.MixtureSpec(weights=[0.5, 0.5], means=[0.0, 2.0], stds=[1.0, 1.0], bins=16)
rng = substream(seed, "fixture")
n = 3000
x_local = rng.normal(0.0, 1.0, size=n)
comp = rng.integers(0, 2, size=n)
x_pool = rng.normal(2.0 * comp, 1.0)
enc_local, edges = data.encode_binned(spec, x_local)
enc_pool, _ = data.encode_binned(spec, x_pool)
centers = 0.5 * (edges[:-1] + edges[1:])


def fit(samples, tag):
    model = made.build_made(16, [30], substream(seed, tag, "init"))
    cut = int(0.9 * samples.shape[0])
    model, log = made.train_made(
        model, samples[:cut], samples[cut:], lr=0.1, max_iters=80,
        patience=3, rng=substream(seed, tag, "train"), batch_size=64,
    )
    return model


local_made = fit(enc_local, "local")
global_made = fit(enc_pool, "global")

# hazard check: feed each one-hot bin pattern, read conditional at its position
eye = np.eye(16)
p_loc = nn.forward(local_made.net, eye)
p_glob = nn.forward(global_made.net, eye)

# true bin probabilities
from scipy.stats import norm
q_bins = np.diff(norm.cdf(edges, 0, 1)); q_bins /= q_bins.sum()
p_bins = np.diff(0.5 * norm.cdf(edges, 0, 1) + 0.5 * norm.cdf(edges, 2, 1)); p_bins /= p_bins.sum()


def hazards(bins):
    surv = np.concatenate([[1.0], 1.0 - np.cumsum(bins)[:-1]])
    return np.clip(bins / np.maximum(surv, 1e-12), 0, 1)

hz_q, hz_p = hazards(q_bins), hazards(p_bins)
# model hazard at d for pattern "zeros before d": use all-zeros input row
zeros = np.zeros((1, 16))
mh_loc = nn.forward(local_made.net, zeros)[0]
mh_glob = nn.forward(global_made.net, zeros)[0]
print("bin  true_hq  model_hq  true_hp  model_hp")
for d in range(16):
    print(f"{d:3d}  {hz_q[d]:.4f}  {mh_loc[d]:.4f}   {hz_p[d]:.4f}  {mh_glob[d]:.4f}")

pseudo = ratio.build_pseudo_dataset(local_made, global_made, enc_local)
h = ratio.train_discriminator(pseudo, substream(seed, "disc"))
probs = nn.forward(h, pseudo.inputs)[:, 1]
pred = (probs > 0.5).astype(int)
acc = np.mean(pred == pseudo.labels)
print(f"\ndiscriminator training accuracy: {acc:.4f}")

# P at u_local(onehot bin b) for each bin, vs true ratio at centers
u_bins = made.made_forward(local_made, eye)
P_bins = nn.forward(h, u_bins)[:, 1]
true_r = p_bins / q_bins
print("\nbin  P(l=1|u_loc)  odds      true p/q  q_mass")
for d in range(16):
    odds = P_bins[d] / (1 - P_bins[d])
    print(f"{d:3d}  {P_bins[d]:.4f}      {odds:8.4f}  {true_r[d]:8.4f}  {q_bins[d]:.4f}")

rho = spearmanr(P_bins, true_r).statistic
print(f"\nbin-level spearman(P, true ratio) = {rho:.4f}")
