"""Track rho vs discriminator epochs/batch size on the two-Gaussian fixture."""
import numpy as np
from scipy.stats import norm, spearmanr

from feddisk import data, made, nn, ratio
from feddisk.rng import substream


def build_fixture(seed, n=3000, hidden=[30], made_lr=0.1, made_iters=80):
    spec = data.MixtureSpec(weights=[0.5, 0.5], means=[0.0, 2.0], stds=[1.0, 1.0], bins=16)
    rng = substream(seed, "fixture")
    x_local = rng.normal(0.0, 1.0, size=n)
    comp = rng.integers(0, 2, size=n)
    x_pool = rng.normal(2.0 * comp, 1.0)
    enc_local, _ = data.encode_binned(spec, x_local)
    enc_pool, _ = data.encode_binned(spec, x_pool)

    def fit(samples, tag):
        model = made.build_made(16, hidden, substream(seed, tag, "init"))
        cut = int(0.9 * samples.shape[0])
        model, _ = made.train_made(
            model, samples[:cut], samples[cut:], lr=made_lr, max_iters=made_iters,
            patience=3, rng=substream(seed, tag, "train"), batch_size=64,
        )
        return model

    local_made = fit(enc_local, "local")
    global_made = fit(enc_pool, "global")
    pseudo = ratio.build_pseudo_dataset(local_made, global_made, enc_local)

    held = substream(seed, "held").normal(0.0, 1.0, size=2000)
    enc_held, _ = data.encode_binned(spec, held)
    true_r = 0.5 + 0.5 * np.exp(2.0 * held - 2.0)
    return pseudo, local_made, enc_held, true_r


def sweep(seed, batch_size, max_epochs=500, probe=(1, 2, 3, 5, 8, 12, 20, 30, 50, 80, 120, 200, 350, 500)):
    pseudo, local_made, enc_held, true_r = build_fixture(seed)
    rng = substream(seed, "disc")
    net = nn.Network(
        [nn.glorot_layer(16, 100, "relu", rng), nn.glorot_layer(100, 2, "softmax", rng)],
        loss_kind="weighted-cross-entropy",
    )
    ones = np.ones(pseudo.inputs.shape[0])
    u_held = made.made_forward(local_made, enc_held)
    print(f"-- seed {seed} batch {batch_size}")
    losses = []
    plateau_at = None
    for epoch in range(1, max_epochs + 1):
        nn.sgd_epoch(net, pseudo.inputs, pseudo.labels, ones, 0.01, batch_size, rng)
        losses.append(nn.network_loss(net, pseudo.inputs, pseudo.labels, ones))
        if plateau_at is None and len(losses) > 10:
            ref = losses[-11]
            if (ref - losses[-1]) / max(abs(ref), 1e-12) < 1e-4:
                plateau_at = epoch
        if epoch in probe:
            p = nn.forward(net, u_held)[:, 1]
            rho = spearmanr(p / (1 - np.minimum(p, 1 - 1e-6)), true_r).statistic
            acc = np.mean((nn.forward(net, pseudo.inputs)[:, 1] > 0.5) == pseudo.labels)
            print(f"  ep {epoch:4d} loss {losses[-1]:.4f} acc {acc:.3f} rho {rho:+.3f}"
                  + (f"  <-- plateau at {plateau_at}" if plateau_at == epoch else ""))
    print(f"  plateau rule would stop at: {plateau_at}")


for bs in (32, 256, len_full := 6000):
    sweep(0, bs)
