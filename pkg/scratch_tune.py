"""Scratch experiment: dataset difficulty vs full/no-FRF ordering. Not part of the package."""
import dataclasses
import sys
import time

import numpy as np
import torch

import hrlf
from hrlf.eval import run_condition_grid

torch.set_num_threads(1)


def cosine_gap(net, split):
    net.eval()
    feats = {k: torch.from_numpy(split.features[k]) for k in hrlf.MODALITIES}
    with torch.no_grad():
        out = net(feats)
    qs = {k: out.pairs[k][0].numpy() for k in hrlf.MODALITIES}

    def cos(a, b):
        num = (a * b).sum(1)
        den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-12
        return num / den

    n = split.n_samples
    perm = np.roll(np.arange(n), 1)
    ks = list(hrlf.MODALITIES)
    within, across = [], []
    for i in range(3):
        for j in range(i + 1, 3):
            within.append(cos(qs[ks[i]], qs[ks[j]]))
            across.append(cos(qs[ks[i]], qs[ks[j]][perm]))
    return float(np.mean(within)), float(np.mean(across))


def run(seed, syn_kwargs, train_kwargs):
    cfg = hrlf.SyntheticConfig(seed=seed, **syn_kwargs)
    ds = hrlf.generate_synthetic(cfg)
    tc = hrlf.TrainConfig(seed=seed, **train_kwargs)
    teacher, _ = hrlf.train_teacher(ds, tc)
    tr_acc = (hrlf.predict(teacher, ds.splits["train"].features).argmax(1) == ds.splits["train"].labels).mean()
    full = hrlf.train_student(ds, teacher, tc)
    ab = hrlf.train_student(ds, teacher, dataclasses.replace(tc, use_frf=False))
    g_full = run_condition_grid(full.net, ds.splits["test"], ds.task).avg_missing
    g_ab = run_condition_grid(ab.net, ds.splits["test"], ds.task).avg_missing
    w, a = cosine_gap(full.net, ds.splits["test"])
    return tr_acc, g_full, g_ab, w, a


if __name__ == "__main__":
    noise = float(sys.argv[1])
    lr = float(sys.argv[2]) if len(sys.argv) > 2 else 2e-3
    sep = int(sys.argv[3]) if len(sys.argv) > 3 else 60
    t0 = time.time()
    wins = 0
    for seed in (0, 1, 2):
        tr, gf, ga, w, a = run(
            seed,
            dict(noise_scale=noise),
            dict(teacher_epochs=100, student_epochs=sep, lr=lr, batch_size=64),
        )
        wins += gf >= ga
        print(
            f"noise={noise} lr={lr} sep={sep} seed={seed}: teacher_acc={tr:.3f} "
            f"full={gf:.4f} nofrf={ga:.4f} win={gf >= ga} cos_within={w:.3f} cos_across={a:.3f}",
            flush=True,
        )
    print(f"noise={noise}: wins={wins}/3  ({time.time()-t0:.0f}s)")
