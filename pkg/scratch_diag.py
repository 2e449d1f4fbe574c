"""Scratch diagnostics on factorization quality. Not part of the package."""
import dataclasses
import sys

import numpy as np
import torch

import hrlf
from hrlf.eval import run_condition_grid

torch.set_num_threads(1)


def q_stats(net, split, tag):
    net.eval()
    feats = {k: torch.from_numpy(split.features[k]) for k in hrlf.MODALITIES}
    with torch.no_grad():
        out = net(feats)
    qs = {k: out.pairs[k][0].numpy() for k in hrlf.MODALITIES}
    us = {k: out.pairs[k][1].numpy() for k in hrlf.MODALITIES}

    def cos(a, b):
        return (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-12)

    n = split.n_samples
    perm = np.roll(np.arange(n), 1)
    ks = list(hrlf.MODALITIES)
    within, across = [], []
    for i in range(3):
        for j in range(i + 1, 3):
            within.append(cos(qs[ks[i]], qs[ks[j]]))
            across.append(cos(qs[ks[i]], qs[ks[j]][perm]))
    w, a = float(np.mean(within)), float(np.mean(across))
    print(f"[{tag}] cos within={w:.3f} across={a:.3f} gap={w - a:+.3f}")
    for k in ks:
        off = np.linalg.norm(qs[k].mean(0))
        spread = np.linalg.norm(qs[k] - qs[k].mean(0), axis=1).mean()
        off_u = np.linalg.norm(us[k].mean(0))
        spread_u = np.linalg.norm(us[k] - us[k].mean(0), axis=1).mean()
        print(
            f"  {k.value:8s} Q offset={off:7.3f} spread={spread:7.3f} | U offset={off_u:7.3f} spread={spread_u:7.3f}"
        )
    w0 = net.frf.decoder[0].weight.detach()
    d = net.frf.embed_dim
    print(f"  decoder |W_Q|={w0[:, :d].norm():.3f} |W_U|={w0[:, d:].norm():.3f}")
    return w, a


if __name__ == "__main__":
    noise = float(sys.argv[1]) if len(sys.argv) > 1 else 0.05
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
    cfg = hrlf.SyntheticConfig(seed=seed, noise_scale=noise)
    ds = hrlf.generate_synthetic(cfg)
    tc = hrlf.TrainConfig(teacher_epochs=200, student_epochs=60, lr=4e-3, batch_size=64, seed=seed)
    teacher, hist = hrlf.train_teacher(ds, tc)
    tr_acc = (hrlf.predict(teacher, ds.splits["train"].features).argmax(1) == ds.splits["train"].labels).mean()
    print(f"teacher train_acc={tr_acc:.3f} task={hist[-1].task:.4f} frf={hist[-1].frf_total:.4f}")
    q_stats(teacher, ds.splits["test"], "teacher")
    full = hrlf.train_student(ds, teacher, tc)
    rep = run_condition_grid(full.net, ds.splits["test"], ds.task)
    print(f"student avg={rep.avg_missing:.4f} complete={rep.complete:.4f}")
    h = full.history[-1]
    print("last:", {k: round(v, 3) for k, v in h.to_dict().items()})
    q_stats(full.net, ds.splits["test"], "student")
