"""Scratch: per-term gradient norms into the student encoder path. Not part of the package."""
import sys

import numpy as np
import torch

import hrlf
from hrlf.trainer import _build_net, _to_tensors, _label_tensor, loss_task, loss_kl
from hrlf.hmi import StatisticsNets, loss_hmi
from hrlf.hal import ScaleDiscriminators
from hrlf.msm import apply_msm_batch

torch.set_num_threads(1)

noise = float(sys.argv[1]) if len(sys.argv) > 1 else 0.05
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 2

cfg = hrlf.SyntheticConfig(seed=seed, noise_scale=noise)
ds = hrlf.generate_synthetic(cfg)
tc = hrlf.TrainConfig(teacher_epochs=60, student_epochs=30, lr=2e-3, batch_size=64, seed=seed)
teacher, _ = hrlf.train_teacher(ds, tc)
acc = (hrlf.predict(teacher, ds.splits["train"].features).argmax(1) == ds.splits["train"].labels).mean()
print(f"teacher acc={acc:.3f}")

# manual student loop with per-term grad-norm probes
torch.manual_seed(12345)
student = _build_net(tc, ds.feat_dims, teacher.encoder_config, "student")
stats = StatisticsNets(teacher.encoder_config.embed_dim)
discs = ScaleDiscriminators(teacher.encoder_config.embed_dim)
opt = torch.optim.Adam(list(student.parameters()) + list(stats.parameters()), lr=tc.lr)
dopt = torch.optim.Adam(discs.parameters(), lr=tc.lr / 4)
split = ds.splits["train"]
shuffle_rng = np.random.default_rng([seed, 11])
msm_rng = np.random.default_rng([seed, 12])

enc_params = [p for p in student.encoders.parameters()]


def enc_grad_norm(loss):
    grads = torch.autograd.grad(loss, enc_params, retain_graph=True, allow_unused=True)
    return float(
        torch.sqrt(sum((g**2).sum() for g in grads if g is not None)).item()
    )


gstep = 0
for epoch in range(30):
    order = shuffle_rng.permutation(split.n_samples)
    tasks = []
    for start in range(0, split.n_samples, 64):
        idx = order[start : start + 64]
        bf = {k: split.features[k][idx] for k in hrlf.MODALITIES}
        specs = [tc.msm.sample_spec(msm_rng) for _ in range(len(idx))]
        mf, _ = apply_msm_batch(bf, specs)
        labels = _label_tensor(split.labels[idx], tc.task)
        with torch.no_grad():
            t_out = teacher(_to_tensors(bf))
        s_out = student(_to_tensors(mf))
        task = loss_task(s_out.logits, labels, tc.task)
        kl = loss_kl(t_out.logits, s_out.logits, tc.task)
        frf = student.frf.loss(s_out.z)["total"]
        hmi = loss_hmi(t_out.stack, s_out.stack, stats, shuffle_seed=gstep)
        gen = discs.generator_loss(s_out.stack)
        total = task + kl + frf + hmi + gen
        if gstep % 60 == 0:
            print(
                f"e{epoch:02d} s{gstep:04d}: task={task.item():.3f} kl={kl.item():.3f} frf={frf.item():.3f} "
                f"hmi={hmi.item():.3f} gen={gen.item():.3f} | enc-grad: task={enc_grad_norm(task):.3f} "
                f"kl={enc_grad_norm(kl):.3f} frf={enc_grad_norm(frf):.3f} hmi={enc_grad_norm(hmi):.3f} "
                f"gen={enc_grad_norm(gen):.3f}"
            )
        opt.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(list(student.parameters()) + list(stats.parameters()), 5.0)
        opt.step()
        obj = discs.discriminator_objective(t_out.stack, s_out.stack)
        dopt.zero_grad()
        (-obj).backward()
        torch.nn.utils.clip_grad_norm_(list(discs.parameters()), 5.0)
        dopt.step()
        tasks.append(task.item())
        gstep += 1

logits = hrlf.predict(student, ds.splits["test"].features)
acc = (logits.argmax(1) == ds.splits["test"].labels).mean()
print(f"student test acc={acc:.3f} mean task last epoch={np.mean(tasks):.3f}")
