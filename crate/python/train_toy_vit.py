"""Train the bundled toy ViT on synthetic 16x16 shapes and export it.

Writes raw little-endian float32 tensors plus manifest.json to
assets/toy_vit/ and a 500-sample evaluation set to assets/toy_eval/.
The architecture mirrors the Rust runner exactly: per-head projections,
residual LayerNorm over (Bo + Xn), MLP output added to Bn, classifier on
the class token.

    python3 python/train_toy_vit.py [--out assets] [--seed 0]
"""

import argparse
import hashlib
import json
import math
import os

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

IMAGE = 16
PATCH = 4
DIM = 32
HEADS = 4
MLP = 64
LAYERS = 2
CLASSES = 4
CHANNELS = 1
NOISE = 0.10


def draw(kind, rng):
    """One noisy shape: 0 ring, 1 filled square, 2 cross, 3 diagonal bar."""
    img = np.zeros((IMAGE, IMAGE), dtype=np.float64)
    yy, xx = np.mgrid[0:IMAGE, 0:IMAGE]
    cy, cx = rng.uniform(5, 11, size=2)
    size = rng.uniform(2.5, 5.0)
    if kind == 0:
        r = np.hypot(yy - cy, xx - cx)
        img[np.abs(r - size) < 0.9] = 1.0
    elif kind == 1:
        img[(np.abs(yy - cy) <= size * 0.8) & (np.abs(xx - cx) <= size * 0.8)] = 1.0
    elif kind == 2:
        img[(np.abs(yy - cy) < 0.8) & (np.abs(xx - cx) <= size)] = 1.0
        img[(np.abs(xx - cx) < 0.8) & (np.abs(yy - cy) <= size)] = 1.0
    else:
        sign = rng.choice([-1.0, 1.0])
        d = (yy - cy) - sign * (xx - cx)
        img[(np.abs(d) < 1.0) & (np.abs(xx - cx) <= size)] = 1.0
    img *= rng.uniform(0.6, 1.4)
    img += rng.normal(0.0, NOISE, size=img.shape)
    return img


def make_set(n, rng):
    labels = rng.integers(0, CLASSES, size=n)
    images = np.stack([draw(int(k), rng) for k in labels])[:, None, :, :]
    return images.astype(np.float32), labels.astype(np.int64)


class Head(nn.Module):
    def __init__(self):
        super().__init__()
        dk = DIM // HEADS
        self.q = nn.Linear(DIM, dk)
        self.k = nn.Linear(DIM, dk)
        self.v = nn.Linear(DIM, dk)


class Block(nn.Module):
    def __init__(self):
        super().__init__()
        self.ln1 = nn.LayerNorm(DIM)
        self.heads = nn.ModuleList(Head() for _ in range(HEADS))
        self.wo = nn.Linear(DIM, DIM)
        self.ln2 = nn.LayerNorm(DIM)
        self.wu = nn.Linear(DIM, MLP)
        self.wd = nn.Linear(MLP, DIM)

    def forward(self, x):
        xn = self.ln1(x)
        dk = DIM // HEADS
        outs = []
        for h in self.heads:
            q, k, v = h.q(xn), h.k(xn), h.v(xn)
            a = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dk), dim=-1)
            outs.append(a @ v)
        bo = self.wo(torch.cat(outs, dim=-1))
        bn = self.ln2(bo + xn)
        d = self.wd(F.gelu(self.wu(bn)))
        return d + bn


class ToyViT(nn.Module):
    def __init__(self):
        super().__init__()
        n = (IMAGE // PATCH) ** 2
        self.patch_embed = nn.Linear(CHANNELS * PATCH * PATCH, DIM)
        self.cls_token = nn.Parameter(torch.randn(DIM) * 0.02)
        self.pos_embed = nn.Parameter(torch.randn(n + 1, DIM) * 0.02)
        self.blocks = nn.ModuleList(Block() for _ in range(LAYERS))
        self.head = nn.Linear(DIM, CLASSES)

    @staticmethod
    def patchify(x):
        b = x.shape[0]
        s = IMAGE // PATCH
        x = x.reshape(b, CHANNELS, s, PATCH, s, PATCH)
        return x.permute(0, 2, 4, 1, 3, 5).reshape(b, s * s, CHANNELS * PATCH * PATCH)

    def forward(self, x):
        t = self.patch_embed(self.patchify(x))
        cls = self.cls_token.expand(t.shape[0], 1, DIM)
        x = torch.cat([cls, t], dim=1) + self.pos_embed
        for blk in self.blocks:
            x = blk(x)
        return self.head(x[:, 0])


def export_tensors(model):
    out = {}

    def lin(prefix_w, prefix_b, layer):
        out[prefix_w] = layer.weight
        out[prefix_b] = layer.bias

    lin("patch_embed.weight", "patch_embed.bias", model.patch_embed)
    out["cls_token"] = model.cls_token
    out["pos_embed"] = model.pos_embed
    for l, blk in enumerate(model.blocks):
        p = f"blocks.{l}."
        out[p + "ln1.gamma"] = blk.ln1.weight
        out[p + "ln1.beta"] = blk.ln1.bias
        for h, hd in enumerate(blk.heads):
            for name in "qkv":
                lin(f"{p}heads.{h}.w{name}", f"{p}heads.{h}.b{name}", getattr(hd, name))
        lin(p + "wo", p + "bo", blk.wo)
        out[p + "ln2.gamma"] = blk.ln2.weight
        out[p + "ln2.beta"] = blk.ln2.bias
        lin(p + "wu", p + "bu", blk.wu)
        lin(p + "wd", p + "bd", blk.wd)
    lin("head.weight", "head.bias", model.head)
    return {k: v.detach().numpy().astype("<f4") for k, v in out.items()}


def write_model(model, directory):
    os.makedirs(directory, exist_ok=True)
    entries = {}
    for name, arr in sorted(export_tensors(model).items()):
        data = arr.tobytes()
        fname = f"{name}.bin"
        with open(os.path.join(directory, fname), "wb") as f:
            f.write(data)
        entries[name] = {
            "file": fname,
            "shape": list(arr.shape),
            "sha256": hashlib.sha256(data).hexdigest(),
        }
    manifest = {
        "model": {
            "image_size": IMAGE,
            "channels": CHANNELS,
            "patch_size": PATCH,
            "dim": DIM,
            "heads": HEADS,
            "mlp_dim": MLP,
            "layers": LAYERS,
            "num_classes": CLASSES,
        },
        "tensors": entries,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")


def write_dataset(images, labels, directory):
    os.makedirs(directory, exist_ok=True)
    lines = ["file,label"]
    for i, (img, lab) in enumerate(zip(images, labels)):
        name = f"{i:05}.bin"
        with open(os.path.join(directory, name), "wb") as f:
            f.write(img.astype("<f4").tobytes())
        lines.append(f"{name},{int(lab)}")
    with open(os.path.join(directory, "labels.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "assets"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--eval", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--noise", type=float, default=NOISE)
    args = ap.parse_args()
    globals()["NOISE"] = args.noise

    torch.manual_seed(args.seed)
    rng = np.random.default_rng(args.seed)
    xtr, ytr = make_set(args.train, rng)
    xev, yev = make_set(args.eval, rng)

    model = ToyViT()
    opt = torch.optim.AdamW(model.parameters(), lr=2e-3, weight_decay=1e-2)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=args.epochs)
    xt, yt = torch.from_numpy(xtr), torch.from_numpy(ytr)
    for epoch in range(args.epochs):
        model.train()
        perm = torch.randperm(len(xt))
        total = 0.0
        for i in range(0, len(xt), 128):
            idx = perm[i : i + 128]
            loss = F.cross_entropy(model(xt[idx]), yt[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        model.eval()
        with torch.no_grad():
            acc = (model(torch.from_numpy(xev)).argmax(-1).numpy() == yev).mean()
        print(f"epoch {epoch:2d} loss {total / len(xt):.4f} eval acc {acc:.3f}")

    write_model(model, os.path.join(args.out, "toy_vit"))
    write_dataset(xev, yev, os.path.join(args.out, "toy_eval"))


if __name__ == "__main__":
    main()
