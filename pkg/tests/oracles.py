"""Independent reference computations the package is checked against.

Everything here is written from the defining formulas with plain loops or
functional torch calls, sharing no code paths with the implementation.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

from curvexpand.nets.blocks import SpadeParams, spade_normalize

# -- SPADE finite differences ------------------------------------------------------------


def random_spade_case(rng: np.random.Generator):
    """Small random float64 SPADE problem: (h_in, segmap_feat, params, groups)."""
    groups = int(rng.choice([1, 2, 4]))
    channels = groups * int(rng.integers(1, 3))
    cond = int(rng.integers(1, 4))
    hidden = int(rng.integers(2, 5))
    size = int(rng.choice([4, 6]))
    seg_size = int(rng.choice([size, size // 2]))
    t = lambda *shape: torch.tensor(rng.normal(size=shape), dtype=torch.float64)  # noqa: E731
    h = t(1, channels, size, size)
    seg = t(1, cond, seg_size, seg_size)
    params = SpadeParams(
        t(hidden, cond, 3, 3) * 0.5, t(hidden) * 0.1,
        t(channels, hidden, 3, 3) * 0.3, t(channels) * 0.1,
        t(channels, hidden, 3, 3) * 0.3, t(channels) * 0.1,
    )
    return h, seg, params, groups


def spade_gradient_errors(h, seg, params: SpadeParams, groups: int, step: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Relative error between autograd and central differences, per input group.

    The scalar objective is a fixed random projection of the SPADE output.
    """
    names = ["h_in", "segmap_feat", *params.__dataclass_fields__]
    inputs = [h, seg, *(getattr(params, n) for n in params.__dataclass_fields__)]
    proj = torch.tensor(
        np.random.default_rng(seed).normal(size=tuple(h.shape)), dtype=torch.float64
    )

    def objective(values):
        p = SpadeParams(*values[2:])
        return float((spade_normalize(values[0], values[1], p, groups) * proj).sum())

    leaves = [x.detach().clone().requires_grad_(True) for x in inputs]
    out = (spade_normalize(leaves[0], leaves[1], SpadeParams(*leaves[2:]), groups) * proj).sum()
    analytic = torch.autograd.grad(out, leaves)

    errors = {}
    base = [x.detach().clone() for x in inputs]
    for k, name in enumerate(names):
        numeric = torch.zeros_like(base[k])
        flat = numeric.view(-1)
        for i in range(flat.numel()):
            plus = [x.clone() for x in base]
            minus = [x.clone() for x in base]
            plus[k].view(-1)[i] += step
            minus[k].view(-1)[i] -= step
            flat[i] = (objective(plus) - objective(minus)) / (2 * step)
        a = analytic[k]
        scale = max(float(a.norm()), float(numeric.norm()), 1e-12)
        errors[name] = float((a - numeric).norm()) / scale
    return errors


# -- attention -----------------------------------------------------------------------------


def naive_attention(x: np.ndarray, tokens: np.ndarray, wq, wk, wv, wo, bo) -> np.ndarray:
    """Single-head attention with explicit loops. x: (N, C), tokens: (L, D); W as (out, in)."""
    n, c = x.shape
    q = x @ wq.T
    k = tokens @ wk.T
    v = tokens @ wv.T
    out = np.zeros((n, c))
    for i in range(n):
        scores = [sum(q[i, d] * k[j, d] for d in range(c)) / math.sqrt(c) for j in range(len(tokens))]
        m = max(scores)
        w = [math.exp(s - m) for s in scores]
        z = sum(w)
        for j in range(len(tokens)):
            out[i] += w[j] / z * v[j]
    return out @ wo.T + bo


# -- vanilla control branch (no SPADE code path) -------------------------------------------


def _conv(x, sd, prefix, stride=1, padding=1):
    return F.conv2d(x, sd[prefix + ".weight"], sd[prefix + ".bias"], stride=stride, padding=padding)


def _group_norm(x, sd, prefix, groups):
    return F.group_norm(x, groups, sd[prefix + ".weight"], sd[prefix + ".bias"], eps=1e-5)


def _groups(c):
    return min(8, c)


def _res(x, temb, sd, p):
    cin = x.shape[1]
    h = _conv(F.silu(_group_norm(x, sd, p + ".norm1", _groups(cin))), sd, p + ".conv1")
    h = h + F.linear(F.silu(temb), sd[p + ".time_proj.weight"], sd[p + ".time_proj.bias"])[:, :, None, None]
    h = _conv(F.silu(_group_norm(h, sd, p + ".norm2", _groups(h.shape[1]))), sd, p + ".conv2")
    skip = _conv(x, sd, p + ".skip", padding=0) if p + ".skip.weight" in sd else x
    return skip + h


def _attn(h, tokens, mask, sd, p):
    b, c, hh, ww = h.shape
    x = _group_norm(h, sd, p + ".norm", _groups(c)).flatten(2).transpose(1, 2)
    q = x @ sd[p + ".to_q.weight"].T
    k = tokens @ sd[p + ".to_k.weight"].T
    v = tokens @ sd[p + ".to_v.weight"].T
    s = q @ k.transpose(1, 2) / math.sqrt(c)
    s = s.masked_fill(~mask[:, None, :], float("-inf"))
    o = torch.softmax(s, -1) @ v
    o = o @ sd[p + ".to_out.weight"].T + sd[p + ".to_out.bias"]
    return h + o.transpose(1, 2).reshape(b, c, hh, ww)


def _time(t, sd, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    emb = F.linear(emb, sd["time_embed.mlp.0.weight"], sd["time_embed.mlp.0.bias"])
    return F.linear(F.silu(emb), sd["time_embed.mlp.2.weight"], sd["time_embed.mlp.2.bias"])


def vanilla_control_forward(control, z, t, text, segmap):
    """Reference forward of a control branch with no SPADE stages, from raw weights."""
    cfg = control.cfg
    sd = {k: v.detach() for k, v in control.state_dict().items()}
    m = text.mask.to(text.tokens.dtype)[..., None]
    pooled = (text.tokens * m).sum(1) / m.sum(1).clamp_min(1.0)
    temb = _time(t, sd, cfg.time_dim) + F.linear(pooled, sd["text_pool.weight"], sd["text_pool.bias"])

    feat = _conv(F.silu(_conv(segmap, sd, "cond.stem.0")), sd, "cond.stem.2")
    h = _conv(torch.cat([z, feat], 1), sd, "conv_in")
    residuals = []
    for i in range(cfg.n_stages):
        p = f"down.{i}"
        h = _res(h, temb, sd, p + ".res")
        if i in cfg.attention_stages:
            h = _attn(h, text.tokens, text.mask, sd, p + ".attn")
        residuals.append(_conv(h, sd, f"bridges.{i}", padding=0))
        if i < cfg.n_stages - 1:
            h = _conv(h, sd, p + ".down.conv", stride=2)
    h = _res(h, temb, sd, "mid.res1")
    h = _attn(h, text.tokens, text.mask, sd, "mid.attn")
    h = _res(h, temb, sd, "mid.res2")
    return residuals, _conv(h, sd, "mid_bridge", padding=0)


# -- Otsu ----------------------------------------------------------------------------------


def brute_force_otsu(img: np.ndarray) -> int:
    """Smallest threshold t maximizing w0*w1*(mu0-mu1)^2 with class 0 = {x <= t}."""
    values = img.ravel().astype(np.int64)
    n = len(values)
    best_t, best = 0, None
    for t in range(256):
        lo = values[values <= t]
        hi = values[values > t]
        if len(lo) == 0 or len(hi) == 0:
            score = (0, 1)
        else:
            # n^2 * sigma_b^2 = n0*n1*(mu0-mu1)^2 scaled to integers: (n1*S0 - n0*S1)^2 / (n0*n1)
            s0, s1 = int(lo.sum()), int(hi.sum())
            n0, n1 = len(lo), len(hi)
            score = ((n1 * s0 - n0 * s1) ** 2, n0 * n1)
        if best is None or score[0] * best[1] > best[0] * score[1]:
            best_t, best = t, score
    assert n > 0
    return best_t


# -- confusion counts ----------------------------------------------------------------------


def confusion_oracle(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int, int]:
    tp = fp = fn = tn = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def miou_oracle(pred, gt) -> float:
    tp, fp, fn, tn = confusion_oracle(pred, gt)
    fg = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
    bg = 1.0 if tn + fp + fn == 0 else tn / (tn + fp + fn)
    return 100.0 * (fg + bg) / 2


def f1_oracle(pred, gt) -> float:
    tp, fp, fn, _ = confusion_oracle(pred, gt)
    return 100.0 if tp + fp + fn == 0 else 100.0 * 2 * tp / (2 * tp + fp + fn)
