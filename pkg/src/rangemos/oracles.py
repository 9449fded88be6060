"""Independent reference implementations and the randomized block check.

Each oracle computes the same quantity as a production kernel by a different
route (explicit offset sums, dense grids, set enumeration), so agreement is
evidence that both are right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import blocks, losses, siem


def sapl_oracle(x, kernel_h, kernel_w):
    """Sum over the ``kernel_h * kernel_w`` in-block offsets, divided by their count."""
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros((x.shape[0], x.shape[1] // kernel_h, x.shape[2] // kernel_w))
    for i in range(kernel_w):
        for j in range(kernel_h):
            acc += x[:, j::kernel_h, i::kernel_w]
    return acc / (kernel_h * kernel_w)


def pixel_shuffle_oracle(x, ratio_h, ratio_w):
    C, H, W = x.shape
    r = ratio_h * ratio_w
    out = np.empty((C // r, H * ratio_h, W * ratio_w))
    for c in range(C // r):
        for i in range(ratio_h):
            for j in range(ratio_w):
                out[c, i::ratio_h, j::ratio_w] = x[c * r + i * ratio_w + j]
    return out


def mga_oracle(f_semantic, f_motion, params):
    """Gate, pool, softmax and skip computed channel by channel with scalar math."""
    C, H, W = f_motion.shape
    gated = np.empty_like(f_motion, dtype=np.float64)
    for o in range(C):
        pre = np.full((H, W), params.gate_bias[o])
        for c in range(C):
            pre = pre + params.gate_weight[o, c] * f_semantic[c]
        gated[o] = f_motion[o] / (1.0 + np.exp(-pre))
    pooled = [float(np.sum(gated[o])) / (H * W) for o in range(C)]
    logits = [params.attn_bias[o] + sum(params.attn_weight[o, c] * pooled[c] for c in range(C))
              for o in range(C)]
    top = max(logits)
    exps = [math.exp(v - top) for v in logits]
    total = sum(exps)
    weights = np.array([C * e / total for e in exps])
    out = np.empty_like(gated)
    for o in range(C):
        out[o] = weights[o] * gated[o] + f_motion[o]
    return out, weights


def sgb_oracle(grid, params):
    """Dense-lattice evaluation with explicit zero padding."""
    Dx, Dy, Dz = (int(d) for d in grid.dims)
    C = grid.channels
    taps = params.taps
    pad = taps // 2
    dense = np.zeros((C, Dx + 2 * pad, Dy + 2 * pad, Dz + 2 * pad))
    cx, cy, cz = (grid.coords[:, a] + pad for a in range(3))
    dense[:, cx, cy, cz] = grid.features.T

    cat = []
    for axis, (w, b) in enumerate(zip(params.branch_weights, params.branch_biases)):
        for o in range(w.shape[0]):
            acc = np.full((Dx, Dy, Dz), b[o])
            for t in range(taps):
                lo = [pad, pad, pad]
                lo[axis] += t - pad
                window = dense[:, lo[0]:lo[0] + Dx, lo[1]:lo[1] + Dy, lo[2]:lo[2] + Dz]
                for c in range(C):
                    acc = acc + w[o, c, t] * window[c]
            cat.append(acc)
    cat = np.stack(cat)

    out = np.empty_like(grid.features)
    x, y, z = grid.coords[:, 0], grid.coords[:, 1], grid.coords[:, 2]
    for o in range(C):
        fused = np.full(len(x), params.fusion_bias[o])
        for m in range(cat.shape[0]):
            fused = fused + params.fusion_weight[o, m] * cat[m, x, y, z]
        out[:, o] = grid.features[:, o] + fused
    return out


def jaccard_set_loss(mistakes, positives):
    """``|M| / |positives U M|`` for explicit index sets."""
    if not mistakes:
        return 0.0
    return len(mistakes) / len(positives | mistakes)


def lovasz_extension_oracle(errors, positives):
    """Lovasz extension of the Jaccard set loss as an integral over level sets.

    For ``errors >= 0``: ``f(e) = integral_0^inf F({i : e_i >= t}) dt``, evaluated
    exactly because the integrand is piecewise constant between distinct values.
    """
    errors = [float(e) for e in errors]
    levels = sorted(set(errors), reverse=True) + [0.0]
    total = 0.0
    for hi, lo in zip(levels[:-1], levels[1:]):
        level_set = {i for i, e in enumerate(errors) if e >= hi}
        total += (hi - lo) * jaccard_set_loss(level_set, positives)
    return total


def lovasz_softmax_oracle(probabilities, labels):
    probs = np.asarray(probabilities, dtype=np.float64)
    vals = []
    for c in range(probs.shape[1]):
        positives = {i for i, y in enumerate(labels) if y == c}
        if not positives:
            continue
        errors = [1.0 - probs[i, c] if i in positives else probs[i, c] for i in range(len(probs))]
        vals.append(lovasz_extension_oracle(errors, positives))
    return sum(vals) / len(vals) if vals else 0.0


# -- randomized block check -------------------------------------------------

@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.instances} instances, "
                f"max error {self.max_error:.3e} (tol {self.tolerance:.0e})")


CHECK_NAMES = ("sapl", "pixel_shuffle", "mga_fuse", "sgb_forward", "lovasz_softmax")


def _random_grid(rng, channels):
    n = int(rng.integers(1, 40))
    pts = rng.uniform(0.0, 1.0, (n, 3))
    feats = rng.normal(0.0, 1.0, (n, channels))
    return siem.voxelize(pts, feats, resolution=0.25)


def run_block_checks(seed=0, instances=50, fault=None):
    """Compare each kernel with its oracle on random inputs.

    ``fault`` names a check whose production output gets perturbed; it exists
    so the failure path of the command can be exercised.
    """
    if fault is not None and fault not in CHECK_NAMES:
        raise ValueError(f"unknown check {fault!r}; choose from {', '.join(CHECK_NAMES)}")
    rng = np.random.default_rng(seed)
    bump = {name: (1e-3 if name == fault else 0.0) for name in CHECK_NAMES}
    results = []

    err = 0.0
    for _ in range(instances):
        C = int(rng.integers(1, 9))
        H = 2 * int(rng.integers(1, 33))
        W = 4 * int(rng.integers(1, 33))
        x = rng.normal(0.0, 1.0, (C, H, W))
        got = blocks.sapl(x, 2, 4) + bump["sapl"]
        err = max(err, float(np.abs(got - sapl_oracle(x, 2, 4)).max()),
                  abs(float(got.mean()) - float(x.mean())))
    results.append(CheckResult("sapl", instances, err, 1e-6))

    err = 0.0
    for _ in range(instances):
        C = 8 * int(rng.integers(1, 3))
        x = rng.normal(0.0, 1.0, (C, int(rng.integers(1, 9)), int(rng.integers(1, 9))))
        got = blocks.pixel_shuffle(x, 2, 4) + bump["pixel_shuffle"]
        err = max(err, float(np.abs(got - pixel_shuffle_oracle(x, 2, 4)).max()))
    results.append(CheckResult("pixel_shuffle", instances, err, 1e-12))

    err = 0.0
    for _ in range(instances):
        C = int(rng.integers(1, 6))
        shape = (C, int(rng.integers(1, 7)), int(rng.integers(1, 7)))
        fs, fm = rng.normal(0.0, 1.0, shape), rng.normal(0.0, 1.0, shape)
        params = blocks.FusionParams.random(C, rng)
        res = blocks.mga_fuse(fs, fm, params, return_intermediates=True)
        ref, ref_w = mga_oracle(fs, fm, params)
        err = max(err, float(np.abs(res.output + bump["mga_fuse"] - ref).max()),
                  float(np.abs(res.channel_weights - ref_w).max()),
                  abs(float(res.channel_weights.sum()) - C))
    results.append(CheckResult("mga_fuse", instances, err, 1e-6))

    err = 0.0
    for _ in range(instances):
        C = int(rng.integers(1, 4))
        grid = _random_grid(rng, C)
        params = siem.SgbParams.random(C, int(rng.integers(1, 4)), rng)
        got = siem.sgb_forward(grid, params).features + bump["sgb_forward"]
        err = max(err, float(np.abs(got - sgb_oracle(grid, params)).max()))
    results.append(CheckResult("sgb_forward", instances, err, 1e-6))

    err = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 7))
        K = int(rng.integers(2, 4))
        probs = rng.dirichlet(np.ones(K), n)
        labels = rng.integers(0, K, n)
        got = losses.lovasz_softmax(probs, labels) + bump["lovasz_softmax"]
        err = max(err, abs(got - lovasz_softmax_oracle(probs, labels)))
    results.append(CheckResult("lovasz_softmax", instances, err, 1e-9))
    return results
