# Copyright 2026 The dnseg Authors.
# SPDX-License-Identifier: Apache-2.0
"""Independent reference values for the C++ unit tests.

Run with `python3 tests/oracles/oracles.py`; the printed numbers are frozen
into tests/*.cpp. Uses sympy for symbolic cases and torch autograd for
tensor cases, so nothing here shares code with the library.
"""
import json
import math

import numpy as np
import sympy as sp
import torch
import torch.nn.functional as F

torch.set_default_dtype(torch.float64)
out = {}

# conv: 3x3 ones over 1..9, zero padding, centre output.
x = torch.arange(1.0, 10.0).reshape(1, 1, 3, 3)
out["conv_center"] = F.conv2d(x, torch.ones(1, 1, 3, 3), padding=1)[0, 0, 1, 1].item()

# Scalar GDN y = z / (beta + gamma |z|).
z, b, g = sp.symbols("z b g", real=True)
y = z / (b + g * sp.Abs(z))
at = {z: 2, b: 1, g: 1}
out["dn_scalar"] = {
    "y": float(y.subs(at)),
    "dy_dz": float(sp.diff(y, z).subs(at)),
    "dy_db": float(sp.diff(y, b).subs(at)),
    "dy_dg": float(sp.diff(y, g).subs(at)),
    "y_neg": float(y.subs({z: -2, b: 1, g: 1})),
}
zz = np.array([1.0, 3.0])
D = 1.0 + np.ones((2, 2)) @ np.abs(zz)
out["dn_two_channel"] = {"D": D.tolist(), "y": (zz / D).tolist()}


def pattern(shape, a, b, c, d):
    n, ch, h, w = shape
    t = torch.empty(shape)
    for i in range(n):
        for k in range(ch):
            for yy in range(h):
                for xx in range(w):
                    t[i, k, yy, xx] = math.sin(a * k + b * yy + c * xx + d * i)
    return t


# GDN on a deterministic (1, 2, 6, 6) input, window 3, reflect padding.
C, H, W, K = 2, 6, 6, 3
zt = pattern((1, C, H, W), 1.3, 0.7, -0.4, 0.0).requires_grad_(True)
beta = torch.tensor([0.5, 0.8], requires_grad=True)
gamma = torch.empty(C, C, K, K)
for i in range(C):
    for j in range(C):
        for dy in range(K):
            for dx in range(K):
                gamma[i, j, dy, dx] = 0.05 * (1 + i + 2 * j) * (1 + abs(dy - 1) + abs(dx - 1)) / 3.0
gamma.requires_grad_(True)
pool = F.conv2d(F.pad(zt.abs(), (1, 1, 1, 1), mode="reflect"), gamma, bias=beta)
yt = zt / pool
gy = pattern((1, C, H, W), 0.9, -0.3, 0.5, 0.0)
(yt * gy).sum().backward()
out["dn_pattern"] = {
    "y_sum": yt.sum().item(),
    "y_sq_sum": (yt * yt).sum().item(),
    "y_0_0_0": yt[0, 0, 0, 0].item(),
    "y_1_5_2": yt[0, 1, 5, 2].item(),
    "gz_sum": zt.grad.sum().item(),
    "gz_0_3_3": zt.grad[0, 0, 3, 3].item(),
    "gbeta": beta.grad.tolist(),
    "ggamma_sum": gamma.grad.sum().item(),
    "ggamma_1_0_2_1": gamma.grad[1, 0, 2, 1].item(),
}

# conv2d with reflect padding, (1, 2, 5, 4) -> 3 channels, 3x3.
xc = pattern((1, 2, 5, 4), 0.6, 0.35, -0.8, 0.0).requires_grad_(True)
wc = pattern((3, 2, 3, 3), 0.2, 1.1, 0.45, 0.0).requires_grad_(True)
bc = torch.tensor([0.1, -0.2, 0.3], requires_grad=True)
yc = F.conv2d(F.pad(xc, (1, 1, 1, 1), mode="reflect"), wc, bias=bc)
gc = pattern(tuple(yc.shape), -0.5, 0.25, 0.75, 0.0)
(yc * gc).sum().backward()
out["conv_reflect"] = {
    "y_sum": yc.sum().item(),
    "y_2_4_3": yc[0, 2, 4, 3].item(),
    "gx_sum": xc.grad.sum().item(),
    "gx_1_0_0": xc.grad[0, 1, 0, 0].item(),
    "gw_sum": wc.grad.sum().item(),
    "gb": bc.grad.tolist(),
}

# Fog, MAE, IoU, CV, Adam.
t = math.exp(-math.log(2.0) * 1.0)
out["fog"] = 0.8 * t + 1.0 * (1 - t)
out["mae_single_pixel"] = (abs(0 - 1) + abs(0 - 0)) / 2
pred, gt = np.array([1, 1, 0, 0]), np.array([1, 0, 1, 0])
out["iou_class1"] = float(((pred == 1) & (gt == 1)).sum() / ((pred == 1) | (gt == 1)).sum())
rms = np.array([1.0, 3.0])
out["cv_two_tiles"] = float(rms.std() / rms.mean())
lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
m, v = (1 - b1) * 1.0, (1 - b2) * 1.0
out["adam_first_step"] = -lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)


# Parameter counts of the default network (3 -> 16/32/64 -> K=4, window 5).
def conv_params(i, o, k):
    return o * i * k * k + o


c1, c2, c3, k = 16, 32, 64, 5
base = (conv_params(3, c1, 3) + conv_params(c1, c2, 3) + conv_params(c2, c3, 3)
        + conv_params(c3, c3, 3) + conv_params(2 * c3, c2, 3) + conv_params(2 * c2, c1, 3)
        + conv_params(2 * c1, c1, 3) + conv_params(c1, 4, 1))
dn = sum(c + c * c * k * k for c in (3, c1, c2, c3))
out["params"] = {"none": base, "dn1": base + 3 + 9 * k * k, "dn4": base + dn}

print(json.dumps(out, indent=2))
