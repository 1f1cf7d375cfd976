#!/usr/bin/env python3
"""Regenerate tests/data/golden.json from the reference metric toolbox.

Requires `pysodmetrics` (tested with 1.6.2), numpy and scipy. Predictions are
stored as integer numerators over 65535 so that both sides rebuild exactly the
same doubles.

    python3 scripts/gen_golden.py > tests/data/golden.json
"""
import json
import sys

import numpy as np
from py_sod_metrics import MAE, Emeasure, Smeasure, WeightedFmeasure

DEN = 65535


def ellipse(h, w, cy, cx, ry, rx):
    y, x = np.mgrid[0:h, 0:w]
    return ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0


def blur(a, k=5):
    out = np.zeros_like(a, dtype=np.float64)
    h, w = a.shape
    r = k // 2
    for i in range(h):
        for j in range(w):
            out[i, j] = a[max(0, i - r): i + r + 1, max(0, j - r): j + r + 1].mean()
    return out


def cases(rng):
    sq = np.zeros((64, 64), bool)
    sq[16:48, 16:48] = True
    yield "square_identity", sq, sq.astype(float)
    yield "square_complement", sq, 1.0 - sq
    yield "square_constant_half", sq, np.full(sq.shape, 0.5)
    yield "square_blurred", sq, blur(sq.astype(float), 7)
    yield "square_shifted", sq, np.roll(sq, (3, -5), axis=(0, 1)).astype(float)

    e = ellipse(48, 40, 20, 22, 12, 9)
    yield "ellipse_noisy", e, np.clip(e * 0.85 + rng.random(e.shape) * 0.3 - 0.05, 0, 1)
    yield "ellipse_random", e, rng.random(e.shape)
    yield "ellipse_soft", e, blur(e.astype(float), 9) * 0.9

    two = ellipse(40, 56, 12, 14, 7, 9) | ellipse(40, 56, 27, 40, 9, 11)
    yield "two_blobs_partial", two, ellipse(40, 56, 12, 14, 7, 9).astype(float) * 0.95
    yield "two_blobs_blur_noise", two, np.clip(blur(two.astype(float), 5) + rng.normal(0, 0.08, two.shape), 0, 1)

    line = np.zeros((32, 48), bool)
    line[15:17, 4:44] = True
    yield "thin_bar", line, blur(line.astype(float), 3)
    yield "thin_bar_offset", line, np.roll(line, 2, axis=0).astype(float) * 0.7

    corner = np.zeros((36, 36), bool)
    corner[:10, :12] = True
    yield "corner_object", corner, np.clip(blur(corner.astype(float), 5) + rng.random(corner.shape) * 0.1, 0, 1)

    edge = np.zeros((30, 40), bool)
    edge[:, 34:] = True
    yield "right_edge_object", edge, blur(edge.astype(float), 5)

    empty = np.zeros((24, 32), bool)
    yield "empty_gt_low", empty, rng.random(empty.shape) * 0.2
    yield "empty_gt_zero", empty, np.zeros(empty.shape)

    full = np.ones((20, 28), bool)
    yield "full_gt", full, np.clip(0.6 + rng.random(full.shape) * 0.4, 0, 1)

    ring = ellipse(50, 50, 25, 25, 18, 18) & ~ellipse(50, 50, 25, 25, 9, 9)
    yield "ring", ring, np.clip(blur(ring.astype(float), 5) * 1.1, 0, 1)
    yield "ring_filled_guess", ring, ellipse(50, 50, 25, 25, 18, 18).astype(float) * 0.8

    speck = np.zeros((40, 40), bool)
    speck[20, 20] = True
    speck[21, 20] = True
    yield "tiny_object", speck, blur(speck.astype(float), 3) * 4.0 / 9.0 * 2


def main():
    rng = np.random.default_rng(20240915)
    out = {"generator": "pysodmetrics 1.6.2, normalize=False", "denominator": DEN, "pairs": []}
    for name, gt, pred in cases(rng):
        pred = np.clip(pred, 0.0, 1.0)
        num = np.rint(pred * DEN).astype(np.int64)
        pred = num / DEN
        s, e, w, m = Smeasure(), Emeasure(), WeightedFmeasure(), MAE()
        for metric in (s, e, w, m):
            metric.step(pred, gt, normalize=False)
        out["pairs"].append({
            "name": name,
            "height": int(gt.shape[0]),
            "width": int(gt.shape[1]),
            "gt": gt.astype(np.uint8).ravel().tolist(),
            "pred": num.ravel().tolist(),
            "s_alpha": float(s.get_results()["sm"]),
            "e_phi": float(e.get_results()["em"]["curve"].mean()),
            "f_beta_w": float(w.get_results()["wfm"]),
            "mae": float(m.get_results()["mae"]),
        })
    assert len(out["pairs"]) == 20, len(out["pairs"])
    json.dump(out, sys.stdout, indent=None, separators=(",", ":"))
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
