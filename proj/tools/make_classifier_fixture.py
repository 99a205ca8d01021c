#!/usr/bin/env python3
"""Trains the tiny two-class classifier stored under tests/fixtures/classifier.

The task: 8 analog features in [0, 1]; class 0 is brighter on the first four,
class 1 on the last four. A bias-free 8-16-2 ReLU MLP is trained with plain
gradient descent on softmax cross-entropy. Spiking layers use soft reset so
firing rates track the converted activations. Deterministic for a given seed.
"""

import argparse
import json
from pathlib import Path

import numpy as np

N_IN, N_HIDDEN, N_OUT = 8, 16, 2
THRESHOLD = 256


def make_samples(rng, n):
    labels = rng.integers(0, 2, size=n)
    x = rng.uniform(0.0, 0.6, size=(n, N_IN))
    bright = rng.uniform(0.25, 0.9, size=(n, N_IN // 2))
    for k, c in enumerate(labels):
        lo = 0 if c == 0 else N_IN // 2
        x[k, lo:lo + N_IN // 2] = bright[k]
    return x.astype(np.float32), labels


def train(rng, x, y, epochs=3000, lr=0.05):
    w1 = rng.normal(0.0, 0.5, size=(N_IN, N_HIDDEN))
    w2 = rng.normal(0.0, 0.5, size=(N_HIDDEN, N_OUT))
    onehot = np.eye(N_OUT)[y]
    for _ in range(epochs):
        h = np.maximum(x @ w1, 0.0)
        z = h @ w2
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        dz = (p - onehot) / len(x)
        dw2 = h.T @ dz
        dh = dz @ w2.T * (h > 0)
        dw1 = x.T @ dh
        w1 -= lr * dw1
        w2 -= lr * dw2
    return w1.astype(np.float32), w2.astype(np.float32)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "tests/fixtures/classifier")
    ap.add_argument("--seed", type=int, default=12)
    ap.add_argument("--test-samples", type=int, default=100)
    ap.add_argument("--calib-samples", type=int, default=64)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    x_train, y_train = make_samples(rng, 400)
    w1, w2 = train(rng, x_train, y_train)
    x_test, y_test = make_samples(rng, args.test_samples)

    pred = np.argmax(np.maximum(x_test @ w1, 0.0) @ w2, axis=1)
    print(f"float test error {np.mean(pred != y_test):.4f}")

    args.out.mkdir(parents=True, exist_ok=True)
    blob = np.concatenate([w1.ravel(), w2.ravel()]).astype("<f4")
    blob.tofile(args.out / "weights.bin")
    manifest = {
        "name": "tiny_classifier",
        "timesteps": 200,
        "blob": {"path": "weights.bin", "dtype": "f32le"},
        "layers": [
            {"id": "input", "kind": "Input", "shape": [1, 1, N_IN],
             "neuron": {"threshold": THRESHOLD}},
            {"id": "hidden", "kind": "Dense", "units": N_HIDDEN,
             "neuron": {"threshold": THRESHOLD, "reset": "soft"},
             "weights": {"offset": 0, "count": int(w1.size)}},
            {"id": "output", "kind": "Dense", "units": N_OUT,
             "neuron": {"threshold": THRESHOLD, "reset": "soft"},
             "weights": {"offset": int(w1.size), "count": int(w2.size)}},
        ],
    }
    (args.out / "model.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    x_train[:args.calib_samples].astype("<f4").tofile(args.out / "calib.bin")
    x_test.astype("<f4").tofile(args.out / "inputs.bin")
    (args.out / "labels.txt").write_text("\n".join(str(int(c)) for c in y_test) + "\n")


if __name__ == "__main__":
    main()
