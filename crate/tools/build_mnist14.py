#!/usr/bin/env python3
"""Build the 14x14 MNIST fixture set and train the 196-64-32-32-10 MLP.

Source digits come from the `mnist` npm package (MIT, 10k MNIST samples at
28x28 grayscale). Images are 2x2 mean-pooled to 14x14, shuffled with a fixed
seed and split 8000 train / 2000 test. The MLP is trained with plain numpy
(Adam, fixed seed) and exported as a manifest plus little-endian f32 blob.

Usage:
    python3 tools/build_mnist14.py [--npm-dir DIR] [--out data/mnist14]

Without --npm-dir the script runs `npm pack mnist` in a temp directory.
"""

import argparse
import json
import os
import subprocess
import tarfile
import tempfile

import numpy as np

SEED = 20240601
N_TEST = 2000
N_CALIB = 64
LAYERS = [196, 64, 32, 32, 10]
ACTIVATIONS = ["relu", "tanh", "relu", "softmax"]


def fetch_npm_package(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = [f for f in os.listdir(workdir) if f.endswith(".tgz")][0]
    with tarfile.open(os.path.join(workdir, tgz)) as tf:
        tf.extractall(workdir)
    return os.path.join(workdir, "package")


def load_digits(pkg_dir):
    xs, ys = [], []
    for digit in range(10):
        with open(os.path.join(pkg_dir, "src", "digits", f"{digit}.json")) as f:
            raw = np.asarray(json.load(f)["data"], dtype=np.float64)
        imgs = raw.reshape(-1, 28, 28)
        pooled = imgs.reshape(-1, 14, 2, 14, 2).mean(axis=(2, 4))
        xs.append(pooled.reshape(-1, 196))
        ys.append(np.full(len(imgs), digit, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def write_blob(path, arr):
    arr = np.asarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write((" ".join(str(d) for d in arr.shape) + "\n").encode())
        f.write(arr.tobytes())


def forward(params, x):
    h = x
    acts = []
    for li, (w, b) in enumerate(params):
        z = h @ w.T + b
        kind = ACTIVATIONS[li]
        if kind == "relu":
            h = np.maximum(z, 0)
        elif kind == "tanh":
            h = np.tanh(z)
        else:
            e = np.exp(z - z.max(axis=1, keepdims=True))
            h = e / e.sum(axis=1, keepdims=True)
        acts.append((z, h))
    return acts


def train(x, y, rng, epochs=40, batch=64, lr=2e-3):
    params = []
    for fan_in, fan_out in zip(LAYERS[:-1], LAYERS[1:]):
        w = rng.normal(0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        params.append([w, np.zeros(fan_out)])
    m = [[np.zeros_like(p) for p in layer] for layer in params]
    v = [[np.zeros_like(p) for p in layer] for layer in params]
    step = 0
    onehot = np.eye(10)[y]
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch):
            idx = order[start:start + batch]
            xb, tb = x[idx], onehot[idx]
            acts = forward(params, xb)
            grad = (acts[-1][1] - tb) / len(idx)
            step += 1
            for li in reversed(range(len(params))):
                inp = xb if li == 0 else acts[li - 1][1]
                gw = grad.T @ inp + 1e-4 * params[li][0]
                gb = grad.sum(axis=0)
                if li > 0:
                    back = grad @ params[li][0]
                    z_prev, h_prev = acts[li - 1]
                    if ACTIVATIONS[li - 1] == "relu":
                        back = back * (z_prev > 0)
                    else:
                        back = back * (1 - h_prev ** 2)
                for pi, g in enumerate((gw, gb)):
                    m[li][pi] = 0.9 * m[li][pi] + 0.1 * g
                    v[li][pi] = 0.999 * v[li][pi] + 0.001 * g * g
                    mh = m[li][pi] / (1 - 0.9 ** step)
                    vh = v[li][pi] / (1 - 0.999 ** step)
                    params[li][pi] -= lr * mh / (np.sqrt(vh) + 1e-8)
                if li > 0:
                    grad = back
    return params


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--npm-dir")
    ap.add_argument("--out", default=os.path.join("data", "mnist14"))
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.npm_dir or fetch_npm_package(tmp)
        x, y = load_digits(pkg)

    rng = np.random.default_rng(SEED)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    x_test, y_test = x[:N_TEST], y[:N_TEST]
    x_train, y_train = x[N_TEST:], y[N_TEST:]

    params = train(x_train, y_train, rng)
    acc_train = (forward(params, x_train)[-1][1].argmax(1) == y_train).mean()
    acc_test = (forward(params, x_test)[-1][1].argmax(1) == y_test).mean()
    print(f"train top-1 {acc_train:.4f}  test top-1 {acc_test:.4f}")

    blob = []
    layers = []
    offset = 0
    for li, (w, b) in enumerate(params):
        layers.append({
            "kind": "dense",
            "dims": {"in": int(w.shape[1]), "out": int(w.shape[0])},
            "activation": ACTIVATIONS[li],
            "weight_offset": offset,
            "bias_offset": offset + w.size,
        })
        blob.append(w.ravel())
        blob.append(b)
        offset += w.size + b.size
    manifest = {"name": "mnist14-mlp-196-64-32-32-10", "input_shape": [196],
                "layers": layers}
    with open(os.path.join(args.out, "mlp.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    np.concatenate(blob).astype("<f4").tofile(os.path.join(args.out, "mlp.weights.bin"))

    write_blob(os.path.join(args.out, "test.inputs.bin"), x_test)
    with open(os.path.join(args.out, "test.labels.txt"), "w") as f:
        f.write("\n".join(str(int(v)) for v in y_test) + "\n")
    write_blob(os.path.join(args.out, "calib.inputs.bin"), x_train[:N_CALIB])


if __name__ == "__main__":
    main()
