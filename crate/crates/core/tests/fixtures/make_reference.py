"""Regenerates the engine reference fixtures with PyTorch.

Weights are the deterministic splitmix64 He-uniform weights also produced by
`VggPrefixModel::synthetic(SEED)` on the Rust side; activations come from
torch's own conv2d / relu / max_pool2d, so they are an independent oracle
for the Rust forward pass.

    python3 make_reference.py            # writes into this directory
"""

import hashlib
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

SEED = 1
SIDE = 64
MEANS = np.array([123.68, 116.779, 103.939], dtype=np.float32)

CONV_LAYERS = [
    ("conv1_1", 3, 64), ("conv1_2", 64, 64),
    ("conv2_1", 64, 128), ("conv2_2", 128, 128),
    ("conv3_1", 128, 256), ("conv3_2", 256, 256), ("conv3_3", 256, 256), ("conv3_4", 256, 256),
    ("conv4_1", 256, 512), ("conv4_2", 512, 512), ("conv4_3", 512, 512), ("conv4_4", 512, 512),
    ("conv5_1", 512, 512),
]
POOL_AFTER = {"conv1_2", "conv2_2", "conv3_4", "conv4_4"}
TAPS = ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"]

M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64(z):
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def synthetic_layer(seed, layer, inp, out):
    base = np.uint64(((seed << 40) ^ (layer << 32)) & 0xFFFFFFFFFFFFFFFF)
    klen = out * inp * 9
    j = np.arange(klen + out, dtype=np.uint64)
    with np.errstate(over="ignore"):
        u = (splitmix64(base ^ j) >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    sym = 2.0 * u - 1.0
    bound = np.sqrt(6.0 / (inp * 9))
    kernel = (sym[:klen] * bound).astype(np.float32).reshape(out, inp, 3, 3)
    bias = (sym[klen:] * 0.05).astype(np.float32)
    return kernel, bias


def reference_image():
    y, x = np.mgrid[0:SIDE, 0:SIDE]
    r = (x * 4 + y) % 256
    g = (y * 4 + 3 * x) % 256
    b = ((x ^ y) * 5 + 40) % 256
    return np.stack([r, g, b], axis=-1).astype(np.uint8)


def gbvr(values):
    flat = np.ascontiguousarray(values, dtype="<f4").ravel()
    return b"GBVR" + struct.pack("<IQ", 1, flat.size) + flat.tobytes()


def main(out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    rgb = reference_image()
    Image.fromarray(rgb, "RGB").save(out_dir / "reference_input.png")

    x = torch.from_numpy((rgb.astype(np.float32) - MEANS).transpose(2, 0, 1).copy())[None]
    outputs = {}
    with torch.no_grad():
        for idx, (name, inp, out) in enumerate(CONV_LAYERS):
            kernel, bias = synthetic_layer(SEED, idx, inp, out)
            x = F.relu(F.conv2d(x, torch.from_numpy(kernel), torch.from_numpy(bias), padding=1))
            if name in TAPS:
                outputs[name] = x[0].numpy().copy()
            if name == TAPS[-1]:
                break
            if name in POOL_AFTER:
                x = F.max_pool2d(x, 2, 2)

    sums = []
    for name in ["reference_input.png"] + [f"{t}.gbvr" for t in TAPS]:
        path = out_dir / name
        if name.endswith(".gbvr"):
            path.write_bytes(gbvr(outputs[name[:-5]]))
        sums.append(f"{hashlib.sha256(path.read_bytes()).hexdigest()}  {name}")
    (out_dir / "SHA256SUMS").write_text("\n".join(sums) + "\n")
    for t in TAPS:
        print(t, outputs[t].shape, float(outputs[t].max()))


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent)
