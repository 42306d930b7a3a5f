"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeats 20] [--quick]

Times each hot kernel at the shapes it sees inside LMTCNN-1-1 at input 227,
then a full single-image forward and a forward+backward on a batch of 8.
Prints median milliseconds per backend and the speedup.
"""
import argparse
import statistics
import sys
import timeit

import numpy as np

from lmtcnn import kernels, ops
from lmtcnn.network import build_lmtcnn, forward
from lmtcnn.tensor import Rng
from lmtcnn.training import loss_and_grads


def cases(quick):
    r = np.random.default_rng(0)
    f32 = np.float32
    size = 64 if quick else 227
    x_conv1 = r.random((1, size, size, 3), dtype=f32)
    x_dw1 = r.random((1, 28, 28, 96), dtype=f32)
    w_dw1 = r.random((3, 3, 96), dtype=f32)
    b_dw1 = np.zeros(96, f32)
    x_pool = r.random((1, 56, 56, 96), dtype=f32)
    out_pool, arg = ops.maxpool2d_with_argmax(x_pool, 3, 2, "ceil")
    dout_dw, dout_pool = r.random(x_dw1.shape, dtype=f32), r.random(out_pool.shape, dtype=f32)
    k_conv1 = r.random((7, 7, 3, 96), dtype=f32)
    b_conv1 = np.zeros(96, f32)
    y_conv1 = ops.conv2d_forward(x_conv1, k_conv1, b_conv1, 4)
    dy_conv1 = r.random(y_conv1.shape, dtype=f32)

    net = build_lmtcnn(1, 1, size, rng=Rng(0))
    img = Rng(1).random((1, size, size, 3)).astype(f32)
    batch = Rng(2).random((8, size, size, 3)).astype(f32)
    ages, genders = np.arange(8) % 8, np.arange(8) % 2

    return {
        "conv1 forward (im2col)": lambda: ops.conv2d_forward(x_conv1, k_conv1, b_conv1, 4),
        "conv1 backward (col2im)": lambda: ops.conv2d_backward(x_conv1, k_conv1, dy_conv1, 4),
        "depthwise forward 28x28x96": lambda: ops.depthwise_conv2d_forward(x_dw1, w_dw1, b_dw1),
        "depthwise backward 28x28x96": lambda: ops.depthwise_conv2d_backward(x_dw1, w_dw1, dout_dw),
        "maxpool forward 56x56x96": lambda: ops.maxpool2d_with_argmax(x_pool, 3, 2, "ceil"),
        "maxpool backward 56x56x96": lambda: ops.maxpool2d_backward_from_argmax(dout_pool, arg, x_pool.shape),
        f"network forward, 1 image @{size}": lambda: forward(net, img),
        f"forward+backward, batch 8 @{size}": lambda: loss_and_grads(net, batch, ages, genders, 1.0, True, Rng(3)),
    }


def median_ms(fn, repeats):
    fn()
    return 1e3 * statistics.median(timeit.repeat(fn, number=1, repeat=repeats))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--quick", action="store_true", help="input 64 instead of 227")
    args = ap.parse_args(argv)

    names = [n for n in ("cython", "numpy") if n in kernels.BACKENDS]
    if len(names) < 2:
        print("compiled extension not built; only the numpy backend is available", file=sys.stderr)
    previous = kernels.BACKEND
    results = {}
    for name in names:
        kernels.use(name)
        for label, fn in cases(args.quick).items():
            results.setdefault(label, {})[name] = median_ms(fn, args.repeats)
    kernels.use(previous)

    width = max(map(len, results))
    head = f"{'kernel':<{width}}" + "".join(f"{n + ' ms':>12}" for n in names)
    print(head + (f"{'speedup':>10}" if len(names) == 2 else ""))
    for label, row in results.items():
        line = f"{label:<{width}}" + "".join(f"{row[n]:>12.3f}" for n in names)
        if len(names) == 2:
            line += f"{row['numpy'] / row['cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
