"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--size 64]

Each row reports the median wall time per call for both backends and the
ratio, plus the largest absolute difference between the two results
(0 means bit-identical).
"""
import argparse
import time

import numpy as np
from threadpoolctl import threadpool_limits

from tinynina import _kernels_py, backend
from tinynina import autograd as ag
from tinynina.model import TinyNina
from tinynina.tensor import resample_table


def _max_diff(a, b):
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def kernel_cases(size, rng):
    c, k = 64, 3
    xp = rng.normal(size=(c, size + 2, size + 2))
    w = rng.normal(size=(c, k, k))
    b = rng.normal(size=c)
    g = rng.normal(size=(c, size, size))
    cols = rng.normal(size=(c * k * k, size * size))
    img = rng.normal(size=(12, size, size))
    idx, wts = resample_table(size, 2 * size)
    gi = rng.normal(size=(12, 2 * size, size))
    return {
        "im2col": lambda m: m.im2col(xp, k, 1, size, size),
        "col2im": lambda m: m.col2im(cols, c, size + 2, size + 2, k, 1, size, size),
        "depthwise_forward": lambda m: m.depthwise_forward(xp, w, b),
        "depthwise_backward": lambda m: m.depthwise_backward(xp, w, g),
        "resample_axis": lambda m: m.resample_axis(img, idx, wts, 1),
        "resample_axis_T": lambda m: m.resample_axis_T(gi, idx, wts, size, 1),
    }


def model_step(size, rng):
    net = TinyNina.build(seed=0)
    x = rng.normal(size=(12, size, size))
    weights = rng.normal(size=(12, 2 * size, 2 * size))

    def run():
        net.params.zero_grad()
        loss = ag.sum_all(ag.mul(net(x), weights))
        ag.backward(loss, net.params)
        return net.params.grads["embed.weight"].copy()

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args(argv)

    if "compiled" not in backend.available():
        print("compiled kernels are not built; only the numpy fallback is available")
        return 1
    compiled = backend._BACKENDS["compiled"]
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy ms':>12}{'compiled ms':>14}{'speedup':>10}{'max |diff|':>13}")
    with threadpool_limits(limits=1):
        for name, fn in kernel_cases(args.size, rng).items():
            t_py = _median_time(lambda: fn(_kernels_py), args.repeat)
            t_c = _median_time(lambda: fn(compiled), args.repeat)
            diff = _max_diff(fn(_kernels_py), fn(compiled))
            print(f"{name:<28}{1e3 * t_py:>12.3f}{1e3 * t_c:>14.3f}{t_py / t_c:>10.2f}"
                  f"{diff:>13.2e}")

        run = model_step(args.size // 2, rng)
        outs, times = {}, {}
        prev = backend.name()
        for which in ("python", "compiled"):
            backend.set_backend(which)
            times[which] = _median_time(run, max(3, args.repeat // 4))
            outs[which] = run()
        backend.set_backend(prev)
        label = f"tinynina fwd+bwd {args.size // 2}px"
        print(f"{label:<28}{1e3 * times['python']:>12.3f}{1e3 * times['compiled']:>14.3f}"
              f"{times['python'] / times['compiled']:>10.2f}"
              f"{_max_diff(outs['python'], outs['compiled']):>13.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
