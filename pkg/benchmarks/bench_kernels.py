"""Compare the compiled kernel extension against the pure-numpy fallback.

Times the conv/tconv forward+backward hot path on the real architecture
geometries, then a full ssDAAE training step, under both backends.  Run:

    python benchmarks/bench_kernels.py [--batch 8] [--repeat 10]

Backend selection happens at import time, so each backend runs in a
subprocess with DAAE_KERNELS set accordingly.
"""

import argparse
import json
import os
import subprocess
import sys
import time

ENCODER_GEOMETRIES = [
    # (name, in_ch, out_ch, extent, kernel, stride, padding)
    ("enc conv1 64x64", 3, 64, 64, 5, 2, 2),
    ("enc conv2 32x32", 64, 128, 32, 5, 2, 2),
    ("enc conv3 16x16", 128, 256, 16, 5, 2, 2),
    ("enc conv4 8x8", 256, 512, 8, 5, 2, 2),
]
DECODER_GEOMETRIES = [
    ("dec tconv1 4x4", 512, 256, 4, 3, 2, 1),
    ("dec tconv2 8x8", 256, 128, 8, 3, 2, 1),
    ("dec tconv3 16x16", 128, 64, 16, 3, 2, 1),
    ("dec tconv4 32x32", 64, 3, 32, 3, 2, 1),
]


def timed(fn, repeat):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_current_backend(batch, repeat):
    import numpy as np

    import daae.backend as backend
    from daae import layers as L
    from daae import losses as lss
    from daae.autodiff import Tensor, backward, zero_grads
    from daae.models import build_variant, sample_prior

    rng = np.random.default_rng(0)
    rows = []

    for name, cin, cout, extent, k, s, p in ENCODER_GEOMETRIES:
        x = Tensor(rng.standard_normal((batch, cin, extent, extent)).astype(np.float32),
                   requires_grad=True)
        w = Tensor((rng.standard_normal((cout, cin, k, k)) * 0.05).astype(np.float32),
                   requires_grad=True)
        b = Tensor(np.zeros(cout, np.float32), requires_grad=True)

        def step():
            zero_grads([x, w, b])
            backward(L.conv2d(x, w, b, s, p).sum())

        rows.append((f"conv fwd+bwd {name}", timed(step, repeat)))

    for name, cin, cout, extent, k, s, p in DECODER_GEOMETRIES:
        x = Tensor(rng.standard_normal((batch, cin, extent, extent)).astype(np.float32),
                   requires_grad=True)
        w = Tensor((rng.standard_normal((cout, cin, k, k)) * 0.05).astype(np.float32),
                   requires_grad=True)
        b = Tensor(np.zeros(cout, np.float32), requires_grad=True)

        def step():
            zero_grads([x, w, b])
            backward(L.tconv2d(x, w, b, s, p, 1).sum())

        rows.append((f"tconv fwd+bwd {name}", timed(step, repeat)))

    model = build_variant("ssdaae", sigma=0.1, seed=0)
    weights = lss.LossWeights()
    images = Tensor(rng.random((batch, 3, 64, 64)).astype(np.float32))

    def full_step():
        x_noisy = model.maybe_corrupt(images, rng)
        y_hat, z_hat = model.encode(x_noisy)
        x_hat = model.decode(y_hat, z_hat)
        l_rec = lss.mse(x_hat, images)
        l_ry = lss.encoder_regularisation_loss(model.label_disc, y_hat)
        l_rz = lss.encoder_regularisation_loss(model.latent_disc, z_hat)
        backward(lss.encoder_combined_loss(None, l_rec, l_ry, l_rz, weights))
        zero_grads([p for _, p in model.parameters()])
        z_real = sample_prior("latent", batch, rng)
        backward(lss.discriminator_loss(model.latent_disc, z_real, z_hat.detach()))
        zero_grads([p for _, p in model.parameters()])

    rows.append((f"ssdaae fwd+bwd phases (batch {batch})", timed(full_step, max(3, repeat // 2))))
    return backend.backend_name(), rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--repeat", type=int, default=10)
    parser.add_argument("--as-backend", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.as_backend:
        name, rows = bench_current_backend(args.batch, args.repeat)
        print(json.dumps({"backend": name, "rows": rows}))
        return

    results = {}
    for backend in ("compiled", "numpy"):
        env = dict(os.environ, DAAE_KERNELS=backend)
        proc = subprocess.run(
            [sys.executable, __file__, "--batch", str(args.batch),
             "--repeat", str(args.repeat), "--as-backend", backend],
            capture_output=True, text=True, env=env,
        )
        if proc.returncode != 0:
            print(f"{backend}: failed\n{proc.stderr}", file=sys.stderr)
            continue
        payload = json.loads(proc.stdout.strip().splitlines()[-1])
        results[payload["backend"]] = dict(payload["rows"])

    if not results:
        sys.exit(1)
    names = list(next(iter(results.values())))
    print(f"{'kernel':<42}" + "".join(f"{b:>14}" for b in results) + f"{'speedup':>10}")
    for name in names:
        line = f"{name:<42}"
        times = [results[b].get(name) for b in results]
        for t in times:
            line += f"{t * 1000:>11.1f} ms" if t else f"{'n/a':>14}"
        if len(times) == 2 and all(times):
            line += f"{times[1] / times[0]:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
