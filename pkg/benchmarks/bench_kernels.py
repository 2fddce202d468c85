"""Time the compiled GRU kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Runs the raw kernels at a few shapes, then one training epoch of a small
RVAE, under each available backend. Also reports the largest difference
between the backends' outputs, which should be at rounding level.
"""
import argparse
import json
import time

import numpy as np

from flowrvae.neuralcore import _kernels_py, available_backends, use_backend
from flowrvae.neuralcore.backend import kernels
from flowrvae.rvae import RvaeModel, TrainConfig, train_semisupervised
from flowrvae.synth import cyclic_prototypes, cyclic_sequences

SHAPES = [  # (steps, batch, hidden, features)
    (12, 16, 32, 8),
    (32, 8, 32, 40),
    (32, 64, 128, 40),
]


def _inputs(steps, batch, H, F, rng):
    return dict(
        xp=rng.standard_normal((steps, batch, 3 * H)),
        h0=rng.standard_normal((batch, H)) * 0.1,
        w_hh=rng.standard_normal((H, 3 * H)) * 0.1,
        mask=np.ones((steps, batch)),
        w_ih=rng.standard_normal((F, 3 * H)) * 0.1,
        b=np.zeros(3 * H),
        w_out=rng.standard_normal((H, F)) * 0.1,
        b_out=np.zeros(F),
    )


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_kernels(repeat):
    rows = []
    for steps, batch, H, F in SHAPES:
        a = _inputs(steps, batch, H, F, np.random.default_rng(0))
        row = {"shape": f"T={steps} B={batch} H={H} F={F}"}
        outs = {}
        for be in available_backends():
            use_backend(be)
            k = kernels()

            def scan():
                fwd = k.gru_scan_forward(a["xp"], a["h0"], a["w_hh"], a["mask"])
                return fwd, k.gru_scan_backward(np.ones_like(fwd[0]), a["h0"], a["w_hh"],
                                                a["mask"], *fwd)

            def decode():
                fwd = k.gru_decode_forward(a["h0"], a["w_ih"], a["w_hh"], a["b"], a["w_out"],
                                           a["b_out"], steps)
                return fwd, k.gru_decode_backward(np.ones_like(fwd[0]), a["h0"], a["w_ih"],
                                                  a["w_hh"], a["w_out"], *fwd[1:])

            row[f"scan_{be}_ms"], s_out = _best_of(scan, repeat)
            row[f"decode_{be}_ms"], d_out = _best_of(decode, repeat)
            row[f"scan_{be}_ms"] *= 1e3
            row[f"decode_{be}_ms"] *= 1e3
            outs[be] = (s_out, d_out)
        if len(outs) == 2:
            flat = [np.concatenate([np.ravel(x) for x in _flatten(o)]) for o in outs.values()]
            row["max_abs_diff"] = float(np.max(np.abs(flat[0] - flat[1])))
        rows.append(row)
    return rows


def _flatten(obj):
    if isinstance(obj, np.ndarray):
        return [obj]
    return [x for o in obj for x in _flatten(o)]


def bench_epoch():
    rng = np.random.default_rng(0)
    seqs = cyclic_sequences(cyclic_prototypes(8, 4, rng), 128, 12, rng)
    cfg = TrainConfig(epochs=1, batch_size=16)
    out = {}
    for be in available_backends():
        use_backend(be)
        model = RvaeModel(8, hidden=32, latent=8, seed=0)
        t0 = time.perf_counter()
        train_semisupervised(model, seqs, cfg)
        out[f"epoch_{be}_s"] = time.perf_counter() - t0
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write results to this file")
    args = p.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the fallback is timed")
    rows = bench_kernels(args.repeat)
    for r in rows:
        line = r["shape"]
        for be in backends:
            line += f"  scan[{be}] {r[f'scan_{be}_ms']:8.2f} ms  decode[{be}] {r[f'decode_{be}_ms']:8.2f} ms"
        if "cython" in backends:
            line += (f"  speedup scan x{r['scan_python_ms'] / r['scan_cython_ms']:.1f}"
                     f" decode x{r['decode_python_ms'] / r['decode_cython_ms']:.1f}"
                     f"  max|diff| {r['max_abs_diff']:.1e}")
        print(line)
    epoch = bench_epoch()
    print("  ".join(f"{k} {v:.2f}" for k, v in epoch.items()))
    use_backend(backends[0])
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "epoch": epoch, "fallback": _kernels_py.BACKEND}, fh,
                      indent=2)


if __name__ == "__main__":
    main()
