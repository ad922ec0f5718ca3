#!/usr/bin/env python3
"""Benchmark the compiled LSTM-cell kernel against the numpy fallback.

Two sections:

* micro: raw ``lstm_cell_forward`` / ``lstm_cell_backward`` calls at several
  hidden widths, both implementations imported side by side in one process.
* end-to-end: teacher-forced loss + backward over a few synthetic videos,
  run in a child process per backend (``EVENTCAP_KERNELS=numpy|compiled``)
  so the import-time selection is exercised exactly as users hit it.

Usage: python benchmarks/bench_kernels.py [--sizes 32 64 128] [--batch 16]
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from eventcap.kernels import reference

try:
    from eventcap.kernels import _fastcore
except ImportError:
    _fastcore = None


def best_of(fn, repeats, iters):
    """Best mean seconds per call over ``repeats`` timed batches."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(iters):
            fn()
        times.append((time.perf_counter() - t0) / iters)
    return min(times)


def micro(sizes, batch, iters, repeats):
    impls = [("numpy", reference)] + ([("compiled", _fastcore)] if _fastcore else [])
    rng = np.random.default_rng(0)
    print(f"micro: fused LSTM cell, float64, batch {batch}, "
          f"best of {repeats} x {iters} calls")
    for h in sizes:
        a = rng.standard_normal((batch, 4 * h))
        c_prev = rng.standard_normal((batch, h))
        hc, gates = reference.lstm_cell_forward(a, c_prev)
        dhc = rng.standard_normal((batch, 2 * h))
        c = np.ascontiguousarray(hc[:, h:])

        for stage, args in (("forward", (a, c_prev)),
                            ("backward", (dhc, gates, c_prev, c))):
            cells = []
            per = {}
            for name, impl in impls:
                fn = getattr(impl, f"lstm_cell_{stage}")
                per[name] = best_of(lambda: fn(*args), repeats, iters)
                cells.append(f"{name} {per[name] * 1e6:8.1f} us")
            if _fastcore:
                cells.append(f"speedup {per['numpy'] / per['compiled']:.1f}x")
            print(f"  H={h:4d} {stage:8s} " + "  ".join(cells))

        if _fastcore:  # both backends must agree numerically, not just run
            hc2, gates2 = _fastcore.lstm_cell_forward(a, c_prev)
            da1, dc1 = reference.lstm_cell_backward(dhc, gates, c_prev, c)
            da2, dc2 = _fastcore.lstm_cell_backward(dhc, gates, c_prev, c)
            dev = max(np.abs(hc - hc2).max(), np.abs(gates - gates2).max(),
                      np.abs(da1 - da2).max(), np.abs(dc1 - dc2).max())
            assert dev < 1e-12, f"backend mismatch at H={h}: {dev:.2e}"
    if _fastcore:
        print("  backends agree within 1e-12 at every width")
    else:
        print("  compiled extension not built; numpy fallback only")


def e2e_worker(iters):
    """Child-process body: one backend, chosen by EVENTCAP_KERNELS."""
    from eventcap.data.synth import SynthConfig, synthesize
    from eventcap.data.vocab import Vocabulary
    from eventcap.kernels import BACKEND
    from eventcap.model import Model
    from eventcap.training import TrainConfig, encode_sentences, xe_loss, zero_grads

    corpus = synthesize(SynthConfig(n_videos=3, seed=0))
    records = corpus.records
    vocab = Vocabulary.from_corpus(records, min_count=1)
    tcfg = TrainConfig(hidden=64, d_emb=24, d_enc=16, d_ptr=12, d_pos=8,
                       d_rel_hidden=24, d_k=16, d_v=16, d_l=12, d_pos_hidden=12,
                       d_gate=24, d_att=12, seed=0)
    model = Model.init(tcfg.model_config(records[0].feature_dim, len(vocab)),
                       vocab, seed=0)
    batch = [(rec, *encode_sentences(vocab, rec)) for rec in records]
    n_tokens = sum(len(s) + 1 for _, _, sents in batch for s in sents)

    def step():
        zero_grads(model.params)
        loss = xe_loss(model.params, model.cfg, batch)
        loss.backward()
        return loss.item()

    loss_val = step()  # warm up and pin the value both backends must produce
    t0 = time.perf_counter()
    for _ in range(iters):
        step()
    per_iter = (time.perf_counter() - t0) / iters
    print(f"E2E {BACKEND} {per_iter:.6f} {loss_val:.12f} {n_tokens}")


def e2e(iters):
    print(f"end-to-end: teacher-forced loss + backward, 3 synthetic videos, "
          f"mean of {iters} iterations")
    rows = {}
    for backend in ("numpy",) + (("compiled",) if _fastcore else ()):
        env = dict(os.environ, EVENTCAP_KERNELS=backend)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--_e2e", str(iters)],
            env=env, capture_output=True, text=True, check=True)
        tag, got_backend, per_iter, loss_val, n_tokens = out.stdout.split()[-5:]
        assert tag == "E2E" and got_backend == backend
        rows[backend] = (float(per_iter), loss_val, int(n_tokens))
        print(f"  {backend:9s} {1e3 * rows[backend][0]:7.1f} ms/iter   "
              f"loss {loss_val}   ({int(n_tokens) / rows[backend][0]:,.0f} tokens/s)")
    if len(rows) == 2:
        print(f"  speedup {rows['numpy'][0] / rows['compiled'][0]:.2f}x; "
              f"losses {'match' if rows['numpy'][1] == rows['compiled'][1] else 'DIFFER'} "
              f"to 12 decimals")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    parser.add_argument("--batch", type=int, default=16)
    parser.add_argument("--iters", type=int, default=2000)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--e2e-iters", type=int, default=10)
    parser.add_argument("--skip-e2e", action="store_true")
    parser.add_argument("--_e2e", type=int, default=None, help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args._e2e is not None:
        e2e_worker(args._e2e)
        return 0

    micro(args.sizes, args.batch, args.iters, args.repeats)
    if not args.skip_e2e:
        print()
        e2e(args.e2e_iters)
    return 0


if __name__ == "__main__":
    sys.exit(main())
