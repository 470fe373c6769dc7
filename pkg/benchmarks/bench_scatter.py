"""Benchmark the compiled scatter kernel against the numpy fallback.

Two sections:
  * kernel microbenchmark: scatter_add_rows over graph-realistic shapes,
    both implementations in-process;
  * end-to-end: full model pair forward+backward, re-launching this
    script in a subprocess with DOCGCN_PURE_PYTHON=1 to force the
    fallback (the backend is chosen at import time).

Usage: python benchmarks/bench_scatter.py [--end-to-end-worker]
"""

import os
import subprocess
import sys
import time

import numpy as np


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def kernel_bench() -> None:
    from docgcn.kernels import _scatter_add_rows_compiled, _scatter_add_rows_numpy

    if _scatter_add_rows_compiled is None:
        print("compiled kernel unavailable; build the extension first")
        return
    rng = np.random.default_rng(0)
    print(f"{'nodes':>7} {'edges':>8} {'dim':>5} {'numpy':>12} {'compiled':>12} {'speedup':>8}")
    for n, e, d in [(30, 120, 140), (100, 500, 140), (300, 2000, 140),
                    (1000, 10000, 140), (1000, 50000, 140)]:
        idx = rng.integers(0, n, size=e).astype(np.int64)
        rows = np.ascontiguousarray(rng.standard_normal((e, d)))
        out = np.zeros((n, d))
        repeats = max(3, 2000 // (e // 100 + 1))
        t_np = _time(lambda: _scatter_add_rows_numpy(out, idx, rows), repeats)
        t_cy = _time(lambda: _scatter_add_rows_compiled(out, idx, rows), repeats)
        print(f"{n:>7} {e:>8} {d:>5} {t_np * 1e6:>10.1f}us {t_cy * 1e6:>10.1f}us"
              f" {t_np / t_cy:>7.1f}x")


def end_to_end_once() -> float:
    """Time batches of pair forward+backward under the active backend."""
    from docgcn import autodiff as ad
    from docgcn.autodiff import Tape
    from docgcn.config import TrainConfig
    from docgcn.corpus import generate_pairs, load_corpus
    from docgcn.synth import gen_corpus, gen_kb, write_corpus
    from docgcn.training import build_model
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bench.jsonl")
        kb = gen_kb(20, 12, seed=1, exclude_reverse=True)
        records, _ = gen_corpus(kb, 20, pct_inter=0.5, pct_coref_only=0.25, seed=1)
        write_corpus(records, path)
        docs, _ = load_corpus(path)
    config = TrainConfig(relations=("no_relation", "interacts"))
    rng = np.random.default_rng(0)
    model = build_model(config, docs, rng)
    states = {d.doc_id: model.make_state(d) for d in docs}
    pairs = [p for d in docs for p in generate_pairs(d, model.relation_vocab)]
    params = list(model.params().values())

    def step():
        with Tape() as tape:
            total = None
            for pair in pairs[:32]:
                loss, _ = model.pair_loss(states[pair.doc_id], pair, train=True, rng=rng)
                total = loss if total is None else ad.add(total, loss)
        tape.backward(total, params)

    step()  # warm-up
    return _time(step, repeats=3)


def main() -> None:
    if "--end-to-end-worker" in sys.argv:
        from docgcn.kernels import backend_name

        elapsed = end_to_end_once()
        print(f"{backend_name()} {elapsed:.6f}")
        return

    print("== scatter_add_rows microbenchmark ==")
    kernel_bench()

    print("\n== end-to-end: 32-pair batch forward+backward ==")
    results = {}
    for label, env_extra in (("compiled", {}), ("numpy", {"DOCGCN_PURE_PYTHON": "1"})):
        env = dict(os.environ, **env_extra)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--end-to-end-worker"],
            capture_output=True, text=True, env=env, check=True,
        ).stdout.split()
        backend, seconds = out[0], float(out[1])
        results[label] = seconds
        print(f"  backend={backend:<9} best of 3: {seconds * 1e3:.1f} ms/batch")
    if "numpy" in results and "compiled" in results:
        print(f"  end-to-end speedup: {results['numpy'] / results['compiled']:.2f}x")


if __name__ == "__main__":
    main()
