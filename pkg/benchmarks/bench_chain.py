"""Compare chain throughput with the JIT kernels on vs off.

Runs the toy tabular workload in two subprocesses, one with
GIBBSLM_DISABLE_NUMBA=1, and reports steps/second for each. The traces are
fingerprinted to show both modes produce identical chains.

    python benchmarks/bench_chain.py [steps]
"""

from __future__ import annotations

import os
import subprocess
import sys

WORKLOAD = r"""
import hashlib
import time
import numpy as np
from gibbslm import (ChainConfig, GibbsTarget, LengthGaussianReward,
                     ProposalSpec, TabularLM, Vocab, run_chain)
from gibbslm import _kernels

vocab = Vocab.of(["a", "b", "c"])
lm = TabularLM.random(vocab, max_len=5, rng=np.random.default_rng(12345))
target = GibbsTarget(LengthGaussianReward(), beta=0.5)
spec = ProposalSpec()
steps = STEPS

# Warm-up triggers JIT compilation so it stays out of the timing.
run_chain(lm, (), target, spec, ChainConfig(steps=100, seed=1))

t0 = time.perf_counter()
trace = run_chain(lm, (), target, spec, ChainConfig(steps=steps, seed=7))
dt = time.perf_counter() - t0
digest = hashlib.sha256(trace.dumps().encode()).hexdigest()[:16]
print(f"RESULT {_kernels.NUMBA_ENABLED} {steps} {dt:.4f} {digest}")
"""


def run_mode(disable: bool, steps: int):
    env = dict(os.environ)
    env["GIBBSLM_DISABLE_NUMBA"] = "1" if disable else "0"
    code = WORKLOAD.replace("STEPS", str(steps))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    for line in out.stdout.splitlines():
        if line.startswith("RESULT"):
            _, enabled, n, dt, digest = line.split()
            return {"numba": enabled == "True", "steps": int(n), "seconds": float(dt), "digest": digest}
    raise RuntimeError(f"no result line in output:\n{out.stdout}\n{out.stderr}")


def main():
    steps = int(sys.argv[1]) if len(sys.argv) > 1 else 50_000
    rows = [run_mode(disable=False, steps=steps), run_mode(disable=True, steps=steps)]
    for r in rows:
        mode = "numba kernels" if r["numba"] else "numpy fallback"
        print(f"{mode:>16}: {r['steps'] / r['seconds']:>10.0f} steps/s ({r['seconds']:.2f} s, trace {r['digest']})")
    if rows[0]["digest"] != rows[1]["digest"]:
        print("WARNING: traces differ between modes")
        return 1
    print(f"speedup: {rows[1]['seconds'] / rows[0]['seconds']:.1f}x, traces identical")
    return 0


if __name__ == "__main__":
    sys.exit(main())
