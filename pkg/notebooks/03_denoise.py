# The sinusoid experiment at one size: noisy input, eOptShrink, classic WS and eOWS.
import sys
import time

import numpy as np

from eows.matcore import metrics
from eows.pipeline import EowsConfig, run
from eows.simlab import NoiseSpec, gen_noise, gen_sinusoid

n = int(sys.argv[1]) if len(sys.argv) > 1 else 256
kind = sys.argv[2] if len(sys.argv) > 2 else "type1"
rng = np.random.default_rng(7)
s, truth = gen_sinusoid(n, rng)
y = s + gen_noise(*s.shape, NoiseSpec(kind), rng)
print(f"S is {s.shape[0]}x{s.shape[1]}, noise {kind}")

res = None
for method in ("eoptshrink", "ws", "eows"):
    t0 = time.perf_counter()
    res = run(y, EowsConfig(method=method))
    mt = metrics(res.s_hat, s, truth, res.r_hat)
    print(f"{method:<11} mse {mt.mse:.3e}  left {mt.left_inner:.3f}  right {mt.right_inner:.3f}"
          f"  {time.perf_counter() - t0:.1f} s")
print(f"{'noisy':<11} mse {np.mean((y - s) ** 2):.3e}")

# the last run is eows: what the wavelet stage saw
diag = res.diagnostics
print("r_hat", res.r_hat, "tau*", round(diag["tau_star"], 3), "sigma_phi", diag["sigma_phi"])
print("tree balance", diag["balance"])
print("step timings", {k: round(v, 2) for k, v in diag["timings"].items()})
