# Spectrum of a planted rank-3 signal in white noise: where the bulk ends,
# how many spikes clear it, and how well d, a1, a2 are recovered.
import numpy as np

from eows.simlab import NoiseSpec, gen_noise
from eows.spectre import estimate_spikes, shrinker_values, spectrum

rng = np.random.default_rng(0)
p, n = 300, 400
d = np.array([8.0, 5.0, 3.0])
U = np.linalg.qr(rng.standard_normal((p, 3)))[0]
V = np.linalg.qr(rng.standard_normal((n, 3)))[0]
s = (U * d) @ V.T
y = s + gen_noise(p, n, NoiseSpec("type1"), rng)

spec, _ = spectrum(y)
est = estimate_spikes(spec)
print("top eigenvalues   ", np.round(spec.eigs[:6], 3))
print("estimated edge    ", round(est.lambda_plus_hat, 3), "(MP edge for beta = 3/4:",
      round((1 + np.sqrt(p / n)) ** 2, 3), ")")
print("effective rank    ", est.r_hat)

# overlaps of the noisy singular vectors with the truth
Ut, _, Vt = np.linalg.svd(y, full_matrices=False)
a1 = np.sum(Ut[:, :3] * U, axis=0) ** 2
a2 = np.sum(Vt[:3].T * V, axis=0) ** 2
print("d      true / est ", d, np.round(est.d_hat, 3))
print("a1     true / est ", np.round(a1, 3), np.round(est.a1_hat, 3))
print("a2     true / est ", np.round(a2, 3), np.round(est.a2_hat, 3))

for loss in ("fro", "op", "nuc"):
    print(f"shrinker {loss:<4}", np.round(shrinker_values(est, loss), 3))

# colored noise moves the edge but the estimator follows it
y2 = s + gen_noise(p, n, NoiseSpec("type2"), rng)
est2 = estimate_spikes(spectrum(y2)[0])
print("type2: edge", round(est2.lambda_plus_hat, 3), "rank", est2.r_hat, "d", np.round(est2.d_hat, 3))
