"""Reading a fact off a window of outcomes.

The estimator picks the fact whose outcome law is closest, in relative
entropy, to the empirical frequencies of the window.  Its error probability
falls exponentially with the window length; a large-deviation fit supplies
the constants ``C`` and ``a`` used in the error bounds.
"""

import numpy as np

from qfacts.channels import nd_dynamics
from qfacts.inference import error_probability, estimate_fact, relative_entropy, sanov_certificate
from qfacts.models import qd2_model, qd2_psi
from qfacts.trajectories import empirical_frequencies, sample_trajectory

model = qd2_model()
dyn = nd_dynamics(model)
psi = qd2_psi()

rec = sample_trajectory(dyn, psi, 30, seed=11)
freq = empirical_frequencies(rec.protocol, 0, 30, alphabet=model.alphabet)
est = estimate_fact(freq, model)
print("window:", "".join(rec.protocol))
print("f_L =", freq.freqs["L"], " scores:", {k: round(v, 4) for k, v in est.scores.items()})
print("estimated fact:", est.nu_hat, "(tie)" if est.tie else "")

print("\nexact error probabilities eps(0, r) by enumeration of all protocols")
for r in (1, 4, 8, 12, 16):
    rep = error_probability(dyn, psi, 0, r)
    print(f"  r={r:2d}  eps(0)={rep.eps[0]:.5f}  eps(1)={rep.eps[1]:.5f}  total={rep.total:.5f}")

mc = error_probability(dyn, psi, 0, 8, method="montecarlo", n_samples=50_000, seed=3)
print(f"Monte Carlo at r=8: {mc.total:.5f} +- {mc.total_stderr:.5f}")

i_min = relative_entropy([0.7, 0.3], [0.3, 0.7])
print(f"\nrelative entropy between the two facts: {i_min:.6f}")
cert = sanov_certificate(model, n_samples=50_000, seed=5)
print(f"large-deviation radius {cert.radius:.4f}")
for nu, fit in cert.fits.items():
    print(f"  fact {nu}: exceedance {np.round(fit.exceedance, 4)}")
    print(f"           fitted C={fit.C:.3f} a={fit.a:.4f} rate={fit.rate:.4f} "
          f"(half the target rate {fit.target_rate / 2:.4f}) passed={fit.passed}")
