"""
Fitting a periodic HSMM and decoding the states
===============================================

Simulates a movement track from the reference model, fits the model from
generic starting values and decodes the most likely state sequence.
Takes a minute or two on one core.
"""

import numpy as np

from inhsmm import FitOptions, SimulationConfig, reference_model, decoding_accuracy, fit, simulate, viterbi
from inhsmm.io import default_start

truth = reference_model()
data = simulate(SimulationConfig(truth, 3000, seed=11))
print("observations:", len(data), " mean step:", np.nanmean(data.step).round(1))

# Same structure as the truth, but start from quantiles of the data
spec = truth.spec
theta0 = default_start(spec, data)
fm = fit(spec, data, theta0, FitOptions(n_starts=3, seed=1))
print(f"loglik {fm.loglik:.2f}  AIC {fm.aic:.1f}  BIC {fm.bic:.1f}  converged {fm.converged}")

est, true = fm.theta_hat, spec.pack(truth)
for name, a, b in zip(spec.param_names(), est, true):
    print(f"{name:>18s} {a:8.3f} {b:8.3f}")

# Labels are not identified, but the data-driven start orders states by step length
dec = viterbi(fm.model, data)
print("decoding accuracy:", round(decoding_accuracy(data.states, dec.states), 4))

# a few gaps in the track do not break decoding
gappy = data.with_missing(np.arange(500, 560))
print("with a 60-step gap:", round(decoding_accuracy(data.states, viterbi(fm.model, gappy).states), 4))
