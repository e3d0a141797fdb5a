"""
What is lost by ignoring periodic dwell times
=============================================

Fits the correct periodic HSMM, a homogeneous HSMM and a periodic HMM to
the same simulated series and compares fit and decoding.  The gaps are
small at this length; the acceptance suite repeats this at T = 100 000.
"""

from inhsmm import FitOptions, SimulationConfig, reference_model, decoding_accuracy, fit, simulate, viterbi
from inhsmm.experiments import misspecification_models

truth = reference_model()
data = simulate(SimulationConfig(truth, 5000, seed=3))

print(f"{'model':>20s} {'params':>6s} {'loglik':>11s} {'AIC':>10s} {'accuracy':>8s}")
for label, (spec, theta0) in misspecification_models(truth).items():
    fm = fit(spec, data, theta0, FitOptions())
    acc = decoding_accuracy(data.states, viterbi(fm.model, data).states)
    print(f"{label:>20s} {fm.n_params:6d} {fm.loglik:11.2f} {fm.aic:10.1f} {acc:8.4f}")
