"""Walk through every quantity on a regression small enough to check by hand.

y = theta * x with x = (1, 2), y = (1, 4) and no intercept.
"""

import numpy as np

from amipkit import (RegressionProblem, amis, certify_theta, dtheta_dw, fit, influence_scores,
                     noise_sigma, parameter_qoi, refit_lower_bound, sandwich_covariance)

problem = RegressionProblem([1.0, 4.0], [[1.0], [2.0]], names=("x",))
f = fit(problem)
print(f"theta_hat = {f.theta_hat[0]:.4f}   (sum xy / sum x^2 = 9/5)")
print(f"residuals = {f.residuals}")

# Each row's derivative of theta_hat with respect to its own weight.
print(f"d theta / d w = {dtheta_dw(f, problem)[:, 0]}")

cov = sandwich_covariance(f, problem)
q = parameter_qoi(0, 1)
print(f"sandwich Sigma = {cov.sigma_theta[0, 0]:.4f}, SE = {cov.standard_errors[0]:.4f}")
print(f"noise sigma_psi = {noise_sigma(f, q, cov, problem):.4f}")

# Drop half the data in the direction that raises theta.
inf = influence_scores(f, problem, q)
res = amis(inf, 0.5)
ref = refit_lower_bound(problem, f, q, res)
print(f"dropping row {res.dropped_indices.tolist()}: predicted +{res.amip:.3f}, "
      f"refit +{ref.exact_change:.3f}")

cert = certify_theta(problem, f, res.w_star)
lin = f.theta_hat + dtheta_dw(f, problem).T @ (res.w_star - 1)
actual = np.abs(ref.theta_after - lin)[0]
print(f"certificate: condition {cert.constants.condition_value:.3f} <= 1/3, "
      f"linearization error {actual:.3f} <= bound {cert.bound_lin:.4f}")
