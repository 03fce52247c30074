import numpy as np
import pytest

from amipkit.dataset import RegressionProblem


def random_problem(rng, *, iv=False, N=None, P=None, weights=False):
    """Well-conditioned random OLS or just-identified IV instance."""
    P = P or int(rng.integers(1, 6))
    N = N or int(rng.integers(max(P + 5, 10), 51))
    X = rng.normal(size=(N, P))
    if P > 1:
        X[:, 0] = 1.0
    Z = None
    if iv:
        Z = X + 0.5 * rng.normal(size=(N, P))
        if P > 1:
            Z[:, 0] = 1.0
    theta = rng.normal(size=P)
    y = X @ theta + rng.normal(size=N) * (0.5 + rng.random(N))
    bw = rng.uniform(0.5, 2.0, N) if weights else None
    return RegressionProblem(y, X, Z, base_weights=bw)


@pytest.fixture
def toy():
    return RegressionProblem([1.0, 4.0], [[1.0], [2.0]], names=("x",))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def fd_scores(problem, qois, h=1e-4):
    """Central differences of phi(w) in each w_n, one refit per perturbation."""
    from amipkit.influence import qoi_value
    from amipkit.zestim import fit

    out = np.zeros((len(qois), problem.N))
    for n in range(problem.N):
        vals = []
        for sgn in (1, -1):
            w = np.ones(problem.N)
            w[n] += sgn * h
            f = fit(problem, w)
            vals.append([qoi_value(q, f, problem) for q in qois])
        out[:, n] = (np.array(vals[0]) - np.array(vals[1])) / (2 * h)
    return out
