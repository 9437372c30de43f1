"""Marginal log-likelihood of a small random-intercept design by adaptive quadrature."""
import math
from scipy import integrate

# (cluster, x1, successes, trials); the intercept column is implicit
ROWS = [(0, 0.5, 3, 10), (0, -1.0, 1, 4), (1, 1.2, 7, 9), (2, 0.0, 0, 5), (2, 2.0, 2, 3)]
BETA = (-0.3, 0.4)


def cluster_ll(k, sigma):
    rows = [r for r in ROWS if r[0] == k]

    def integrand(u):
        s = 0.0
        for _, x1, y, n in rows:
            eta = BETA[0] + BETA[1] * x1 + u
            s += y * eta - n * math.log1p(math.exp(eta))
        return math.exp(s - 0.5 * (u / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))

    val, _ = integrate.quad(integrand, -40, 40, epsabs=1e-14, epsrel=1e-13, limit=400)
    return math.log(val)


for sigma in (0.8, 2.5):
    print(sigma, "%.12f" % sum(cluster_ll(k, sigma) for k in range(3)))
