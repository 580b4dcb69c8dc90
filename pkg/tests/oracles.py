"""Independent reference implementations used only by the tests.

Everything here is written from the formulas directly in extended
precision (mpmath, 50 digits) and shares no code with the package.
"""
from math import comb

import mpmath as mp

mp.mp.dps = 50


def pure_schedule(eta, nu, k, tau_prime):
    eta, nu, tp = mp.mpf(eta), mp.mpf(nu), mp.mpf(tau_prime)
    L = mp.log(1 / tp)
    etas = [mp.sqrt(2 * j * L) * eta + j * eta * (mp.e ** eta - 1) for j in range(1, k + 1)]
    taus = []
    for j in range(1, k + 1):
        s = sum((mp.e ** etas[t] * nu / eta for t in range(j - 1)), mp.mpf(0))
        taus.append(mp.sqrt(j * tp / eta + nu / eta + s))
    eta_star = 3 * mp.sqrt(2 * k * L) * eta + 3 * k * eta * (mp.e ** eta - 1)
    return etas, taus, eta_star, 5 * taus[-1]


def tau_hat(eta, tau):
    eta, tau = mp.mpf(eta), mp.mpf(tau)
    return 2 * tau / (1 - mp.e ** (-eta))


def psi(eta, tau):
    eta, tau = mp.mpf(eta), mp.mpf(tau)
    E = mp.e ** eta
    poly = 4 * E ** 2 + 4 * E - 3 - 2 / E + 1 / E ** 2
    return tau * (2 * E + 1) + tau ** 2 * (1 + 2 * E ** 2 / (E - 1) ** 2 * poly)


def approx_schedule(eta, tau, nu, k, tau_prime):
    th, ps = tau_hat(eta, tau), psi(eta, tau)
    eta, nu, tp = mp.mpf(eta), mp.mpf(nu), mp.mpf(tau_prime)
    L = mp.log(1 / tp)
    per = 2 * eta * (mp.e ** (2 * eta) / (1 - th) - 1) + ps
    etas = [2 * mp.sqrt(2 * j * L) * eta + j * per for j in range(1, k + 1)]
    taus = []
    for j in range(1, k + 1):
        s = sum((mp.e ** etas[t] * nu / (2 * eta) for t in range(j - 1)), mp.mpf(0))
        taus.append(mp.sqrt(j * (th + tp) / (2 * eta) + nu / (2 * eta) + s))
    eta_star = 6 * mp.sqrt(2 * k * L) * eta + 3 * k * per
    return etas, taus, eta_star, 5 * taus[-1], th, ps


def binomial_two_sided_tail(n, p, threshold):
    """P[|S/n - p| > threshold] for S ~ Bin(n, p), exact."""
    p = mp.mpf(p)
    total = mp.mpf(0)
    for s in range(n + 1):
        if abs(mp.mpf(s) / n - p) > threshold + mp.mpf(10) ** -12:
            total += comb(n, s) * p ** s * (1 - p) ** (n - s)
    return total


def gaussian_two_sided_tail(t, sigma):
    return mp.erfc(mp.mpf(t) / (mp.mpf(sigma) * mp.sqrt(2)))


def laplace_two_sided_tail(t, b):
    return mp.e ** (-mp.mpf(t) / mp.mpf(b))


def hockey_stick_events(p, q, eta):
    """sup over all 2^m events, by brute force."""
    m = len(p)
    best = mp.mpf(0)
    for mask in range(1 << m):
        idx = [i for i in range(m) if mask >> i & 1]
        val = sum((mp.mpf(p[i]) for i in idx), mp.mpf(0)) - mp.e ** mp.mpf(eta) * sum((mp.mpf(q[i]) for i in idx), mp.mpf(0))
        best = max(best, val)
    return best
