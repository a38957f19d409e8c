# Independent numpy/scipy computations whose results are frozen into
# tests/unit/oracle_fixtures.hpp. Run: python3 tests/oracles/make_fixtures.py
import numpy as np
import statsmodels.api as sm
from scipy.stats import chi2
from scipy.special import expit

rng = np.random.default_rng(20240611)
out = []


def vec(name, v, fmt="%.17g"):
    v = np.asarray(v, dtype=float).ravel()
    out.append("inline const std::vector<double> %s{%s};" % (name, ", ".join(fmt % x for x in v)))


def ivec(name, v):
    out.append("inline const std::vector<int> %s{%s};" % (name, ", ".join(str(int(x)) for x in v)))


def num(name, x):
    out.append("inline constexpr double %s = %.17g;" % (name, x))


def sandwich_if(psi, theta):
    # psi(theta) -> n x d matrix; returns IF rows -B^-1 psi_i with a numerical B.
    n = psi(theta).shape[0]
    d = len(theta)
    B = np.zeros((d, d))
    for j in range(d):
        h = 1e-6 * max(1.0, abs(theta[j]))
        tp = theta.copy(); tp[j] += h
        tm = theta.copy(); tm[j] -= h
        B[:, j] = (psi(tp).mean(0) - psi(tm).mean(0)) / (2 * h)
    return -(np.linalg.solve(B, psi(theta).T)).T


# ANCOVA with interactions on a 40-row set: g-computation and sandwich V.
n = 40
x1 = rng.normal(1, 1, n)
x2 = rng.normal(0, 1, n)
a = np.array([1] * 20 + [0] * 20)
rng.shuffle(a)
y = 1 + 2 * a + x1 - 0.5 * x2 + 0.7 * a * x1 + rng.normal(0, 1, n)
X = np.column_stack([x1, x2])
Xc = X - X.mean(0)
Z = np.column_stack([np.ones(n), a, Xc, a[:, None] * Xc])
Z1 = np.column_stack([np.ones(n), np.ones(n), Xc, Xc])
Z0 = np.column_stack([np.ones(n), np.zeros(n), Xc, 0 * Xc])
beta = np.linalg.lstsq(Z, y, rcond=None)[0]
mu1, mu0 = (Z1 @ beta).mean(), (Z0 @ beta).mean()


def psi_ancova(th):
    d, m1, m0, b = th[0], th[1], th[2], th[3:]
    return np.column_stack([np.full(n, m1 - m0 - d), Z1 @ b - m1, Z0 @ b - m0, Z * (y - Z @ b)[:, None]])


th = np.concatenate([[mu1 - mu0, mu1, mu0], beta])
IF = sandwich_if(psi_ancova, th)[:, 0]
vec("kAncX1", x1)
vec("kAncX2", x2)
ivec("kAncA", a)
vec("kAncY", y)
num("kAncDelta", mu1 - mu0)
num("kAncV", np.mean(IF**2))

# R2 of that estimator with Xr = (x1, x2), pi = 0.5.
w = (a - 0.5) / 0.25
C = ((X - X.mean(0)) * (w * IF)[:, None]).mean(0)
N1, N0 = a.sum(), n - a.sum()
VI = n / (N1 * N0) * (X - X.mean(0)).T @ (X - X.mean(0))
num("kAncR2", C @ np.linalg.solve(VI, C) / np.mean(IF**2))

# Stratified variance and R2 on a 40-row set with two strata.
s = np.array([0] * 16 + [1] * 24)
a2 = np.concatenate([rng.permutation([1] * 8 + [0] * 8), rng.permutation([1] * 12 + [0] * 12)])
if2 = rng.normal(0, 1, n) + 0.8 * x1 * (2 * a2 - 1)
if2 = if2 - if2.mean()
p = np.array([np.mean(s == k) for k in (0, 1)])
wi = (a2 - 0.5) / 0.25
dk = np.array([np.mean((wi * if2)[s == k]) for k in (0, 1)])
Vt = np.mean(if2**2) - 0.25 * np.sum(p * dk**2)
xb = np.array([X[s == k].mean(0) for k in (0, 1)])
Ct = (X * (wi * if2)[:, None]).mean(0) - (p[:, None] * dk[:, None] * xb).sum(0)
M = X.T @ X / n - sum(p[k] * np.outer(xb[k], xb[k]) for k in (0, 1))
VIt = n * (n / (a2.sum() * (n - a2.sum()))) * M
ivec("kStrS", s)
ivec("kStrA", a2)
vec("kStrIF", if2)
num("kStrV", Vt)
num("kStrR2", Ct @ np.linalg.solve(VIt, Ct) / Vt)

# Logistic g-computation on 8 rows by coarse-to-fine likelihood grid search.
la = np.array([1, 1, 1, 1, 0, 0, 0, 0])
lx = np.array([0.3, -1.2, 0.8, 2.0, -0.4, 1.5, -0.9, 0.1])
ly = np.array([1, 0, 1, 1, 0, 0, 1, 0])


def loglik(b):
    eta = b[0] + b[1] * la + b[2] * lx
    return np.sum(ly * eta - np.logaddexp(0, eta))


centre = np.zeros(3)
width = 8.0
for _ in range(40):
    g = np.linspace(-width, width, 21)
    best = None
    for u in g:
        for v in g:
            for t in g:
                b = centre + np.array([u, v, t])
                ll = loglik(b)
                if best is None or ll > best[0]:
                    best = (ll, b)
    centre = best[1]
    width *= 0.25
b = centre
num("kLogitRatio", expit(b[0] + b[1] + b[2] * lx).mean() / expit(b[0] + b[2] * lx).mean())
num("kLogitDiff", expit(b[0] + b[1] + b[2] * lx).mean() - expit(b[0] + b[2] * lx).mean())
ivec("kLogitA", la)
vec("kLogitX", lx)
ivec("kLogitY", ly)

# DR-WLS with missing outcomes, identity link: statsmodels Logit + WLS.
n3 = 60
x3 = rng.normal(0, 1, n3)
a3 = np.array([1] * 30 + [0] * 30)
rng.shuffle(a3)
y3 = 0.5 + a3 + 1.5 * x3 + rng.normal(0, 1, n3)
r3 = (rng.uniform(size=n3) < expit(1.0 + 0.5 * a3 + 0.8 * x3)).astype(int)
M3 = np.column_stack([np.ones(n3), a3, x3])
alpha = sm.Logit(r3, M3).fit(disp=0, tol=1e-14, maxiter=200).params
prop = expit(M3 @ alpha)
xc3 = x3 - x3.mean()
Z3 = np.column_stack([np.ones(n3), a3, xc3])
obs = r3 == 1
fit = sm.WLS(y3[obs], Z3[obs], weights=1 / prop[obs]).fit()
b3 = fit.params
d3 = (np.column_stack([np.ones(n3), np.ones(n3), xc3]) @ b3).mean() - (np.column_stack([np.ones(n3), np.zeros(n3), xc3]) @ b3).mean()
vec("kDrX", x3)
ivec("kDrA", a3)
vec("kDrY", np.where(obs, y3, 0.0))
ivec("kDrR", r3)
num("kDrDelta", d3)
num("kDrMinProp", prop.min())

# Random-intercept ML fit: 2 clusters per arm, 5 rows each, coarse-to-fine
# grid over (sigma2, tau2) of the full Gaussian likelihood with GLS beta.
cl = np.repeat(np.arange(4), 5)
ca = np.array([1, 0, 1, 0])[cl]
cx = rng.normal(0, 1, 20)
cy = 1 + 1.5 * ca + 0.8 * cx + np.array([1.2, -0.9, -0.4, 0.7])[cl] + rng.normal(0, 0.6, 20)
ZM = np.column_stack([np.ones(20), ca, cx - cx.mean()])


def lmm_ll(s2, t2):
    ll = 0.0
    A = np.zeros((3, 3)); bb = np.zeros(3)
    Vs = []
    for k in range(4):
        idx = cl == k
        V = s2 * np.eye(5) + t2 * np.ones((5, 5))
        Vi = np.linalg.inv(V)
        Vs.append((idx, V, Vi))
        A += ZM[idx].T @ Vi @ ZM[idx]
        bb += ZM[idx].T @ Vi @ cy[idx]
    beta = np.linalg.solve(A, bb)
    for idx, V, Vi in Vs:
        r = cy[idx] - ZM[idx] @ beta
        ll += -0.5 * (np.linalg.slogdet(V)[1] + r @ Vi @ r)
    return ll, beta


cs, ct = 1.0, 1.0
ws, wt = 0.99, 0.99
for _ in range(30):
    best = None
    for u in np.linspace(cs - ws, cs + ws, 21):
        for v in np.linspace(max(ct - wt, 0.0), ct + wt, 21):
            if u <= 0:
                continue
            ll = lmm_ll(u, v)[0]
            if best is None or ll > best[0]:
                best = (ll, u, v)
    cs, ct = best[1], best[2]
    ws *= 0.3
    wt *= 0.3
ivec("kLmmCluster", cl)
ivec("kLmmA", ca)
vec("kLmmX", cx)
vec("kLmmY", cy)
num("kLmmSigma2", cs)
num("kLmmTau2", ct)
num("kLmmDelta", lmm_ll(cs, ct)[1][1])

num("kV21", chi2.cdf(1, 4) / chi2.cdf(1, 2))
num("kChi2_2_1", chi2.cdf(1, 2))
num("kChi2_4_1", chi2.cdf(1, 4))
num("kChi2_3_2p5", chi2.cdf(2.5, 3))

print("#pragma once\n\n// Generated by tests/oracles/make_fixtures.py.\n\n#include <vector>\n\nnamespace fixtures {\n")
print("\n".join(out))
print("\n}  // namespace fixtures")
