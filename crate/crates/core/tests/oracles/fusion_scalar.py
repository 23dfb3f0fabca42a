"""Step-by-step scalar evaluation of the fusion head on hand-set integers
(n = 2, d = 1). Values are frozen into the Rust unit tests.

Run with `python3 fusion_scalar.py`; requires mpmath.
"""
from mpmath import mp, mpf, exp, log, sqrt

mp.dps = 40
eps = mpf("1e-5")


def sigmoid(x):
    return 1 / (1 + exp(-x))


def ssp(x):
    return log(mpf("0.5") * exp(x) + mpf("0.5"))


def layer_norm(x, gamma, beta):
    m = sum(x) / len(x)
    var = sum((v - m) ** 2 for v in x) / len(x)
    return [(v - m) / sqrt(var + eps) * gm + bt for v, gm, bt in zip(x, gamma, beta)]


g = [mpf(1), mpf(3)]
tp = [mpf(2)]
W_g = [[1, 0], [1, 1]]
W_t = [[1], [-1]]
g_proj = [sum(W_g[i][j] * g[j] for j in range(2)) for i in range(2)]
t_proj = [sum(W_t[i][j] * tp[j] for j in range(1)) for i in range(2)]
g_t = layer_norm(g_proj, [1, 2], [0, 1])
t_t = layer_norm(t_proj, [1, 1], [mpf("0.5"), 0])
W = [[1, 0, -1, 0], [0, 1, 0, 1]]
b = [0, -1]
cat = g_t + t_t
gate = [sigmoid(sum(W[i][j] * cat[j] for j in range(4)) + b[i]) for i in range(2)]
f = [gate[i] * g_t[i] + (1 - gate[i]) * t_t[i] for i in range(2)]
h1 = ssp(f[0] - f[1] + mpf("0.5"))
y = 2 * h1 - 1
print("g_tilde", [mp.nstr(v, 20) for v in g_t])
print("t_tilde", [mp.nstr(v, 20) for v in t_t])
print("gate", [mp.nstr(v, 20) for v in gate])
print("f", [mp.nstr(v, 20) for v in f])
print("prediction", mp.nstr(y, 20))

# geometry-only: same stem and head applied to g_tilde
h1 = ssp(g_t[0] - g_t[1] + mpf("0.5"))
print("geometry_only", mp.nstr(2 * h1 - 1, 20))
