"""Arbitrary-precision reference values frozen into the Rust tests.

Run with `python3 high_precision.py`; requires mpmath.
"""
from mpmath import mp, mpf, e, exp, log

mp.dps = 40

# shifted softplus at x = 1
print("ssp(1) =", mp.nstr(log(mpf("0.5") * e + mpf("0.5")), 30))

# Gaussian RBF, cutoff 5, 50 evenly spaced centres, gamma 10
cutoff, k, gamma = mpf(5), 50, mpf(10)
centers = [cutoff * i / (k - 1) for i in range(k)]
for d in ["1.234567", "0.73", "4.999"]:
    d = mpf(d)
    vals = [exp(-gamma * (d - c) ** 2) for c in centers]
    print("rbf", d, [mp.nstr(v, 20) for v in vals])
