"""Independent oracle values frozen into the Rust tests.

Run with: python3 closed_forms.py
Uses mpmath at 50 digits; nothing here imports the Rust implementation.
"""
from mpmath import mp, mpf, log, exp, sqrt, loggamma, pi, ceil

mp.dps = 50


def theta(n, L, k, B, pen):
    """Rate quantity for every layer l given a per-layer penalty pen[l]."""
    out = []
    for l in range(L + 1):
        eff = mpf(B[l]) ** 2 / (k[l] + 1) * pen[l]
        out.append(-log(eff) + eff + 2 * log(n) + 2 * L + 2 * sum(log(mpf(b)) for b in B))
    return out


def u_rate(n, L, k, c2=None):
    u = log(n) + log(L) + sum(log(mpf(k[l])) for l in range(L + 1)) + sum(log(mpf(k[l + 1])) for l in range(L + 1))
    if c2 is not None:
        u += log(c2)
    return u


n, L, k = 60000, 2, [784, 400, 400, 10]
B = [k[l] + 1 for l in range(L + 1)]
th_gl = theta(n, L, k, B, [mpf(1) / (k[l] + 1) for l in range(L + 1)])
print("gl theta", [mp.nstr(t, 17) for t in th_gl])
print("gl u", mp.nstr(u_rate(n, L, k), 17))
lam = [exp(-mpf("1e-9") * (k[l] + 1) * th_gl[l]) / k[l + 1] for l in range(L)]
print("gl lambda", [mp.nstr(x, 17) for x in lam])
r = [mpf(s) * (k[l] + 1) * th_gl[l] / n for l, s in enumerate([100, 100, 10])]
print("gl r (s=100,100,10)", [mp.nstr(x, 17) for x in r])
u = u_rate(n, L, k)
print("gl eps (xi=0.01)", mp.nstr(sqrt((sum(r) + mpf("0.01")) * (L + 1) * u), 17))
th_ghs = theta(n, L, k, B, [mpf(2)] * (L + 1))
print("ghs theta", [mp.nstr(t, 17) for t in th_ghs])

# KL closed forms, hand values
print("kl_bern(0.5,0.25)", mp.nstr(mpf("0.5") * log(2) + mpf("0.5") * log(mpf(2) / 3), 17))
print("kl_ln_gamma(a=1,b=1,mu=0,s=1)", mp.nstr(exp(mpf("0.5")) - log(2 * pi) / 2 - mpf("0.5"), 17))
print("kl_ln_ig(a=.5,b=1,mu=0,s=1)", mp.nstr(exp(mpf("0.5")) - log(2) / 2 - mpf("0.5"), 17))
print("lse(1000,1000)", mp.nstr(1000 + log(2), 20))
print("softplus(-6)", mp.nstr(log(1 + exp(-6)), 17))
print("exp(0.125)", mp.nstr(exp(mpf("0.125")), 17))

# FLOPs (multiply count), LeNet-5-Caffe as described: conv 1->20, conv 20->50 (5x5),
# 2x2 pooling after each conv, then linear 800-800-500-10.
def conv_out(i, p, d, kk, s):
    return (i + 2 * p - d * (kk - 1) - 1) // s + 1

o1 = conv_out(28, 0, 1, 5, 1)
f1 = (1 * 25 + 1) * o1 * o1 * 20
o2 = conv_out(o1 // 2, 0, 1, 5, 1)
f2 = (20 * 25 + 1) * o2 * o2 * 50
fl = [(800 + 1) * 800, (800 + 1) * 500, (500 + 1) * 10]
print("lenet conv1", o1, f1, "conv2", o2, f2, "linear", fl, "total", f1 + f2 + sum(fl))
print("stride2 o_w", conv_out(28, 0, 1, 5, 2))
print("flops_linear(784,400)", (784 + 1) * 400)

# Remark 6 regime numbers (alpha=1, p=2, rho=0.5, n=1e4), GL penalty with t0''=1
n6, a6, p6, rho = 10000, 1, 2, mpf("0.5")
L6 = int(ceil(log(n6)))
kw = int(ceil(mpf(n6) ** (p6 * (1 - rho) / (2 * a6 + p6)) / log(n6)))
s6 = int(ceil(mpf(n6) ** (p6 * rho / (2 * a6 + p6))))
xi6 = mpf(n6) ** (-mpf(2 * a6) / (2 * a6 + p6))
print("remark6 L k s xi", L6, kw, s6, mp.nstr(xi6, 17))
# k = (p, kw x L6, 1); s_l capped by the layer width; B_l = k_l + 1; GL penalty.
k6 = [p6] + [kw] * L6 + [1]
B6 = [k6[l] + 1 for l in range(L6 + 1)]
th6 = theta(n6, L6, k6, B6, [mpf(1) / (k6[l] + 1) for l in range(L6 + 1)])
s6l = [min(s6, k6[l + 1]) for l in range(L6 + 1)]
r6 = [mpf(s6l[l]) * (k6[l] + 1) * th6[l] / n6 for l in range(L6 + 1)]
eps6 = sqrt((sum(r6) + xi6) * (L6 + 1) * u_rate(n6, L6, k6))
print("remark6 eps", mp.nstr(eps6, 17), "ratio", mp.nstr(eps6 / mpf(n6) ** (-mpf(a6) / (a6 + p6)), 17))
