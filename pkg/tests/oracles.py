"""Independent reference solvers shared by the unit and acceptance tests."""
import numpy as np


def natural_cubic_oracle(x, y):
    """Second-derivative form of the natural cubic spline via the Thomas algorithm."""
    n = len(x)
    h = np.diff(x)
    M = np.zeros(n)
    if n > 2:
        sub = h[1:-1].copy()
        diag = 2 * (h[:-1] + h[1:])
        sup = h[1:-1].copy()
        rhs = 6 * ((y[2:] - y[1:-1]) / h[1:] - (y[1:-1] - y[:-2]) / h[:-1])
        m = n - 2
        for i in range(1, m):
            w = sub[i - 1] / diag[i - 1]
            diag[i] -= w * sup[i - 1]
            rhs[i] -= w * rhs[i - 1]
        sol = np.zeros(m)
        sol[-1] = rhs[-1] / diag[-1]
        for i in range(m - 2, -1, -1):
            sol[i] = (rhs[i] - sup[i] * sol[i + 1]) / diag[i]
        M[1:-1] = sol

    def f(t):
        t = np.asarray(t, dtype=float)
        out = np.empty_like(t)
        for j, v in enumerate(t):
            if v <= x[0]:
                slope = (y[1] - y[0]) / h[0] - h[0] * (2 * M[0] + M[1]) / 6
                out[j] = y[0] + slope * (v - x[0])
                continue
            if v >= x[-1]:
                slope = (y[-1] - y[-2]) / h[-1] + h[-1] * (M[-2] + 2 * M[-1]) / 6
                out[j] = y[-1] + slope * (v - x[-1])
                continue
            i = min(np.searchsorted(x, v) - 1, n - 2)
            a, b = x[i + 1] - v, v - x[i]
            out[j] = (M[i] * a ** 3 + M[i + 1] * b ** 3) / (6 * h[i]) \
                + (y[i] / h[i] - M[i] * h[i] / 6) * a + (y[i + 1] / h[i] - M[i + 1] * h[i] / 6) * b
        return out

    return f


def rk4(G, r0, t_end, h):
    steps = int(round(t_end / h))
    r = r0.copy()
    f = lambda v: -G @ v
    for _ in range(steps):
        k1 = f(r)
        k2 = f(r + 0.5 * h * k1)
        k3 = f(r + 0.5 * h * k2)
        k4 = f(r + h * k3)
        r = r + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return r
