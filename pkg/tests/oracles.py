"""Independent reference computations used by the tests.

Nothing here calls into csl_cosmo: the formulas are re-derived directly
(de Sitter Bunch-Davies mode, free moment ODEs via scipy, Green functions).
"""

import math

import numpy as np
from scipy.integrate import solve_ivp


def bd_pvv(x):
    """|v_k|^2 k for the de Sitter Bunch-Davies mode at x = -k eta."""
    return 0.5 * (1.0 + 1.0 / (x * x))


def bd_mode(tau):
    """Bunch-Davies mode (k = 1) at tau = k eta < 0 and its derivative."""
    e = complex(math.cos(tau), math.sin(tau))
    g = e * (1.0 + 1j / tau) / math.sqrt(2.0)
    gp = e * (1j - 1.0 / tau - 1j / tau**2) / math.sqrt(2.0)
    return g, gp


def free_moments_ode(x_ini, x_end, rtol=1e-12):
    """Integrate P_vv' = P_c, P_c' = 2 P_pp - 2 w P_vv, P_pp' = -w P_c with w = 1 - 2/tau^2.

    Starts from the Bunch-Davies moments at tau = -x_ini and returns P_vv(x_end).
    """
    g, gp = bd_mode(-x_ini)
    y0 = [abs(g) ** 2, 2.0 * (g * gp.conjugate()).real, abs(gp) ** 2]

    def f(t, y):
        w = 1.0 - 2.0 / (t * t)
        return [y[1], 2.0 * y[2] - 2.0 * w * y[0], -w * y[1]]

    sol = solve_ivp(f, (-x_ini, -x_end), y0, method="DOP853", rtol=rtol, atol=1e-14)
    return sol.y[0, -1]


def green_de_sitter(t, tb):
    """Retarded Green function of v'' + (1 - 2/t^2) v = 0 (k = 1) built from the mode Wronskian."""
    g, _ = bd_mode(t)
    gb, _ = bd_mode(tb)
    # G = (g(t) g*(tb) - g*(t) g(tb)) / W with W = g g*' - g' g* = i
    return ((g * gb.conjugate() - g.conjugate() * gb) / 1j).real


def slope(x, y):
    return float(np.polyfit(np.log(x), np.log(np.abs(y)), 1)[0])
