"""Fine-quadrature oracle for the Douady-Earle extension of theta + A sin(theta).

Trapezoid rule with 2**14 nodes on the closed-form lift; the barycenter
equation is solved as a real 2x2 system with scipy's hybrid root finder.
"""
import sys

import numpy as np
from scipy.optimize import fsolve


def extension(amp, z, n=2**14):
    th = 2 * np.pi * np.arange(n) / n
    xi = np.exp(1j * (th + amp * np.sin(th)))
    p = (1 - abs(z) ** 2) / np.abs(np.exp(1j * th) - z) ** 2
    p /= p.sum()

    def field(v):
        w = v[0] + 1j * v[1]
        s = np.sum(p * (xi - w) / (1 - np.conj(w) * xi))
        return [s.real, s.imag]

    w0 = np.sum(p * xi)
    v = fsolve(field, [w0.real, w0.imag], xtol=1e-13)
    return complex(v[0], v[1])


if __name__ == "__main__":
    amp = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5
    for z in (0j, 0.3 + 0.2j, -0.5j):
        print(repr(z), repr(extension(amp, z)))
