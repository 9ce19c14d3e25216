"""Rigidly rotating Gaussian equilibrium on the plane.

With Omega = -R the equilibrium is exactly Gaussian.  The script prints the
diffusion field A(x) at a few points, checks rotation equivariance, and
compares the Cesaro average of the main term with its limit.
"""

import numpy as np

from vortex_kinetics.acceptance import gaussian_case_setup, off_centre_gaussian
from vortex_kinetics.effective.gaussian import diffusion_matrix_at, gaussian_main_term


def main():
    kernel, profile = gaussian_case_setup(amplitude=3.0, R=1.0)
    for x in ([0.0, 0.0], [1.0, 0.0], [0.0, 2.0]):
        print(f"A({x}) =\n{np.round(diffusion_matrix_at(kernel, profile, np.array(x)), 6)}")

    th = 0.7
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    x = np.array([1.3, -0.4])
    err = np.max(np.abs(diffusion_matrix_at(kernel, profile, rot @ x)
                        - rot @ diffusion_matrix_at(kernel, profile, x) @ rot.T))
    print("rotation equivariance error:", err)

    mt = gaussian_main_term(off_centre_gaussian(), profile, kernel, [0.0], cesaro_T=[50.0, 200.0],
                            s_max=6.0, n_s=64, f_modes=24, n_max=16, R=1.0)
    for T, e in zip(mt.cesaro_T, mt.relative_cesaro_error()):
        print(f"T={T:5.0f}  relative distance of the Cesaro average to the limit: {e:.4f}")


if __name__ == "__main__":
    main()
