"""Analytic monostatic RCS of the PEC sphere from the Rayleigh to the optical regime."""

import numpy as np

from spline_mom.mie import MieSeries, mie_rcs

for ka in np.geomspace(0.05, 20, 25):
    print(f"{ka:8.4f}  {mie_rcs(MieSeries(ka)):.6e}")
