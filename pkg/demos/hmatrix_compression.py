"""H-matrix compression of the sphere EFIE operator.

Builds the dense matrix and H-matrix approximations for a few leaf sizes and
reports storage, admissible fraction and matvec error.
"""

import numpy as np

from spline_mom import ConformingSpace, ScatteringConfig, make_sphere
from spline_mom.assembly import EfieOperator
from spline_mom.hmatrix import build_hmatrix
from spline_mom.spaces import parse_degree_pair

space = ConformingSpace(make_sphere().refine(2), "div", parse_degree_pair("2,1"))
op = EfieOperator(space, ScatteringConfig(3.0))
Z = op.dense()
x = np.random.default_rng(0).standard_normal(Z.shape[0])
print("leaf  admissible  stored/dense  matvec error")
for leaf in (32, 16, 8):
    H = build_hmatrix(op, space.dof_bounding_boxes, leaf_size=leaf)
    err = np.linalg.norm(H @ x - Z @ x) / np.linalg.norm(Z @ x)
    print(f"{leaf:4d}  {H.admissible_fraction:10.3f}  {H.compression:12.3f}  {err:.2e}")
