"""
t-product and t-SVD in a few lines
==================================

A third-order tensor acts like a matrix whose entries are tubes.  Products
are circular convolutions along the third mode, which the FFT turns into
independent matrix products, one per frequency.
"""
import numpy as np

from tubalinfer import conj_transpose, tprod, truncate_rank, tsvd, tubal_rank
from tubalinfer.tensor_core import bcirc, fold, unfold

rng = np.random.default_rng(0)

# two random tensors with a shared inner dimension
A = rng.standard_normal((4, 3, 5))
B = rng.standard_normal((3, 2, 5))

# the FFT route and the block-circulant route agree
C = tprod(A, B)
C_ref = fold(bcirc(A) @ unfold(B), C.shape)
print("t-product vs block circulant, max diff:", np.abs(C - C_ref).max())

# a product of thin factors has low tubal rank
L = tprod(rng.standard_normal((20, 2, 8)), rng.standard_normal((2, 15, 8)))
print("tubal rank of a 20x15x8 product with inner size 2:", tubal_rank(L))

# the t-SVD reconstructs exactly and has orthonormal factors
f = tsvd(L, r=2)
print("reconstruction error:", np.abs(f.reconstruct() - L).max())
UtU = tprod(conj_transpose(f.U), f.U)
print("U^T * U is the identity tensor:", np.allclose(UtU[:, :, 0], np.eye(2)), np.abs(UtU[:, :, 1:]).max() < 1e-12)

# truncation is the best rank-r approximation, slice by slice in frequency
noisy = L + 0.1 * rng.standard_normal(L.shape)
P, _ = truncate_rank(noisy, 2)
print("noise removed by rank-2 truncation: %.3f -> %.3f RMSE"
      % (np.sqrt(np.mean((noisy - L) ** 2)), np.sqrt(np.mean((P - L) ** 2))))
