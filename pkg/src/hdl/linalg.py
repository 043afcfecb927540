import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import bicgstab, spsolve

# direct factorization up to this many unknowns, Jacobi-preconditioned BiCGSTAB above
DIRECT_LIMIT = 200_000


def solve_sparse(A: sp.spmatrix, b: np.ndarray, rtol: float = 1e-13) -> np.ndarray:
    if A.shape[0] <= DIRECT_LIMIT:
        return spsolve(A.tocsc(), b)
    d = A.diagonal()
    M = sp.diags(1.0 / d)
    x, info = bicgstab(A.tocsr(), b, M=M, rtol=rtol, maxiter=20 * A.shape[0])
    if info != 0:
        raise RuntimeError(f"iterative linear solve failed (info={info})")
    return x
