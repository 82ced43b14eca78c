#pragma once

#include <vector>

namespace dmplug::linalg {

// Symmetric eigendecomposition by cyclic Jacobi rotations. a is n*n row-major
// and is symmetrized internally. On return eigvecs holds the orthonormal basis
// with eigenvector j in COLUMN j, so a = V diag(eigvals) V^T.
void sym_eig(int n, std::vector<double> a, std::vector<double>& eigvals,
             std::vector<double>& eigvecs);

// y = A x for row-major A (m x n)
std::vector<double> matvec(int m, int n, const std::vector<double>& a,
                           const std::vector<double>& x);

// Minimum-norm least-squares solution of A x ~= b for row-major A (m x n),
// via the eigendecomposition of A^T A. Directions whose eigenvalue falls
// below rel_tol * max_eigenvalue are treated as null space.
std::vector<double> lstsq(int m, int n, const std::vector<double>& a,
                          const std::vector<double>& b, double rel_tol = 1e-10);

} // namespace dmplug::linalg
