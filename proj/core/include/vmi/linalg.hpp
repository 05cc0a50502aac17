#pragma once

#include "vmi/tensor.hpp"

namespace vmi {
class RngStream;
}

namespace vmi::linalg {

// Plain (non-differentiated) dense helpers used by oracles, metrics and
// model construction. Matrices are 2-d Tensors.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// Symmetric eigendecomposition via cyclic Jacobi rotations.
// Returns eigenvalues ascending; eigenvectors as columns of `vectors`.
void eigh(const Tensor& symmetric, Tensor& values, Tensor& vectors);

// Lower Cholesky factor of a symmetric positive definite matrix.
Tensor cholesky(const Tensor& spd);

// Solves A x = b given the lower Cholesky factor of A; b may have many columns.
Tensor cholesky_solve(const Tensor& lower, const Tensor& b);

double logdet_from_cholesky(const Tensor& lower);

// Smallest singular value of a (rows >= cols) matrix, via eigh of A^T A.
double smallest_singular_value(const Tensor& a);

struct GaussianMoments {
  Tensor mean;  // 1 x d
  Tensor cov;   // d x d
};

// KL(N(q) || N(p)) between full-covariance Gaussians.
double gaussian_kl(const GaussianMoments& q, const GaussianMoments& p);

// n draws from N(mean, cov), rows of the result.
Tensor sample_mvn(const GaussianMoments& g, std::size_t n, RngStream& rng);

// Sample mean (1 x d) and covariance (d x d, denominator n - 1) of rows.
GaussianMoments moments_of_rows(const Tensor& rows);

}  // namespace vmi::linalg
