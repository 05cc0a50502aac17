#include "vmi/linalg.hpp"

#include <cmath>
#include <stdexcept>

#include "vmi/rng.hpp"

namespace vmi::linalg {

namespace {
void require_square(const Tensor& a, const char* who) {
  if (a.ndim() != 2 || a.rows() != a.cols()) {
    throw std::invalid_argument(std::string(who) + ": expected square matrix, got " +
                                a.shape_string());
  }
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("linalg::matmul: shape mismatch (" + a.shape_string() + " vs " +
                                b.shape_string() + ")");
  }
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      double av = a.at(i, k);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, j) += av * b.at(k, j);
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  Tensor out = Tensor::zeros({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("linalg::add: shape mismatch (" + a.shape_string() + " vs " +
                                b.shape_string() + ")");
  }
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out.mutable_data()[i] += b.data()[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.mutable_data()) v *= c;
  return out;
}

void eigh(const Tensor& symmetric, Tensor& values, Tensor& vectors) {
  require_square(symmetric, "eigh");
  const std::size_t n = symmetric.rows();
  Tensor a = symmetric;
  Tensor v = Tensor::identity(n);

  // Cyclic Jacobi. Desk-scale matrices, so simple convergence control.
  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
    if (off < 1e-26 * (1.0 + std::abs(a.at(0, 0)))) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a.at(p, q);
        if (apq == 0.0) continue;
        double app = a.at(p, p);
        double aqq = a.at(q, q);
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a.at(k, p);
          double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a.at(p, k);
          double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v.at(k, p);
          double vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  // Sort ascending by eigenvalue, permuting eigenvector columns alongside.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = i;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (a.at(order[j], order[j]) < a.at(order[best], order[best])) best = j;
    }
    std::swap(order[i], order[best]);
  }
  values = Tensor::zeros({1, n});
  vectors = Tensor::zeros({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    values.at(0, j) = a.at(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) vectors.at(i, j) = v.at(i, order[j]);
  }
}

Tensor cholesky(const Tensor& spd) {
  require_square(spd, "cholesky");
  const std::size_t n = spd.rows();
  Tensor l = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = spd.at(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l.at(i, k) * l.at(j, k);
      if (i == j) {
        if (acc <= 0.0) throw std::runtime_error("cholesky: matrix not positive definite");
        l.at(i, i) = std::sqrt(acc);
      } else {
        l.at(i, j) = acc / l.at(j, j);
      }
    }
  }
  return l;
}

Tensor cholesky_solve(const Tensor& lower, const Tensor& b) {
  require_square(lower, "cholesky_solve");
  if (b.rows() != lower.rows()) {
    throw std::invalid_argument("cholesky_solve: rhs rows " + b.shape_string());
  }
  const std::size_t n = lower.rows();
  Tensor y = b;
  // forward: L y = b
  for (std::size_t col = 0; col < b.cols(); ++col) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = y.at(i, col);
      for (std::size_t k = 0; k < i; ++k) acc -= lower.at(i, k) * y.at(k, col);
      y.at(i, col) = acc / lower.at(i, i);
    }
    // back: L^T x = y
    for (std::size_t ii = n; ii-- > 0;) {
      double acc = y.at(ii, col);
      for (std::size_t k = ii + 1; k < n; ++k) acc -= lower.at(k, ii) * y.at(k, col);
      y.at(ii, col) = acc / lower.at(ii, ii);
    }
  }
  return y;
}

double logdet_from_cholesky(const Tensor& lower) {
  double acc = 0.0;
  for (std::size_t i = 0; i < lower.rows(); ++i) acc += std::log(lower.at(i, i));
  return 2.0 * acc;
}

double smallest_singular_value(const Tensor& a) {
  if (a.rows() < a.cols()) {
    throw std::invalid_argument("smallest_singular_value: expected rows >= cols");
  }
  Tensor gram = matmul(transpose(a), a);
  Tensor values, vectors;
  eigh(gram, values, vectors);
  double lam = values.at(0, 0);
  return lam <= 0.0 ? 0.0 : std::sqrt(lam);
}

double gaussian_kl(const GaussianMoments& q, const GaussianMoments& p) {
  const std::size_t d = q.mean.cols();
  if (p.mean.cols() != d || q.cov.rows() != d || p.cov.rows() != d) {
    throw std::invalid_argument("gaussian_kl: dimension mismatch");
  }
  Tensor lq = cholesky(q.cov);
  Tensor lp = cholesky(p.cov);
  // tr(P^{-1} Q)
  Tensor pinv_q = cholesky_solve(lp, q.cov);
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace += pinv_q.at(i, i);
  // (mp - mq)^T P^{-1} (mp - mq)
  Tensor diff = Tensor::zeros({d, 1});
  for (std::size_t i = 0; i < d; ++i) diff.at(i, 0) = p.mean.at(0, i) - q.mean.at(0, i);
  Tensor solved = cholesky_solve(lp, diff);
  double maha = 0.0;
  for (std::size_t i = 0; i < d; ++i) maha += diff.at(i, 0) * solved.at(i, 0);
  double logdet_q = logdet_from_cholesky(lq);
  double logdet_p = logdet_from_cholesky(lp);
  return 0.5 * (trace + maha - static_cast<double>(d) + logdet_p - logdet_q);
}

Tensor sample_mvn(const GaussianMoments& g, std::size_t n, RngStream& rng) {
  const std::size_t d = g.mean.cols();
  Tensor l = cholesky(g.cov);
  Tensor out = Tensor::zeros({n, d});
  std::vector<double> z(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) z[i] = rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
      double acc = g.mean.at(0, i);
      for (std::size_t k = 0; k <= i; ++k) acc += l.at(i, k) * z[k];
      out.at(r, i) = acc;
    }
  }
  return out;
}

GaussianMoments moments_of_rows(const Tensor& rows) {
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  if (n < 2) throw std::invalid_argument("moments_of_rows: need at least 2 rows");
  GaussianMoments g{Tensor::zeros({1, d}), Tensor::zeros({d, d})};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) g.mean.at(0, c) += rows.at(r, c);
  for (std::size_t c = 0; c < d; ++c) g.mean.at(0, c) /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      double di = rows.at(r, i) - g.mean.at(0, i);
      for (std::size_t j = i; j < d; ++j) {
        g.cov.at(i, j) += di * (rows.at(r, j) - g.mean.at(0, j));
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      g.cov.at(i, j) /= static_cast<double>(n - 1);
      g.cov.at(j, i) = g.cov.at(i, j);
    }
  }
  return g;
}

}  // namespace vmi::linalg
