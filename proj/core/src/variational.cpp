#include "vmi/variational.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vmi/rng.hpp"

namespace vmi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

void elu_inplace(std::vector<double>& v) {
  for (double& x : v) x = x > 0.0 ? x : std::expm1(x);
}

// y = x W + b for a single row. Accumulates the product first and adds the
// bias last, the same order as the tape's matmul-then-add, so the plain and
// recorded paths agree bitwise.
std::vector<double> affine_row(std::span<const double> x, const std::vector<double>& w,
                               const std::vector<double>& b, std::size_t out_dim) {
  std::vector<double> y(out_dim, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double xv = x[i];
    if (xv == 0.0) continue;
    const double* wrow = &w[i * out_dim];
    for (std::size_t j = 0; j < out_dim; ++j) y[j] += xv * wrow[j];
  }
  for (std::size_t j = 0; j < out_dim; ++j) y[j] += b[j];
  return y;
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& p) {
  std::vector<std::size_t> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
  return inv;
}

}  // namespace

double standard_normal_log_density(std::span<const double> x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return -0.5 * ss - 0.5 * kLog2Pi * static_cast<double>(x.size());
}

std::vector<double> standard_normal_batch_log_density(const Tensor& rows) {
  std::vector<double> lp(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    lp[r] = standard_normal_log_density(
        std::span<const double>(rows.data().data() + r * rows.cols(), rows.cols()));
  }
  return lp;
}

// ---------------------------------------------------------------------------
// GaussianFamily

GaussianFamily::GaussianFamily(std::size_t dim)
    : mean_(dim, 0.0), log_std_(dim, 0.0) {
  if (dim == 0) throw std::invalid_argument("gaussian family: dim must be positive");
}

GaussianFamily::GaussianFamily(std::vector<double> mean, std::vector<double> log_std)
    : mean_(std::move(mean)), log_std_(std::move(log_std)) {
  if (mean_.empty() || mean_.size() != log_std_.size()) {
    throw std::invalid_argument("gaussian family: mean/log_std size mismatch");
  }
  for (double v : mean_) {
    if (!std::isfinite(v)) throw std::invalid_argument("gaussian family: non-finite mean");
  }
  for (double v : log_std_) {
    if (!std::isfinite(v)) throw std::invalid_argument("gaussian family: non-finite log_std");
  }
}

SampleBatch GaussianFamily::sample(std::size_t n, RngStream& rng) const {
  if (n == 0) throw std::invalid_argument("sample: n must be >= 1");
  const std::size_t d = dim();
  Tensor codes = Tensor::zeros({n, d});
  std::vector<double> lp(n);
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double eps = rng.normal();
      double sd = std::exp(log_std_[c]);
      codes.at(r, c) = mean_[c] + sd * eps;
      acc += -0.5 * eps * eps - log_std_[c];
    }
    lp[r] = acc - 0.5 * kLog2Pi * static_cast<double>(d);
  }
  return {std::move(codes), std::move(lp)};
}

std::vector<double> GaussianFamily::log_prob(const Tensor& codes) const {
  if (codes.ndim() != 2 || codes.cols() != dim()) {
    throw std::invalid_argument("log_prob: codes dim mismatch (" + codes.shape_string() +
                                " for family dim " + std::to_string(dim()) + ")");
  }
  std::vector<double> lp(codes.rows());
  for (std::size_t r = 0; r < codes.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < dim(); ++c) {
      double z = (codes.at(r, c) - mean_[c]) / std::exp(log_std_[c]);
      acc += -0.5 * z * z - log_std_[c];
    }
    lp[r] = acc - 0.5 * kLog2Pi * static_cast<double>(dim());
  }
  return lp;
}

double GaussianFamily::kl_to_standard_normal() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) {
    double var = std::exp(2.0 * log_std_[i]);
    acc += mean_[i] * mean_[i] + var - 1.0 - 2.0 * log_std_[i];
  }
  return 0.5 * acc;
}

double GaussianFamily::entropy() const {
  double acc = 0.0;
  for (double ls : log_std_) acc += ls;
  return acc + 0.5 * static_cast<double>(dim()) * (1.0 + kLog2Pi);
}

GaussianFamily::TapeParams GaussianFamily::leaves_on_tape(ad::Tape& tape) const {
  TapeParams p;
  p.mean = tape.leaf(Tensor::row(mean_), "gaussian.mean");
  p.log_std = tape.leaf(Tensor::row(log_std_), "gaussian.log_std");
  return p;
}

ad::Value GaussianFamily::sample_on_tape(const TapeParams& p, ad::Value eps) {
  return ad::gauss_reparam(p.mean, p.log_std, eps);
}

ad::Value GaussianFamily::kl_on_tape(ad::Tape& tape, const TapeParams& p) {
  const std::size_t d = tape.value(p.mean).cols();
  ad::Value mu2 = ad::mul(p.mean, p.mean);
  ad::Value var = ad::exp(ad::scale(p.log_std, 2.0));
  ad::Value ones = tape.leaf(Tensor::full({1, d}, 1.0), "ones");
  ad::Value inner = ad::sub(ad::add(mu2, var), ad::add(ones, ad::scale(p.log_std, 2.0)));
  return ad::scale(ad::sum(inner), 0.5);
}

std::vector<ParamRef> GaussianFamily::mutable_params() {
  return {{"mean", &mean_}, {"log_std", &log_std_}};
}

std::vector<ParamCRef> GaussianFamily::params() const {
  return {{"mean", &mean_}, {"log_std", &log_std_}};
}

// ---------------------------------------------------------------------------
// CouplingFlow

CouplingFlow::CouplingFlow(std::size_t dim, std::vector<Block> blocks)
    : dim_(dim), blocks_(std::move(blocks)) {
  if (dim_ < 2 || dim_ % 2 != 0) {
    throw std::invalid_argument("coupling flow: dim must be even and >= 2");
  }
  if (blocks_.empty()) throw std::invalid_argument("coupling flow: need at least one block");
  const std::size_t half = dim_ / 2;
  std::vector<std::size_t> composite(dim_);
  for (std::size_t i = 0; i < dim_; ++i) composite[i] = i;
  for (const Block& b : blocks_) {
    if (b.perm.size() != dim_) throw std::invalid_argument("coupling flow: bad permutation size");
    std::vector<bool> seen(dim_, false);
    for (std::size_t p : b.perm) {
      if (p >= dim_ || seen[p]) throw std::invalid_argument("coupling flow: not a permutation");
      seen[p] = true;
    }
    const Conditioner& c = b.conditioner;
    if (c.in_dim != half || c.w1.size() != c.in_dim * c.hidden || c.b1.size() != c.hidden ||
        c.w2.size() != c.hidden * c.hidden || c.b2.size() != c.hidden ||
        c.w3.size() != c.hidden * half || c.b3.size() != half) {
      throw std::invalid_argument("coupling flow: conditioner shape mismatch");
    }
    // compose: after this block, out[c] = in[composite[perm[c]]]
    std::vector<std::size_t> next(dim_);
    for (std::size_t i = 0; i < dim_; ++i) next[i] = composite[b.perm[i]];
    composite = std::move(next);
  }
  unshuffle_ = inverse_permutation(composite);
  // forward output col c = pre-unshuffle col unshuffle_[c]; with unshuffle_
  // the inverse of the composite, coordinates end up back in input order.
}

CouplingFlow CouplingFlow::make(std::size_t dim, std::size_t n_blocks, std::size_t hidden,
                                RngStream& rng) {
  if (dim < 2 || dim % 2 != 0) {
    throw std::invalid_argument("coupling flow: dim must be even and >= 2");
  }
  const std::size_t half = dim / 2;
  std::vector<Block> blocks(n_blocks);
  for (std::size_t bi = 0; bi < n_blocks; ++bi) {
    Block& b = blocks[bi];
    b.perm.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) b.perm[i] = i;
    // Fisher-Yates with the stream's raw draws.
    for (std::size_t i = dim - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(rng.next_u64() % (i + 1));
      std::swap(b.perm[i], b.perm[j]);
    }
    Conditioner& c = b.conditioner;
    c.in_dim = half;
    c.hidden = hidden;
    double s1 = 1.0 / std::sqrt(static_cast<double>(half));
    double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    c.w1.resize(half * hidden);
    for (double& v : c.w1) v = s1 * rng.normal();
    c.b1.assign(hidden, 0.0);
    c.w2.resize(hidden * hidden);
    for (double& v : c.w2) v = s2 * rng.normal();
    c.b2.assign(hidden, 0.0);
    // Zero-initialized output layer: the flow starts at the identity and the
    // KL term starts at exactly zero.
    c.w3.assign(hidden * half, 0.0);
    c.b3.assign(half, 0.0);
  }
  return CouplingFlow(dim, std::move(blocks));
}

Tensor CouplingFlow::forward(const Tensor& base_points) const {
  if (base_points.ndim() != 2 || base_points.cols() != dim_) {
    throw std::invalid_argument("flow forward: dim mismatch " + base_points.shape_string());
  }
  const std::size_t half = dim_ / 2;
  Tensor x = base_points;
  std::vector<double> tmp(dim_);
  for (const Block& b : blocks_) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < dim_; ++c) tmp[c] = x.at(r, b.perm[c]);
      std::span<const double> x1(tmp.data(), half);
      const Conditioner& cond = b.conditioner;
      std::vector<double> h = affine_row(x1, cond.w1, cond.b1, cond.hidden);
      elu_inplace(h);
      h = affine_row(h, cond.w2, cond.b2, cond.hidden);
      elu_inplace(h);
      std::vector<double> t = affine_row(h, cond.w3, cond.b3, half);
      for (std::size_t c = 0; c < half; ++c) x.at(r, c) = tmp[c];
      for (std::size_t c = 0; c < half; ++c) x.at(r, half + c) = tmp[half + c] + t[c];
    }
  }
  Tensor out = Tensor::zeros({x.rows(), dim_});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < dim_; ++c) out.at(r, c) = x.at(r, unshuffle_[c]);
  return out;
}

Tensor CouplingFlow::inverse(const Tensor& codes) const {
  if (codes.ndim() != 2 || codes.cols() != dim_) {
    throw std::invalid_argument("flow inverse: dim mismatch " + codes.shape_string());
  }
  const std::size_t half = dim_ / 2;
  std::vector<std::size_t> shuffle = inverse_permutation(unshuffle_);
  Tensor x = Tensor::zeros({codes.rows(), dim_});
  for (std::size_t r = 0; r < codes.rows(); ++r)
    for (std::size_t c = 0; c < dim_; ++c) x.at(r, c) = codes.at(r, shuffle[c]);
  std::vector<double> tmp(dim_);
  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    const Block& b = blocks_[bi];
    std::vector<std::size_t> pinv = inverse_permutation(b.perm);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < dim_; ++c) tmp[c] = x.at(r, c);
      std::span<const double> y1(tmp.data(), half);
      const Conditioner& cond = b.conditioner;
      std::vector<double> h = affine_row(y1, cond.w1, cond.b1, cond.hidden);
      elu_inplace(h);
      h = affine_row(h, cond.w2, cond.b2, cond.hidden);
      elu_inplace(h);
      std::vector<double> t = affine_row(h, cond.w3, cond.b3, half);
      for (std::size_t c = 0; c < half; ++c) tmp[half + c] -= t[c];
      for (std::size_t c = 0; c < dim_; ++c) x.at(r, c) = tmp[pinv[c]];
    }
  }
  return x;
}

SampleBatch CouplingFlow::sample(std::size_t n, RngStream& rng) const {
  if (n == 0) throw std::invalid_argument("sample: n must be >= 1");
  Tensor base = Tensor::randn({n, dim_}, rng);
  std::vector<double> lp(n);
  for (std::size_t r = 0; r < n; ++r) {
    lp[r] = standard_normal_log_density(
        std::span<const double>(base.data().data() + r * dim_, dim_));
  }
  return {forward(base), std::move(lp)};
}

std::vector<double> CouplingFlow::log_prob(const Tensor& codes) const {
  // Change of variables with unit Jacobian: log q(z) = log N(inverse(z)).
  Tensor base = inverse(codes);
  std::vector<double> lp(base.rows());
  for (std::size_t r = 0; r < base.rows(); ++r) {
    lp[r] = standard_normal_log_density(
        std::span<const double>(base.data().data() + r * dim_, dim_));
  }
  return lp;
}

KlEstimate CouplingFlow::kl_to_standard_normal(std::size_t n_mc, RngStream& rng) const {
  if (n_mc < 1) throw std::invalid_argument("flow kl: n_mc must be >= 1");
  SampleBatch batch = sample(n_mc, rng);
  std::vector<double> prior_lp = standard_normal_batch_log_density(batch.codes);
  double mean = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) mean += batch.log_probs[i] - prior_lp[i];
  mean /= static_cast<double>(n_mc);
  double var = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    double d = batch.log_probs[i] - prior_lp[i] - mean;
    var += d * d;
  }
  double se = n_mc > 1 ? std::sqrt(var / static_cast<double>(n_mc - 1) /
                                   static_cast<double>(n_mc))
                       : 0.0;
  return {mean, se};
}

CouplingFlow::TapeParams CouplingFlow::leaves_on_tape(ad::Tape& tape) const {
  TapeParams p;
  p.blocks.reserve(blocks_.size());
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const Conditioner& c = blocks_[bi].conditioner;
    const std::size_t half = dim_ / 2;
    std::string prefix = "flow.block" + std::to_string(bi) + ".";
    p.blocks.push_back({
        tape.leaf(Tensor::matrix(c.in_dim, c.hidden, c.w1), prefix + "w1"),
        tape.leaf(Tensor::row(c.b1), prefix + "b1"),
        tape.leaf(Tensor::matrix(c.hidden, c.hidden, c.w2), prefix + "w2"),
        tape.leaf(Tensor::row(c.b2), prefix + "b2"),
        tape.leaf(Tensor::matrix(c.hidden, half, c.w3), prefix + "w3"),
        tape.leaf(Tensor::row(c.b3), prefix + "b3"),
    });
  }
  return p;
}

ad::Value CouplingFlow::forward_on_tape(const TapeParams& p, ad::Value base) const {
  const std::size_t half = dim_ / 2;
  ad::Value x = base;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    x = ad::permute_cols(x, blocks_[bi].perm);
    ad::Value x1 = ad::slice_cols(x, 0, half);
    ad::Value x2 = ad::slice_cols(x, half, dim_);
    const auto& w = p.blocks[bi];
    ad::Value h = ad::elu(ad::add(ad::matmul(x1, w[0]), w[1]));
    h = ad::elu(ad::add(ad::matmul(h, w[2]), w[3]));
    ad::Value t = ad::add(ad::matmul(h, w[4]), w[5]);
    x = ad::concat_cols(x1, ad::add(x2, t));
  }
  return ad::permute_cols(x, unshuffle_);
}

ad::Value CouplingFlow::inverse_on_tape(const TapeParams& p, ad::Value codes) const {
  const std::size_t half = dim_ / 2;
  ad::Value x = ad::permute_cols(codes, inverse_permutation(unshuffle_));
  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    ad::Value y1 = ad::slice_cols(x, 0, half);
    ad::Value y2 = ad::slice_cols(x, half, dim_);
    const auto& w = p.blocks[bi];
    ad::Value h = ad::elu(ad::add(ad::matmul(y1, w[0]), w[1]));
    h = ad::elu(ad::add(ad::matmul(h, w[2]), w[3]));
    ad::Value t = ad::add(ad::matmul(h, w[4]), w[5]);
    x = ad::concat_cols(y1, ad::sub(y2, t));
    x = ad::permute_cols(x, inverse_permutation(blocks_[bi].perm));
  }
  return x;
}

ad::Value CouplingFlow::log_prob_on_tape(const TapeParams& p, ad::Value codes) const {
  ad::Value base = inverse_on_tape(p, codes);
  ad::Value ss = ad::sum(ad::mul(base, base), 1);
  ad::Value lp = ad::scale(ss, -0.5);
  ad::Tape& tape = *codes.tape;
  ad::Value c = tape.leaf(
      Tensor::scalar(-0.5 * kLog2Pi * static_cast<double>(dim_)), "log-norm-const");
  return ad::add(lp, c);
}

std::vector<ParamRef> CouplingFlow::mutable_params() {
  std::vector<ParamRef> out;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    Conditioner& c = blocks_[bi].conditioner;
    std::string prefix = "block" + std::to_string(bi) + ".";
    out.push_back({prefix + "w1", &c.w1});
    out.push_back({prefix + "b1", &c.b1});
    out.push_back({prefix + "w2", &c.w2});
    out.push_back({prefix + "b2", &c.b2});
    out.push_back({prefix + "w3", &c.w3});
    out.push_back({prefix + "b3", &c.b3});
  }
  return out;
}

std::vector<ParamCRef> CouplingFlow::params() const {
  std::vector<ParamCRef> out;
  for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
    const Conditioner& c = blocks_[bi].conditioner;
    std::string prefix = "block" + std::to_string(bi) + ".";
    out.push_back({prefix + "w1", &c.w1});
    out.push_back({prefix + "b1", &c.b1});
    out.push_back({prefix + "w2", &c.w2});
    out.push_back({prefix + "b2", &c.b2});
    out.push_back({prefix + "w3", &c.w3});
    out.push_back({prefix + "b3", &c.b3});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Family helpers

std::size_t LayeredVariational::layer_dim(std::size_t l) const {
  return family_dim(layers.at(l));
}

std::size_t family_dim(const Family& f) {
  return std::visit([](const auto& fam) { return fam.dim(); }, f);
}

SampleBatch family_sample(const Family& f, std::size_t n, RngStream& rng) {
  return std::visit([&](const auto& fam) { return fam.sample(n, rng); }, f);
}

std::vector<double> family_log_prob(const Family& f, const Tensor& codes) {
  return std::visit([&](const auto& fam) { return fam.log_prob(codes); }, f);
}

KlEstimate family_kl_to_standard_normal(const Family& f, std::size_t n_mc, RngStream& rng) {
  if (const auto* g = std::get_if<GaussianFamily>(&f)) {
    return {g->kl_to_standard_normal(), 0.0};
  }
  return std::get<CouplingFlow>(f).kl_to_standard_normal(n_mc, rng);
}

double family_entropy_estimate(const Family& f, std::size_t n_mc, RngStream& rng) {
  if (n_mc < 1) throw std::invalid_argument("entropy estimate: n_mc must be >= 1");
  SampleBatch batch = family_sample(f, n_mc, rng);
  double acc = 0.0;
  for (double lp : batch.log_probs) acc -= lp;
  return acc / static_cast<double>(n_mc);
}

}  // namespace vmi
