#pragma once

#include <array>
#include <cstddef>
#include <variant>
#include <vector>

#include "vmi/autodiff.hpp"
#include "vmi/params.hpp"
#include "vmi/tensor.hpp"

namespace vmi {

class RngStream;

struct SampleBatch {
  Tensor codes;                   // n x d
  std::vector<double> log_probs;  // exact density at each row
};

struct KlEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

double standard_normal_log_density(std::span<const double> x);
std::vector<double> standard_normal_batch_log_density(const Tensor& rows);

// Diagonal Gaussian over generator codes. Parameters are mean and log-std;
// the implied std is positive by construction.
class GaussianFamily {
 public:
  explicit GaussianFamily(std::size_t dim);  // standard normal
  GaussianFamily(std::vector<double> mean, std::vector<double> log_std);

  std::size_t dim() const { return mean_.size(); }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& log_std() const { return log_std_; }

  SampleBatch sample(std::size_t n, RngStream& rng) const;
  std::vector<double> log_prob(const Tensor& codes) const;

  //  1/2 sum_i (mu_i^2 + sigma_i^2 - 1 - 2 log sigma_i)
  double kl_to_standard_normal() const;
  double entropy() const;

  struct TapeParams {
    ad::Value mean;     // 1 x d
    ad::Value log_std;  // 1 x d
  };
  TapeParams leaves_on_tape(ad::Tape& tape) const;
  static ad::Value sample_on_tape(const TapeParams& p, ad::Value eps);
  static ad::Value kl_on_tape(ad::Tape& tape, const TapeParams& p);

  std::vector<ParamRef> mutable_params();
  std::vector<ParamCRef> params() const;

 private:
  std::vector<double> mean_;
  std::vector<double> log_std_;
};

// Volume-preserving coupling flow over an even-dimensional code space.
// Each block shuffles coordinates with a fixed permutation, then shifts the
// second half by a small ELU network of the first half (additive coupling,
// so every Jacobian determinant is 1 and densities come for free from the
// base N(0, I)). A final fixed un-shuffle undoes the composite permutation,
// which makes a zero-initialized flow the identity map, not merely an
// identity-distribution map.
class CouplingFlow {
 public:
  struct Conditioner {
    std::size_t in_dim = 0;
    std::size_t hidden = 0;
    // Two ELU hidden layers, linear output; w3/b3 start at zero so the
    // block starts as a no-op.
    std::vector<double> w1, b1, w2, b2, w3, b3;
  };
  struct Block {
    std::vector<std::size_t> perm;
    Conditioner conditioner;
  };

  CouplingFlow(std::size_t dim, std::vector<Block> blocks);
  static CouplingFlow make(std::size_t dim, std::size_t n_blocks, std::size_t hidden,
                           RngStream& rng);

  std::size_t dim() const { return dim_; }
  std::size_t n_blocks() const { return blocks_.size(); }
  const std::vector<Block>& blocks() const { return blocks_; }

  Tensor forward(const Tensor& base_points) const;
  Tensor inverse(const Tensor& codes) const;

  SampleBatch sample(std::size_t n, RngStream& rng) const;
  std::vector<double> log_prob(const Tensor& codes) const;
  KlEstimate kl_to_standard_normal(std::size_t n_mc, RngStream& rng) const;

  struct TapeParams {
    // per block: w1, b1, w2, b2, w3, b3
    std::vector<std::array<ad::Value, 6>> blocks;
  };
  TapeParams leaves_on_tape(ad::Tape& tape) const;
  ad::Value forward_on_tape(const TapeParams& p, ad::Value base) const;
  ad::Value inverse_on_tape(const TapeParams& p, ad::Value codes) const;
  // Exact log density of `codes` as a tape expression (n x 1).
  ad::Value log_prob_on_tape(const TapeParams& p, ad::Value codes) const;

  std::vector<ParamRef> mutable_params();
  std::vector<ParamCRef> params() const;

 private:
  std::size_t dim_;
  std::vector<Block> blocks_;
  std::vector<std::size_t> unshuffle_;
};

using Family = std::variant<GaussianFamily, CouplingFlow>;

// Independent per-layer families, one per generator synthesis layer.
struct LayeredVariational {
  std::vector<Family> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t layer_dim(std::size_t l) const;
};

std::size_t family_dim(const Family& f);
SampleBatch family_sample(const Family& f, std::size_t n, RngStream& rng);
std::vector<double> family_log_prob(const Family& f, const Tensor& codes);
// Closed form for Gaussians (std_error 0, n_mc ignored); Monte Carlo for
// flows (n_mc >= 1 required).
KlEstimate family_kl_to_standard_normal(const Family& f, std::size_t n_mc, RngStream& rng);
// E[-log q] over n_mc fresh samples.
double family_entropy_estimate(const Family& f, std::size_t n_mc, RngStream& rng);

}  // namespace vmi
