#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vmi/linalg.hpp"
#include "vmi/models.hpp"
#include "vmi/optim.hpp"
#include "vmi/variational.hpp"

namespace vmi {

enum class FamilyKind { gaussian, flow, layered };

FamilyKind family_kind_from_string(const std::string& s);
const char* family_kind_to_string(FamilyKind k);

struct AttackConfig {
  int target_class = 0;
  double gamma = 1e-3;
  FamilyKind family = FamilyKind::gaussian;
  // Per-layer family when family == layered.
  FamilyKind layer_family = FamilyKind::flow;
  std::size_t n_mc = 64;
  OptimizerConfig optimizer;  // adam, lr 1e-2 by default
  int steps = 2000;
  std::uint64_t seed = 0;
  int restarts = 0;  // extra seeded re-runs keeping the lowest final loss
  std::size_t flow_blocks = 8;
  std::size_t flow_hidden = 32;

  void validate() const;
};

struct StepStats {
  double nll = 0.0;    // E_q[-log p(y | G(z))], Monte Carlo
  double kl = 0.0;     // gamma-weighted KL term
  double total = 0.0;  // nll + kl
};

struct AttackResult {
  LayeredVariational family;
  std::vector<StepStats> trace;  // length steps + 1 (initial state included)
  std::vector<double> per_layer_kl;       // unweighted KL(q_l || N(0,I)) at end
  std::vector<double> per_layer_entropy;  // E[-log q_l] at end
  double final_loss = 0.0;
};

struct LossBreakdown {
  double nll = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Power-posterior objective: E_q[-log p(y|G(z))] + gamma KL(q || N(0,I)).
// One fresh Monte Carlo batch; the KL term reuses the likelihood samples
// (closed form for the Gaussian family). Gradients, when requested, align
// with the family's mutable_params() order.
LossBreakdown vmi_loss(const Family& family, const Generator& gen, const LikelihoodModel& lik,
                       int target_class, double gamma, std::size_t n_mc, RngStream& rng,
                       std::vector<std::vector<double>>* grads = nullptr);

// Layered objective: likelihood over jointly sampled per-layer codes,
// KL term gamma * mean of per-layer KLs. Reduces to vmi_loss when L = 1.
LossBreakdown svmi_loss(const LayeredVariational& family, const Generator& gen,
                        const LikelihoodModel& lik, int target_class, double gamma,
                        std::size_t n_mc, RngStream& rng,
                        std::vector<std::vector<double>>* grads = nullptr,
                        std::vector<double>* per_layer_kl = nullptr,
                        std::vector<double>* per_layer_entropy = nullptr);

// Fits the configured family by first-order optimization of the objective
// above. Deterministic given the config seed.
AttackResult run_attack(const AttackConfig& cfg, const Generator& gen, const LikelihoodModel& lik);

// Per-class quadratic unnormalized log likelihood -1/2 z^T H z + b^T z + c
// with H symmetric PSD. Exposes the likelihood hook directly, so the
// conjugate posterior below is exact rather than softmax-approximate.
class QuadraticLogitTask final : public LikelihoodModel {
 public:
  struct ClassTerm {
    Tensor h;               // k x k symmetric PSD
    std::vector<double> b;  // k
    double c = 0.0;
  };

  explicit QuadraticLogitTask(std::vector<ClassTerm> classes);
  static QuadraticLogitTask random(std::size_t dim, int classes, RngStream& rng);

  std::size_t input_dim() const override { return classes_.front().b.size(); }
  int num_classes() const override { return static_cast<int>(classes_.size()); }
  const ClassTerm& term(int y) const;

  double log_likelihood_direct(int y, std::span<const double> z) const;
  ad::Value log_likelihood_on_tape(ad::Tape& tape, ad::Value x, int label) const override;

 private:
  std::vector<ClassTerm> classes_;
};

// Exact power posterior for a quadratic task under the N(0, I) prior:
// precision I + H/gamma, mean precision^{-1} (b/gamma). gamma = 0 is the
// point-estimate regime and is refused.
linalg::GaussianMoments analytic_power_posterior(const QuadraticLogitTask& task, int target_class,
                                                 double gamma);

struct PointAttackResult {
  Tensor point;                 // 1 x d
  std::vector<double> trace;    // objective per step, length steps + 1
};

// Gradient ascent on log p(y | x) in input space.
PointAttackResult general_mi(const LikelihoodModel& lik, int target_class, const Tensor& x_init,
                             int steps, double lr);

// Gradient descent on -lambda log p(y|G(z)) - log sigmoid(D(G(z))) over a
// single code point.
PointAttackResult generative_mi(const Generator& gen, const Discriminator& disc,
                                const LikelihoodModel& lik, int target_class, double lambda,
                                const Tensor& z_init, int steps, double lr);

// Point-estimate restriction of the power-posterior objective with the
// discriminator standing in for the prior: -log p(y|G(z)) - gamma log
// sigmoid(D(G(z))). With lambda = 1/gamma this shares its stationary points
// with generative_mi.
PointAttackResult vmi_point_estimate(const Generator& gen, const Discriminator& disc,
                                     const LikelihoodModel& lik, int target_class, double gamma,
                                     const Tensor& z_init, int steps, double lr);

}  // namespace vmi
