#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vmi/linalg.hpp"
#include "vmi/models.hpp"
#include "vmi/tensor.hpp"

namespace vmi {

struct FeatureCloud {
  Tensor features;  // n x f
  enum class Source { real, generated } source = Source::real;
  int label = -1;  // -1 means pooled
};

// Squared Euclidean distance, summed in coordinate order. Both the k-d tree
// and the brute-force oracle must call this so their comparisons see
// identical floats.
double squared_distance(std::span<const double> a, std::span<const double> b);

// Frechet distance between Gaussians: |mu_r - mu_g|^2 +
// tr(C_r + C_g - 2 (C_r C_g)^{1/2}), the square root taken on the
// symmetrized product via eigendecomposition with eigenvalues clamped at 0
// (threshold 1e-10 of the largest).
double frechet_distance(const linalg::GaussianMoments& a, const linalg::GaussianMoments& b);

// Fits Gaussians to both clouds (covariance denominator n - 1) and applies
// frechet_distance. Requires n >= f + 1 rows per cloud.
double fid(const Tensor& real_features, const Tensor& gen_features);

struct PrResult {
  double precision = 0.0;
  double recall = 0.0;
};

struct DcResult {
  double density = 0.0;
  double coverage = 0.0;
};

// k-NN-ball membership metrics. Radii exclude the query point itself; ties
// at exactly the radius count as inside.
PrResult precision_recall(const Tensor& real_features, const Tensor& gen_features, int k);
DcResult density_coverage(const Tensor& real_features, const Tensor& gen_features, int k);

// Arithmetic mean of recall and coverage; inputs must lie in [0, 1].
double diversity(double recall, double coverage);

// Fraction of samples whose top-1 prediction is the target class.
double attack_accuracy(const Tensor& samples, int target_class, const Classifier& eval_classifier);

// Maps raw samples into the feature space metrics run in.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual Tensor extract(const Tensor& x) const = 0;
  virtual std::size_t feature_dim() const = 0;
};

// Penultimate-layer activations of a classifier (the desk-scale stand-in for
// a pretrained feature network).
class ClassifierFeatures final : public FeatureExtractor {
 public:
  explicit ClassifierFeatures(const Classifier& c) : classifier_(&c) {}
  Tensor extract(const Tensor& x) const override { return classifier_->penultimate(x); }
  std::size_t feature_dim() const override { return classifier_->penultimate_dim(); }

 private:
  const Classifier* classifier_;
};

struct ClassMetrics {
  int label = 0;
  double accuracy = 0.0;
  double accuracy_half_width = 0.0;  // 95% binomial half-width over n_gen
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
  double diversity = 0.0;
  std::size_t n_real = 0;
  std::size_t n_gen = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double mean_accuracy = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_density = 0.0;
  double mean_coverage = 0.0;
  double mean_diversity = 0.0;
  double pooled_fid = 0.0;
  int k = 5;
  std::size_t samples_per_class = 0;
};

// Per-class metrics plus pooled FID over aggregated samples. real/gen are
// parallel per-class feature clouds in the same feature space.
MetricsReport evaluate_metrics(const std::vector<FeatureCloud>& real_per_class,
                               const std::vector<FeatureCloud>& gen_per_class,
                               const std::vector<double>& per_class_accuracy, int k);

}  // namespace vmi
