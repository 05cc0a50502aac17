#pragma once

#include <memory>
#include <span>
#include <vector>

#include "vmi/autodiff.hpp"
#include "vmi/dataset.hpp"
#include "vmi/linalg.hpp"
#include "vmi/params.hpp"
#include "vmi/tensor.hpp"

namespace vmi {

class RngStream;

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> w;  // in x out, row-major
  std::vector<double> b;  // out

  static DenseLayer init(std::size_t in, std::size_t out, RngStream& rng);
  static DenseLayer zeros(std::size_t in, std::size_t out);
};

// Per-sample log likelihood log p(y | x) the attack differentiates through.
// Implemented by softmax classifiers and by the analytic quadratic tasks
// (where the value is an unnormalized log likelihood).
class LikelihoodModel {
 public:
  virtual ~LikelihoodModel() = default;
  virtual std::size_t input_dim() const = 0;
  virtual int num_classes() const = 0;
  // x is n x input_dim; result is n x 1.
  virtual ad::Value log_likelihood_on_tape(ad::Tape& tape, ad::Value x, int label) const = 0;
  double log_likelihood(const Tensor& x, int label) const;  // mean over rows
};

// Dense tanh MLP with a softmax head.
class Classifier final : public LikelihoodModel {
 public:
  Classifier(std::size_t input_dim, const std::vector<std::size_t>& hidden, int classes,
             RngStream& rng);
  explicit Classifier(std::vector<DenseLayer> layers);

  std::size_t input_dim() const override { return layers_.front().in; }
  int num_classes() const override { return static_cast<int>(layers_.back().out); }

  Tensor logits(const Tensor& x) const;
  Tensor classify(const Tensor& x) const;  // rows on the simplex
  std::vector<int> predict(const Tensor& x) const;
  // Activations feeding the final linear layer (the feature-extractor hook).
  Tensor penultimate(const Tensor& x) const;
  std::size_t penultimate_dim() const;

  ad::Value logits_on_tape(ad::Tape& tape, ad::Value x) const;
  ad::Value log_likelihood_on_tape(ad::Tape& tape, ad::Value x, int label) const override;

  std::vector<ParamRef> mutable_params();
  std::vector<ParamCRef> params() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
};

struct ClassifierHyperparams {
  std::vector<std::size_t> hidden = {64};
  int epochs = 40;
  std::size_t batch = 64;
  double lr = 0.05;
  double momentum = 0.9;
};

struct TrainCurve {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

// SGD with momentum on cross-entropy. Throws on an empty or single-class
// dataset; zero epochs returns the freshly initialized classifier.
Classifier train_classifier(const LabeledDataset& train, const LabeledDataset* validation,
                            const ClassifierHyperparams& hp, RngStream& rng,
                            TrainCurve* curve = nullptr);

// Generator over an even smaller code space; synthesis may take one style
// vector per layer (style mixing). The attack path is synthesize_codes_on_tape
// with sigma treated as 0.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::size_t code_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::size_t num_layers() const = 0;
  virtual double noise_sigma() const = 0;

  // codes: one n x code_dim value per layer.
  virtual ad::Value synthesize_codes_on_tape(ad::Tape& tape,
                                             std::span<const ad::Value> codes) const = 0;
  // per_layer: exactly num_layers() tensors, codes or styles; noise may be
  // null (sigma treated as 0) or an n x output_dim standard normal draw.
  virtual Tensor synthesize(std::span<const Tensor> per_layer, bool are_styles,
                            const Tensor* noise) const = 0;

  // Plain path G(z): one code tensor copied to every layer.
  Tensor generate(const Tensor& codes, const Tensor* noise = nullptr) const;
};

// Mapping network f: z -> w plus a synthesis stack where each layer applies
// an affine map to the running hidden state and injects the layer's style
// additively before the nonlinearity. A linear readout produces x.
class LayeredGenerator final : public Generator {
 public:
  struct Config {
    std::size_t code_dim = 8;
    std::size_t style_dim = 16;
    std::size_t hidden_dim = 32;
    std::size_t output_dim = 16;
    std::size_t layers = 4;
    std::vector<std::size_t> mapping_hidden = {32, 32};
    double sigma = 0.0;
  };

  LayeredGenerator(const Config& cfg, RngStream& rng);

  std::size_t code_dim() const override { return cfg_.code_dim; }
  std::size_t output_dim() const override { return cfg_.output_dim; }
  std::size_t num_layers() const override { return cfg_.layers; }
  double noise_sigma() const override { return cfg_.sigma; }
  const Config& config() const { return cfg_; }

  Tensor map_codes(const Tensor& z) const;  // n x style_dim
  Tensor synthesize(std::span<const Tensor> per_layer, bool are_styles,
                    const Tensor* noise) const override;
  ad::Value synthesize_codes_on_tape(ad::Tape& tape,
                                     std::span<const ad::Value> codes) const override;

  // Parameter leaves aligned with mutable_params(), for training the
  // generator itself (the attack path treats parameters as constants).
  struct TapeParams {
    std::vector<ad::Value> leaves;
  };
  TapeParams leaves_on_tape(ad::Tape& tape) const;
  ad::Value synthesize_with_params(const TapeParams& p, std::span<const ad::Value> codes) const;

  std::vector<ParamRef> mutable_params();
  std::vector<ParamCRef> params() const;

 private:
  Tensor synthesize_styles(std::span<const Tensor> styles, const Tensor* noise) const;

  Config cfg_;
  std::vector<DenseLayer> mapping_;
  std::vector<DenseLayer> state_;  // hidden -> hidden (layer 0: from zeros)
  std::vector<DenseLayer> style_;  // style_dim -> hidden
  DenseLayer readout_;
};

// x = A z + b + sigma eps with A full column rank; the analytic fixture with
// a closed-form Gaussian pushforward.
class LinearGaussianGenerator final : public Generator {
 public:
  LinearGaussianGenerator(Tensor a, std::vector<double> bias, double sigma);

  std::size_t code_dim() const override { return a_.cols(); }
  std::size_t output_dim() const override { return a_.rows(); }
  std::size_t num_layers() const override { return 1; }
  double noise_sigma() const override { return sigma_; }

  const Tensor& a() const { return a_; }
  const std::vector<double>& bias() const { return bias_; }

  // z ~ N(mean, cov)  =>  x ~ N(A mean + b, A cov A^T + sigma^2 I)
  linalg::GaussianMoments push_forward(const linalg::GaussianMoments& code_dist) const;

  Tensor synthesize(std::span<const Tensor> per_layer, bool are_styles,
                    const Tensor* noise) const override;
  ad::Value synthesize_codes_on_tape(ad::Tape& tape,
                                     std::span<const ad::Value> codes) const override;

  std::vector<ParamRef> mutable_params();
  std::vector<ParamCRef> params() const;

 private:
  Tensor a_;
  std::vector<double> bias_;
  double sigma_;
};

LinearGaussianGenerator make_linear_gaussian_generator(Tensor a, std::vector<double> bias,
                                                       double sigma);

// Dense tanh MLP with a single logit output.
class Discriminator {
 public:
  Discriminator(std::size_t input_dim, const std::vector<std::size_t>& hidden, RngStream& rng);
  explicit Discriminator(std::vector<DenseLayer> layers);
  static Discriminator constant(std::size_t input_dim);  // logit identically 0

  std::size_t input_dim() const { return layers_.front().in; }
  Tensor logit(const Tensor& x) const;  // n x 1
  ad::Value logit_on_tape(ad::Tape& tape, ad::Value x) const;

  std::vector<ParamRef> mutable_params();
  std::vector<ParamCRef> params() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
};

struct GanHyperparams {
  LayeredGenerator::Config generator;
  std::vector<std::size_t> disc_hidden = {64};
  int steps = 2000;
  std::size_t batch = 64;
  double lr_g = 1e-3;
  double lr_d = 2e-3;
};

struct GanResult {
  LayeredGenerator generator;
  Discriminator discriminator;
  std::vector<double> d_losses;
  std::vector<double> g_losses;
};

// Non-saturating GAN loop at desk scale; labels of the dataset are ignored.
// Throws with the step index if a loss goes non-finite.
GanResult train_gan(const LabeledDataset& aux, const GanHyperparams& hp, RngStream& rng);

}  // namespace vmi
