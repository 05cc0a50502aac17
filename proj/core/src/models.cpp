#include "vmi/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vmi/optim.hpp"
#include "vmi/rng.hpp"

namespace vmi {

namespace {

Tensor affine(const DenseLayer& l, const Tensor& x) {
  if (x.cols() != l.in) {
    throw std::invalid_argument("dense: input dim " + x.shape_string() + " for layer in=" +
                                std::to_string(l.in));
  }
  Tensor out = Tensor::zeros({x.rows(), l.out});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < l.out; ++j) out.at(r, j) = l.b[j];
    for (std::size_t i = 0; i < l.in; ++i) {
      double xv = x.at(r, i);
      if (xv == 0.0) continue;
      const double* wrow = &l.w[i * l.out];
      for (std::size_t j = 0; j < l.out; ++j) out.at(r, j) += xv * wrow[j];
    }
  }
  return out;
}

// Plain dense stack: tanh between layers, linear head. Optionally reports the
// activation entering the final layer.
Tensor dense_forward(std::span<const DenseLayer> layers, const Tensor& x,
                     Tensor* penultimate = nullptr) {
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    h = affine(layers[i], h);
    for (double& v : h.mutable_data()) v = std::tanh(v);
  }
  if (penultimate) *penultimate = h;
  return affine(layers.back(), h);
}

struct DenseTapeParams {
  std::vector<std::pair<ad::Value, ad::Value>> wb;
};

DenseTapeParams dense_leaves(ad::Tape& tape, std::span<const DenseLayer> layers,
                             const std::string& prefix) {
  DenseTapeParams p;
  p.wb.reserve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const DenseLayer& l = layers[i];
    p.wb.emplace_back(
        tape.leaf(Tensor::matrix(l.in, l.out, l.w), prefix + ".w" + std::to_string(i)),
        tape.leaf(Tensor::row(l.b), prefix + ".b" + std::to_string(i)));
  }
  return p;
}

ad::Value dense_apply(const DenseTapeParams& p, ad::Value x) {
  ad::Value h = x;
  for (std::size_t i = 0; i + 1 < p.wb.size(); ++i) {
    h = ad::tanh(ad::add(ad::matmul(h, p.wb[i].first), p.wb[i].second));
  }
  return ad::add(ad::matmul(h, p.wb.back().first), p.wb.back().second);
}

std::vector<ParamRef> dense_mutable_params(std::vector<DenseLayer>& layers,
                                           const std::string& prefix) {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back({prefix + ".w" + std::to_string(i), &layers[i].w});
    out.push_back({prefix + ".b" + std::to_string(i), &layers[i].b});
  }
  return out;
}

std::vector<ParamCRef> dense_params(const std::vector<DenseLayer>& layers,
                                    const std::string& prefix) {
  std::vector<ParamCRef> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back({prefix + ".w" + std::to_string(i), &layers[i].w});
    out.push_back({prefix + ".b" + std::to_string(i), &layers[i].b});
  }
  return out;
}

std::vector<DenseLayer> make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                                 std::size_t out, RngStream& rng) {
  std::vector<DenseLayer> layers;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    layers.push_back(DenseLayer::init(prev, h, rng));
    prev = h;
  }
  layers.push_back(DenseLayer::init(prev, out, rng));
  return layers;
}

std::vector<std::vector<double>> collect_grads(ad::Tape& tape, const DenseTapeParams& p) {
  std::vector<std::vector<double>> grads;
  grads.reserve(p.wb.size() * 2);
  for (const auto& [w, b] : p.wb) {
    const Tensor& gw = tape.grad(w);
    const Tensor& gb = tape.grad(b);
    grads.emplace_back(gw.data().begin(), gw.data().end());
    grads.emplace_back(gb.data().begin(), gb.data().end());
  }
  return grads;
}

double accuracy_of(const Classifier& c, const LabeledDataset& ds) {
  std::vector<int> pred = c.predict(ds.features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == ds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace

DenseLayer DenseLayer::init(std::size_t in, std::size_t out, RngStream& rng) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  l.w.resize(in * out);
  double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : l.w) v = s * rng.normal();
  l.b.assign(out, 0.0);
  return l;
}

DenseLayer DenseLayer::zeros(std::size_t in, std::size_t out) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  l.w.assign(in * out, 0.0);
  l.b.assign(out, 0.0);
  return l;
}

double LikelihoodModel::log_likelihood(const Tensor& x, int label) const {
  ad::Tape tape;
  ad::Value xv = tape.leaf(x, "x");
  ad::Value lp = log_likelihood_on_tape(tape, xv, label);
  return tape.value(ad::mean(lp)).value();
}

// ---------------------------------------------------------------------------
// Classifier

Classifier::Classifier(std::size_t input_dim, const std::vector<std::size_t>& hidden, int classes,
                       RngStream& rng) {
  if (classes < 2) throw std::invalid_argument("classifier: need at least 2 classes");
  layers_ = make_mlp(input_dim, hidden, static_cast<std::size_t>(classes), rng);
}

Classifier::Classifier(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("classifier: empty layer stack");
}

Tensor Classifier::logits(const Tensor& x) const { return dense_forward(layers_, x, nullptr); }

Tensor Classifier::classify(const Tensor& x) const {
  Tensor l = logits(x);
  for (std::size_t r = 0; r < l.rows(); ++r) {
    double mx = l.at(r, 0);
    for (std::size_t c = 1; c < l.cols(); ++c) mx = std::max(mx, l.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < l.cols(); ++c) z += std::exp(l.at(r, c) - mx);
    for (std::size_t c = 0; c < l.cols(); ++c) l.at(r, c) = std::exp(l.at(r, c) - mx) / z;
  }
  return l;
}

std::vector<int> Classifier::predict(const Tensor& x) const {
  Tensor l = logits(x);
  std::vector<int> out(l.rows());
  for (std::size_t r = 0; r < l.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < l.cols(); ++c) {
      if (l.at(r, c) > l.at(r, best)) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

Tensor Classifier::penultimate(const Tensor& x) const {
  Tensor features;
  dense_forward(layers_, x, &features);
  return features;
}

std::size_t Classifier::penultimate_dim() const {
  return layers_.size() > 1 ? layers_[layers_.size() - 2].out : layers_.front().in;
}

ad::Value Classifier::logits_on_tape(ad::Tape& tape, ad::Value x) const {
  return dense_apply(dense_leaves(tape, layers_, "classifier"), x);
}

ad::Value Classifier::log_likelihood_on_tape(ad::Tape& tape, ad::Value x, int label) const {
  if (label < 0 || label >= num_classes()) {
    throw std::invalid_argument("classifier: label " + std::to_string(label) + " out of range");
  }
  ad::Value l = logits_on_tape(tape, x);
  std::size_t n = tape.value(l).rows();
  return ad::softmax_log_prob(l, std::vector<int>(n, label));
}

std::vector<ParamRef> Classifier::mutable_params() {
  return dense_mutable_params(layers_, "classifier");
}

std::vector<ParamCRef> Classifier::params() const { return dense_params(layers_, "classifier"); }

Classifier train_classifier(const LabeledDataset& train, const LabeledDataset* validation,
                            const ClassifierHyperparams& hp, RngStream& rng, TrainCurve* curve) {
  train.validate();
  int distinct = 0;
  std::vector<bool> seen(train.num_classes, false);
  for (int y : train.labels) {
    if (!seen[y]) {
      seen[y] = true;
      ++distinct;
    }
  }
  if (distinct < 2) throw std::invalid_argument("train_classifier: degenerate labels");

  RngStream init_rng = rng.split("classifier-init");
  Classifier model(train.dim(), hp.hidden, train.num_classes, init_rng);
  if (hp.epochs <= 0) {
    if (curve) {
      curve->train_accuracy = accuracy_of(model, train);
      if (validation) curve->val_accuracy = accuracy_of(model, *validation);
    }
    return model;
  }

  OptimizerConfig oc;
  oc.kind = OptimizerConfig::Kind::sgd;
  oc.lr = hp.lr;
  oc.momentum = hp.momentum;
  Optimizer opt(oc, model.mutable_params());

  RngStream shuffle_rng = rng.split("classifier-shuffle");
  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng.next_u64() % (i + 1));
      std::swap(order[i], order[j]);
    }
    double epoch_nll = 0.0;
    for (std::size_t start = 0; start < n; start += hp.batch) {
      std::size_t stop = std::min(n, start + hp.batch);
      Tensor xb = Tensor::zeros({stop - start, train.dim()});
      std::vector<int> yb(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        for (std::size_t c = 0; c < train.dim(); ++c) {
          xb.at(i - start, c) = train.features.at(order[i], c);
        }
        yb[i - start] = train.labels[order[i]];
      }
      ad::Tape tape;
      DenseTapeParams p = dense_leaves(tape, model.layers(), "classifier");
      ad::Value x = tape.leaf(std::move(xb), "batch");
      ad::Value lp = ad::softmax_log_prob(dense_apply(p, x), yb);
      ad::Value loss = ad::scale(ad::mean(lp), -1.0);
      tape.backward(loss);
      epoch_nll += tape.value(loss).value() * static_cast<double>(stop - start);
      opt.step(collect_grads(tape, p));
    }
    if (curve) curve->epoch_loss.push_back(epoch_nll / static_cast<double>(n));
  }
  if (curve) {
    curve->train_accuracy = accuracy_of(model, train);
    if (validation) curve->val_accuracy = accuracy_of(model, *validation);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Generators

Tensor Generator::generate(const Tensor& codes, const Tensor* noise) const {
  std::vector<Tensor> per_layer(num_layers(), codes);
  return synthesize(per_layer, /*are_styles=*/false, noise);
}

LayeredGenerator::LayeredGenerator(const Config& cfg, RngStream& rng) : cfg_(cfg) {
  if (cfg_.layers < 1) throw std::invalid_argument("layered generator: layers must be >= 1");
  mapping_ = make_mlp(cfg_.code_dim, cfg_.mapping_hidden, cfg_.style_dim, rng);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    state_.push_back(DenseLayer::init(cfg_.hidden_dim, cfg_.hidden_dim, rng));
    style_.push_back(DenseLayer::init(cfg_.style_dim, cfg_.hidden_dim, rng));
  }
  readout_ = DenseLayer::init(cfg_.hidden_dim, cfg_.output_dim, rng);
}

Tensor LayeredGenerator::map_codes(const Tensor& z) const {
  Tensor out = dense_forward(mapping_, z, nullptr);
  for (double& v : out.mutable_data()) v = std::tanh(v);
  return out;
}

Tensor LayeredGenerator::synthesize_styles(std::span<const Tensor> styles,
                                           const Tensor* noise) const {
  const std::size_t n = styles[0].rows();
  Tensor h = Tensor::zeros({n, cfg_.hidden_dim});
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    Tensor pre = affine(state_[l], h);
    Tensor inj = affine(style_[l], styles[l]);
    for (std::size_t i = 0; i < pre.numel(); ++i) {
      pre.mutable_data()[i] = std::tanh(pre.data()[i] + inj.data()[i]);
    }
    h = std::move(pre);
  }
  Tensor x = affine(readout_, h);
  if (noise && cfg_.sigma > 0.0) {
    if (!noise->same_shape(x)) {
      throw std::invalid_argument("synthesize: noise shape " + noise->shape_string());
    }
    for (std::size_t i = 0; i < x.numel(); ++i) {
      x.mutable_data()[i] += cfg_.sigma * noise->data()[i];
    }
  }
  return x;
}

Tensor LayeredGenerator::synthesize(std::span<const Tensor> per_layer, bool are_styles,
                                    const Tensor* noise) const {
  if (per_layer.size() != cfg_.layers) {
    throw std::invalid_argument("synthesize: expected " + std::to_string(cfg_.layers) +
                                " per-layer vectors, got " + std::to_string(per_layer.size()));
  }
  if (are_styles) return synthesize_styles(per_layer, noise);
  std::vector<Tensor> styles;
  styles.reserve(cfg_.layers);
  for (const Tensor& z : per_layer) styles.push_back(map_codes(z));
  return synthesize_styles(styles, noise);
}

LayeredGenerator::TapeParams LayeredGenerator::leaves_on_tape(ad::Tape& tape) const {
  TapeParams p;
  for (std::size_t i = 0; i < mapping_.size(); ++i) {
    const DenseLayer& l = mapping_[i];
    std::string tag = "generator.mapping" + std::to_string(i);
    p.leaves.push_back(tape.leaf(Tensor::matrix(l.in, l.out, l.w), tag + ".w"));
    p.leaves.push_back(tape.leaf(Tensor::row(l.b), tag + ".b"));
  }
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    std::string tag = "generator.layer" + std::to_string(l);
    p.leaves.push_back(tape.leaf(Tensor::matrix(state_[l].in, state_[l].out, state_[l].w), tag + ".sw"));
    p.leaves.push_back(tape.leaf(Tensor::row(state_[l].b), tag + ".sb"));
    p.leaves.push_back(tape.leaf(Tensor::matrix(style_[l].in, style_[l].out, style_[l].w), tag + ".uw"));
    p.leaves.push_back(tape.leaf(Tensor::row(style_[l].b), tag + ".ub"));
  }
  p.leaves.push_back(tape.leaf(Tensor::matrix(readout_.in, readout_.out, readout_.w), "generator.rw"));
  p.leaves.push_back(tape.leaf(Tensor::row(readout_.b), "generator.rb"));
  return p;
}

ad::Value LayeredGenerator::synthesize_with_params(const TapeParams& p,
                                                   std::span<const ad::Value> codes) const {
  if (codes.size() != cfg_.layers) {
    throw std::invalid_argument("synthesize: expected " + std::to_string(cfg_.layers) +
                                " per-layer code values");
  }
  ad::Tape& tape = *codes[0].tape;
  DenseTapeParams map_p;
  for (std::size_t i = 0; i < mapping_.size(); ++i) {
    map_p.wb.emplace_back(p.leaves[2 * i], p.leaves[2 * i + 1]);
  }
  std::size_t off = 2 * mapping_.size();
  const std::size_t n = tape.value(codes[0]).rows();
  ad::Value h = tape.leaf(Tensor::zeros({n, cfg_.hidden_dim}), "generator.h0");
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    ad::Value w = ad::tanh(dense_apply(map_p, codes[l]));
    ad::Value ws = p.leaves[off + 4 * l];
    ad::Value bs = p.leaves[off + 4 * l + 1];
    ad::Value wu = p.leaves[off + 4 * l + 2];
    ad::Value bu = p.leaves[off + 4 * l + 3];
    ad::Value pre = ad::add(ad::add(ad::matmul(h, ws), bs), ad::add(ad::matmul(w, wu), bu));
    h = ad::tanh(pre);
  }
  ad::Value wr = p.leaves[off + 4 * cfg_.layers];
  ad::Value br = p.leaves[off + 4 * cfg_.layers + 1];
  return ad::add(ad::matmul(h, wr), br);
}

ad::Value LayeredGenerator::synthesize_codes_on_tape(ad::Tape& tape,
                                                     std::span<const ad::Value> codes) const {
  return synthesize_with_params(leaves_on_tape(tape), codes);
}

std::vector<ParamRef> LayeredGenerator::mutable_params() {
  std::vector<ParamRef> out = dense_mutable_params(mapping_, "mapping");
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    std::string tag = "layer" + std::to_string(l);
    out.push_back({tag + ".state.w", &state_[l].w});
    out.push_back({tag + ".state.b", &state_[l].b});
    out.push_back({tag + ".style.w", &style_[l].w});
    out.push_back({tag + ".style.b", &style_[l].b});
  }
  out.push_back({"readout.w", &readout_.w});
  out.push_back({"readout.b", &readout_.b});
  return out;
}

std::vector<ParamCRef> LayeredGenerator::params() const {
  std::vector<ParamCRef> out = dense_params(mapping_, "mapping");
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    std::string tag = "layer" + std::to_string(l);
    out.push_back({tag + ".state.w", &state_[l].w});
    out.push_back({tag + ".state.b", &state_[l].b});
    out.push_back({tag + ".style.w", &style_[l].w});
    out.push_back({tag + ".style.b", &style_[l].b});
  }
  out.push_back({"readout.w", &readout_.w});
  out.push_back({"readout.b", &readout_.b});
  return out;
}

LinearGaussianGenerator::LinearGaussianGenerator(Tensor a, std::vector<double> bias, double sigma)
    : a_(std::move(a)), bias_(std::move(bias)), sigma_(sigma) {
  if (a_.ndim() != 2) throw std::invalid_argument("linear generator: A must be a matrix");
  if (a_.rows() < a_.cols()) {
    throw std::invalid_argument("linear generator: need k <= d (A is d x k)");
  }
  if (bias_.size() != a_.rows()) throw std::invalid_argument("linear generator: bias size");
  if (sigma_ < 0.0) throw std::invalid_argument("linear generator: sigma must be >= 0");
  if (linalg::smallest_singular_value(a_) <= 1e-8) {
    throw std::invalid_argument("linear generator: rank-deficient A");
  }
}

LinearGaussianGenerator make_linear_gaussian_generator(Tensor a, std::vector<double> bias,
                                                       double sigma) {
  return LinearGaussianGenerator(std::move(a), std::move(bias), sigma);
}

linalg::GaussianMoments LinearGaussianGenerator::push_forward(
    const linalg::GaussianMoments& code_dist) const {
  const std::size_t d = output_dim();
  Tensor mean = Tensor::zeros({1, d});
  for (std::size_t i = 0; i < d; ++i) {
    double acc = bias_[i];
    for (std::size_t k = 0; k < code_dim(); ++k) acc += a_.at(i, k) * code_dist.mean.at(0, k);
    mean.at(0, i) = acc;
  }
  Tensor cov = linalg::matmul(linalg::matmul(a_, code_dist.cov), linalg::transpose(a_));
  for (std::size_t i = 0; i < d; ++i) cov.at(i, i) += sigma_ * sigma_;
  return {std::move(mean), std::move(cov)};
}

Tensor LinearGaussianGenerator::synthesize(std::span<const Tensor> per_layer, bool /*are_styles*/,
                                           const Tensor* noise) const {
  if (per_layer.size() != 1) {
    throw std::invalid_argument("synthesize: linear generator has exactly one layer");
  }
  const Tensor& z = per_layer[0];
  if (z.cols() != code_dim()) {
    throw std::invalid_argument("synthesize: code dim " + z.shape_string());
  }
  Tensor x = Tensor::zeros({z.rows(), output_dim()});
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t i = 0; i < output_dim(); ++i) {
      double acc = bias_[i];
      for (std::size_t k = 0; k < code_dim(); ++k) acc += a_.at(i, k) * z.at(r, k);
      x.at(r, i) = acc;
    }
  }
  if (noise && sigma_ > 0.0) {
    if (!noise->same_shape(x)) {
      throw std::invalid_argument("synthesize: noise shape " + noise->shape_string());
    }
    for (std::size_t i = 0; i < x.numel(); ++i) x.mutable_data()[i] += sigma_ * noise->data()[i];
  }
  return x;
}

ad::Value LinearGaussianGenerator::synthesize_codes_on_tape(
    ad::Tape& tape, std::span<const ad::Value> codes) const {
  if (codes.size() != 1) {
    throw std::invalid_argument("synthesize: linear generator has exactly one layer");
  }
  ad::Value at = tape.leaf(linalg::transpose(a_), "generator.at");
  ad::Value b = tape.leaf(Tensor::row(bias_), "generator.b");
  return ad::add(ad::matmul(codes[0], at), b);
}

std::vector<ParamRef> LinearGaussianGenerator::mutable_params() {
  // A is stored as a Tensor; expose the bias only. The matrix is fixed at
  // construction (it defines the manifold under test).
  return {{"bias", &bias_}};
}

std::vector<ParamCRef> LinearGaussianGenerator::params() const { return {{"bias", &bias_}}; }

// ---------------------------------------------------------------------------
// Discriminator and GAN training

Discriminator::Discriminator(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                             RngStream& rng) {
  layers_ = make_mlp(input_dim, hidden, 1, rng);
}

Discriminator::Discriminator(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty() || layers_.back().out != 1) {
    throw std::invalid_argument("discriminator: expected single-logit head");
  }
}

Discriminator Discriminator::constant(std::size_t input_dim) {
  return Discriminator({DenseLayer::zeros(input_dim, 1)});
}

Tensor Discriminator::logit(const Tensor& x) const { return dense_forward(layers_, x, nullptr); }

ad::Value Discriminator::logit_on_tape(ad::Tape& tape, ad::Value x) const {
  return dense_apply(dense_leaves(tape, layers_, "discriminator"), x);
}

std::vector<ParamRef> Discriminator::mutable_params() {
  return dense_mutable_params(layers_, "discriminator");
}

std::vector<ParamCRef> Discriminator::params() const {
  return dense_params(layers_, "discriminator");
}

GanResult train_gan(const LabeledDataset& aux, const GanHyperparams& hp, RngStream& rng) {
  aux.validate();
  LayeredGenerator::Config gc = hp.generator;
  gc.output_dim = aux.dim();

  RngStream g_init = rng.split("gan-generator-init");
  RngStream d_init = rng.split("gan-discriminator-init");
  RngStream loop_rng = rng.split("gan-loop");

  GanResult result{LayeredGenerator(gc, g_init),
                   Discriminator(aux.dim(), hp.disc_hidden, d_init),
                   {},
                   {}};
  LayeredGenerator& gen = result.generator;
  Discriminator& disc = result.discriminator;

  OptimizerConfig oc_g;
  oc_g.lr = hp.lr_g;
  OptimizerConfig oc_d;
  oc_d.lr = hp.lr_d;
  Optimizer opt_g(oc_g, gen.mutable_params());
  Optimizer opt_d(oc_d, disc.mutable_params());

  const std::size_t n = aux.size();
  auto sample_real = [&](std::size_t count) {
    Tensor xb = Tensor::zeros({count, aux.dim()});
    for (std::size_t r = 0; r < count; ++r) {
      std::size_t idx = static_cast<std::size_t>(loop_rng.next_u64() % n);
      for (std::size_t c = 0; c < aux.dim(); ++c) xb.at(r, c) = aux.features.at(idx, c);
    }
    return xb;
  };

  for (int step = 0; step < hp.steps; ++step) {
    try {
      // Discriminator step; generator samples are constants here.
      {
        Tensor x_real = sample_real(hp.batch);
        Tensor z = Tensor::randn({hp.batch, gc.code_dim}, loop_rng);
        Tensor x_fake = gen.generate(z);
        ad::Tape tape;
        DenseTapeParams dp = dense_leaves(tape, disc.layers(), "discriminator");
        ad::Value real_logit = dense_apply(dp, tape.leaf(std::move(x_real), "x-real"));
        ad::Value fake_logit = dense_apply(dp, tape.leaf(std::move(x_fake), "x-fake"));
        ad::Value loss = ad::scale(
            ad::add(ad::mean(log_sigmoid(real_logit)), ad::mean(log_sigmoid(ad::neg(fake_logit)))),
            -1.0);
        tape.backward(loss);
        result.d_losses.push_back(tape.value(loss).value());
        opt_d.step(collect_grads(tape, dp));
      }
      // Generator step: non-saturating loss, discriminator held fixed.
      {
        Tensor z = Tensor::randn({hp.batch, gc.code_dim}, loop_rng);
        ad::Tape tape;
        LayeredGenerator::TapeParams gp = gen.leaves_on_tape(tape);
        ad::Value zv = tape.leaf(std::move(z), "z");
        std::vector<ad::Value> codes(gc.layers, zv);
        ad::Value x_fake = gen.synthesize_with_params(gp, codes);
        ad::Value fake_logit = disc.logit_on_tape(tape, x_fake);
        ad::Value loss = ad::neg(ad::mean(log_sigmoid(fake_logit)));
        tape.backward(loss);
        result.g_losses.push_back(tape.value(loss).value());
        std::vector<std::vector<double>> grads;
        grads.reserve(gp.leaves.size());
        for (ad::Value leaf : gp.leaves) {
          const Tensor& g = tape.grad(leaf);
          grads.emplace_back(g.data().begin(), g.data().end());
        }
        opt_g.step(grads);
      }
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("train_gan: diverged at step " + std::to_string(step) + ": " +
                               e.what());
    }
  }
  return result;
}

}  // namespace vmi
