#include "vmi/attacks.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vmi/rng.hpp"

namespace vmi {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// One layer of the objective under construction: tape handles for the code
// sample, the (gamma-unweighted) KL expression, and plain-valued diagnostics.
struct LayerBuild {
  ad::Value codes;
  ad::Value kl;
  double plain_kl = 0.0;
  double plain_entropy = 0.0;
  std::vector<ad::Value> param_leaves;  // aligned with family mutable_params()
};

LayerBuild build_layer(ad::Tape& tape, const Family& family, std::size_t n_mc, RngStream& rng) {
  LayerBuild out;
  if (const auto* g = std::get_if<GaussianFamily>(&family)) {
    Tensor eps = Tensor::randn({n_mc, g->dim()}, rng);
    GaussianFamily::TapeParams p = g->leaves_on_tape(tape);
    out.param_leaves = {p.mean, p.log_std};
    out.codes = GaussianFamily::sample_on_tape(p, tape.leaf(std::move(eps), "eps"));
    out.kl = GaussianFamily::kl_on_tape(tape, p);
    out.plain_kl = g->kl_to_standard_normal();
    out.plain_entropy = g->entropy();
    return out;
  }
  const auto& flow = std::get<CouplingFlow>(family);
  Tensor base = Tensor::randn({n_mc, flow.dim()}, rng);
  std::vector<double> base_lp = standard_normal_batch_log_density(base);
  double mean_base_lp = 0.0;
  for (double lp : base_lp) mean_base_lp += lp;
  mean_base_lp /= static_cast<double>(n_mc);

  CouplingFlow::TapeParams p = flow.leaves_on_tape(tape);
  for (const auto& block : p.blocks) {
    for (ad::Value v : block) out.param_leaves.push_back(v);
  }
  out.codes = flow.forward_on_tape(p, tape.leaf(base, "flow-base"));

  // KL(q || N) = E[log N(z0)] - E[log N(f(z0))] for a volume-preserving
  // flow; the normalizer constants cancel, leaving the sum-of-squares term.
  ad::Value row_ss = ad::sum(ad::mul(out.codes, out.codes), 1);
  ad::Value half_mean_ss = ad::scale(ad::mean(row_ss), 0.5);
  double d = static_cast<double>(flow.dim());
  ad::Value shift = tape.leaf(Tensor::scalar(mean_base_lp + 0.5 * kLog2Pi * d), "kl-shift");
  out.kl = ad::add(half_mean_ss, shift);

  std::vector<double> code_lp = standard_normal_batch_log_density(tape.value(out.codes));
  double mean_kl = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) mean_kl += base_lp[i] - code_lp[i];
  out.plain_kl = mean_kl / static_cast<double>(n_mc);
  out.plain_entropy = -mean_base_lp;
  return out;
}

std::vector<std::vector<double>> collect_param_grads(ad::Tape& tape,
                                                     std::span<const LayerBuild> layers) {
  std::vector<std::vector<double>> grads;
  for (const LayerBuild& l : layers) {
    for (ad::Value v : l.param_leaves) {
      const Tensor& g = tape.grad(v);
      grads.emplace_back(g.data().begin(), g.data().end());
    }
  }
  return grads;
}

LossBreakdown finish_loss(ad::Tape& tape, std::span<const LayerBuild> layers,
                          const Generator& gen, const LikelihoodModel& lik, int target_class,
                          double gamma, double kl_weight_per_layer,
                          std::vector<std::vector<double>>* grads) {
  std::vector<ad::Value> codes;
  codes.reserve(gen.num_layers());
  if (layers.size() == 1 && gen.num_layers() > 1) {
    for (std::size_t l = 0; l < gen.num_layers(); ++l) codes.push_back(layers[0].codes);
  } else {
    for (const LayerBuild& l : layers) codes.push_back(l.codes);
  }
  ad::Value x = gen.synthesize_codes_on_tape(tape, codes);
  ad::Value nll = ad::neg(ad::mean(lik.log_likelihood_on_tape(tape, x, target_class)));

  ad::Value kl_sum = layers[0].kl;
  for (std::size_t l = 1; l < layers.size(); ++l) kl_sum = ad::add(kl_sum, layers[l].kl);
  ad::Value total = ad::add(nll, ad::scale(kl_sum, gamma * kl_weight_per_layer));
  tape.backward(total);
  if (grads) *grads = collect_param_grads(tape, layers);

  LossBreakdown out;
  out.nll = tape.value(nll).value();
  double plain_kl_sum = 0.0;
  for (const LayerBuild& l : layers) plain_kl_sum += l.plain_kl;
  out.kl = gamma * kl_weight_per_layer * plain_kl_sum;
  out.total = out.nll + out.kl;
  return out;
}

void check_dims(const Family& family, const Generator& gen, const LikelihoodModel& lik) {
  if (family_dim(family) != gen.code_dim()) {
    throw std::invalid_argument("vmi_loss: family dim " + std::to_string(family_dim(family)) +
                                " != generator code dim " + std::to_string(gen.code_dim()));
  }
  if (gen.output_dim() != lik.input_dim()) {
    throw std::invalid_argument("vmi_loss: generator output dim " +
                                std::to_string(gen.output_dim()) + " != model input dim " +
                                std::to_string(lik.input_dim()));
  }
}

Family make_family(const AttackConfig& cfg, FamilyKind kind, std::size_t dim, RngStream& rng) {
  if (kind == FamilyKind::gaussian) return GaussianFamily(dim);
  return CouplingFlow::make(dim, cfg.flow_blocks, cfg.flow_hidden, rng);
}

std::vector<ParamRef> family_params(Family& f) {
  return std::visit([](auto& fam) { return fam.mutable_params(); }, f);
}

// Single point-estimate descent loop shared by the general/generative MI attacks.
// `build` returns the scalar objective for a 1 x d leaf.
PointAttackResult descend(const Tensor& init, int steps, double lr, bool ascent,
                          const std::function<ad::Value(ad::Tape&, ad::Value)>& build,
                          const char* who) {
  if (steps < 0) throw std::invalid_argument(std::string(who) + ": steps must be >= 0");
  if (init.ndim() != 2 || init.rows() != 1) {
    throw std::invalid_argument(std::string(who) + ": init must be a 1 x d row");
  }
  PointAttackResult result;
  result.point = init;
  result.trace.reserve(steps + 1);
  for (int step = 0; step <= steps; ++step) {
    try {
      ad::Tape tape;
      ad::Value x = tape.leaf(result.point, "point");
      ad::Value obj = build(tape, x);
      result.trace.push_back(tape.value(obj).value());
      if (step == steps) break;
      tape.backward(obj);
      const Tensor& g = tape.grad(x);
      double sign = ascent ? 1.0 : -1.0;
      for (std::size_t i = 0; i < result.point.numel(); ++i) {
        result.point.mutable_data()[i] += sign * lr * g.data()[i];
      }
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(who) + ": non-finite objective at step " +
                               std::to_string(step) + ": " + e.what());
    }
  }
  return result;
}

}  // namespace

FamilyKind family_kind_from_string(const std::string& s) {
  if (s == "gaussian") return FamilyKind::gaussian;
  if (s == "flow") return FamilyKind::flow;
  if (s == "layered") return FamilyKind::layered;
  throw std::invalid_argument("unknown family kind '" + s + "'");
}

const char* family_kind_to_string(FamilyKind k) {
  switch (k) {
    case FamilyKind::gaussian: return "gaussian";
    case FamilyKind::flow: return "flow";
    case FamilyKind::layered: return "layered";
  }
  return "?";
}

void AttackConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw std::invalid_argument("attack config: gamma must be finite and >= 0");
  }
  if (steps < 0) throw std::invalid_argument("attack config: steps must be >= 0");
  if (n_mc < 1) throw std::invalid_argument("attack config: n_mc must be >= 1");
  if (restarts < 0) throw std::invalid_argument("attack config: restarts must be >= 0");
  if (family == FamilyKind::layered && layer_family == FamilyKind::layered) {
    throw std::invalid_argument("attack config: layer_family must be gaussian or flow");
  }
}

LossBreakdown vmi_loss(const Family& family, const Generator& gen, const LikelihoodModel& lik,
                       int target_class, double gamma, std::size_t n_mc, RngStream& rng,
                       std::vector<std::vector<double>>* grads) {
  check_dims(family, gen, lik);
  if (n_mc < 1) throw std::invalid_argument("vmi_loss: n_mc must be >= 1");
  ad::Tape tape;
  LayerBuild layer = build_layer(tape, family, n_mc, rng);
  return finish_loss(tape, std::span(&layer, 1), gen, lik, target_class, gamma,
                     /*kl_weight_per_layer=*/1.0, grads);
}

LossBreakdown svmi_loss(const LayeredVariational& family, const Generator& gen,
                        const LikelihoodModel& lik, int target_class, double gamma,
                        std::size_t n_mc, RngStream& rng,
                        std::vector<std::vector<double>>* grads,
                        std::vector<double>* per_layer_kl, std::vector<double>* per_layer_entropy) {
  if (family.num_layers() != gen.num_layers()) {
    throw std::invalid_argument("svmi_loss: family has " + std::to_string(family.num_layers()) +
                                " layers, generator has " + std::to_string(gen.num_layers()));
  }
  for (const Family& f : family.layers) check_dims(f, gen, lik);
  if (n_mc < 1) throw std::invalid_argument("svmi_loss: n_mc must be >= 1");

  ad::Tape tape;
  std::vector<LayerBuild> layers;
  layers.reserve(family.num_layers());
  for (const Family& f : family.layers) layers.push_back(build_layer(tape, f, n_mc, rng));

  if (per_layer_kl) {
    per_layer_kl->clear();
    for (const LayerBuild& l : layers) per_layer_kl->push_back(l.plain_kl);
  }
  if (per_layer_entropy) {
    per_layer_entropy->clear();
    for (const LayerBuild& l : layers) per_layer_entropy->push_back(l.plain_entropy);
  }
  return finish_loss(tape, layers, gen, lik, target_class, gamma,
                     1.0 / static_cast<double>(family.num_layers()), grads);
}

AttackResult run_attack(const AttackConfig& cfg, const Generator& gen, const LikelihoodModel& lik) {
  cfg.validate();
  if (cfg.target_class < 0 || cfg.target_class >= lik.num_classes()) {
    throw std::invalid_argument("run_attack: target class " + std::to_string(cfg.target_class) +
                                " outside [0, " + std::to_string(lik.num_classes()) + ")");
  }

  RngStream root(cfg.seed);
  auto one_run = [&](std::uint64_t restart_index) {
    RngStream run_rng = root.split("attack-restart", restart_index);
    RngStream init_rng = run_rng.split("family-init");
    RngStream eps_rng = run_rng.split("mc-samples");

    AttackResult result;
    const std::size_t layer_count =
        cfg.family == FamilyKind::layered ? gen.num_layers() : std::size_t{1};
    FamilyKind layer_kind = cfg.family == FamilyKind::layered ? cfg.layer_family : cfg.family;
    for (std::size_t l = 0; l < layer_count; ++l) {
      result.family.layers.push_back(make_family(cfg, layer_kind, gen.code_dim(), init_rng));
    }
    const bool layered = cfg.family == FamilyKind::layered;

    std::vector<ParamRef> params;
    for (Family& f : result.family.layers) {
      for (ParamRef p : family_params(f)) params.push_back(p);
    }
    OptimizerConfig oc = cfg.optimizer;
    oc.total_steps = cfg.steps;
    Optimizer opt(oc, params);

    auto evaluate = [&](std::vector<std::vector<double>>* grads, std::vector<double>* pk,
                        std::vector<double>* pe) {
      if (layered) {
        return svmi_loss(result.family, gen, lik, cfg.target_class, cfg.gamma, cfg.n_mc, eps_rng,
                         grads, pk, pe);
      }
      LossBreakdown lb = vmi_loss(result.family.layers[0], gen, lik, cfg.target_class, cfg.gamma,
                                  cfg.n_mc, eps_rng, grads);
      if (pk || pe) {
        LayerBuild scratch;  // diagnostics for the single-family case
        ad::Tape tape;
        RngStream diag_rng = run_rng.split("diagnostics");
        scratch = build_layer(tape, result.family.layers[0], cfg.n_mc, diag_rng);
        if (pk) *pk = {scratch.plain_kl};
        if (pe) *pe = {scratch.plain_entropy};
      }
      return lb;
    };

    for (int step = 0; step < cfg.steps; ++step) {
      std::vector<std::vector<double>> grads;
      LossBreakdown lb;
      try {
        lb = evaluate(&grads, nullptr, nullptr);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("run_attack: aborted at step " + std::to_string(step) + ": " +
                                 e.what());
      }
      result.trace.push_back({lb.nll, lb.kl, lb.total});
      opt.step(grads);
    }
    LossBreakdown final_lb = evaluate(nullptr, &result.per_layer_kl, &result.per_layer_entropy);
    result.trace.push_back({final_lb.nll, final_lb.kl, final_lb.total});
    result.final_loss = final_lb.total;
    return result;
  };

  AttackResult best = one_run(0);
  for (int r = 1; r <= cfg.restarts; ++r) {
    AttackResult candidate = one_run(static_cast<std::uint64_t>(r));
    if (candidate.final_loss < best.final_loss) best = std::move(candidate);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Conjugate quadratic task and analytic posterior

QuadraticLogitTask::QuadraticLogitTask(std::vector<ClassTerm> classes)
    : classes_(std::move(classes)) {
  if (classes_.empty()) throw std::invalid_argument("quadratic task: no classes");
  const std::size_t k = classes_.front().b.size();
  for (const ClassTerm& t : classes_) {
    if (t.h.ndim() != 2 || t.h.rows() != k || t.h.cols() != k || t.b.size() != k) {
      throw std::invalid_argument("quadratic task: inconsistent dimensions");
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (std::abs(t.h.at(i, j) - t.h.at(j, i)) > 1e-12) {
          throw std::invalid_argument("quadratic task: H must be symmetric");
        }
      }
    }
    Tensor values, vectors;
    linalg::eigh(t.h, values, vectors);
    if (values.at(0, 0) < -1e-10) {
      throw std::invalid_argument("quadratic task: H must be PSD (min eigenvalue " +
                                  std::to_string(values.at(0, 0)) + ")");
    }
  }
  // The tape path must agree with direct arithmetic pointwise.
  RngStream probe_rng(0x9d2c5680u);
  for (int trial = 0; trial < 100; ++trial) {
    int y = static_cast<int>(probe_rng.next_u64() % classes_.size());
    std::vector<double> z(k);
    for (double& v : z) v = probe_rng.normal();
    ad::Tape tape;
    ad::Value x = tape.leaf(Tensor::row(z), "probe");
    double on_tape = tape.value(log_likelihood_on_tape(tape, x, y)).value();
    double direct = log_likelihood_direct(y, z);
    if (std::abs(on_tape - direct) >= 1e-8) {
      throw std::runtime_error("quadratic task: tape/direct mismatch " +
                               std::to_string(on_tape - direct));
    }
  }
}

QuadraticLogitTask QuadraticLogitTask::random(std::size_t dim, int classes, RngStream& rng) {
  std::vector<ClassTerm> terms;
  terms.reserve(classes);
  for (int c = 0; c < classes; ++c) {
    Tensor m = Tensor::randn({dim, dim}, rng);
    Tensor h = linalg::scale(linalg::matmul(linalg::transpose(m), m),
                             1.0 / static_cast<double>(dim));
    // Force exact symmetry after the float products.
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = i + 1; j < dim; ++j) {
        double s = 0.5 * (h.at(i, j) + h.at(j, i));
        h.at(i, j) = s;
        h.at(j, i) = s;
      }
    }
    ClassTerm t;
    t.h = std::move(h);
    t.b.resize(dim);
    for (double& v : t.b) v = rng.normal();
    t.c = rng.normal();
    terms.push_back(std::move(t));
  }
  return QuadraticLogitTask(std::move(terms));
}

const QuadraticLogitTask::ClassTerm& QuadraticLogitTask::term(int y) const {
  if (y < 0 || y >= num_classes()) {
    throw std::invalid_argument("quadratic task: class " + std::to_string(y) + " out of range");
  }
  return classes_[static_cast<std::size_t>(y)];
}

double QuadraticLogitTask::log_likelihood_direct(int y, std::span<const double> z) const {
  const ClassTerm& t = term(y);
  const std::size_t k = input_dim();
  if (z.size() != k) throw std::invalid_argument("quadratic task: dim mismatch");
  double quad = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += t.h.at(i, j) * z[j];
    quad += z[i] * acc;
  }
  double lin = 0.0;
  for (std::size_t i = 0; i < k; ++i) lin += t.b[i] * z[i];
  return -0.5 * quad + lin + t.c;
}

ad::Value QuadraticLogitTask::log_likelihood_on_tape(ad::Tape& tape, ad::Value x, int label) const {
  const ClassTerm& t = term(label);
  ad::Value h = tape.leaf(t.h, "quad.h");
  ad::Value b = tape.leaf(Tensor::column(t.b), "quad.b");
  ad::Value c = tape.leaf(Tensor::scalar(t.c), "quad.c");
  ad::Value quad = ad::sum(ad::mul(x, ad::matmul(x, h)), 1);      // n x 1
  ad::Value lin = ad::matmul(x, b);                               // n x 1
  return ad::add(ad::add(ad::scale(quad, -0.5), lin), c);
}

linalg::GaussianMoments analytic_power_posterior(const QuadraticLogitTask& task, int target_class,
                                                 double gamma) {
  if (!(gamma > 0.0)) {
    throw std::invalid_argument(
        "analytic_power_posterior: gamma = 0 is the point-estimate regime, no density");
  }
  const QuadraticLogitTask::ClassTerm& t = task.term(target_class);
  const std::size_t k = task.input_dim();
  Tensor precision = t.h;
  for (std::size_t i = 0; i < k * k; ++i) precision.mutable_data()[i] /= gamma;
  for (std::size_t i = 0; i < k; ++i) precision.at(i, i) += 1.0;
  Tensor l = linalg::cholesky(precision);
  Tensor cov = linalg::cholesky_solve(l, Tensor::identity(k));
  Tensor rhs = Tensor::zeros({k, 1});
  for (std::size_t i = 0; i < k; ++i) rhs.at(i, 0) = t.b[i] / gamma;
  Tensor mean_col = linalg::cholesky_solve(l, rhs);
  Tensor mean = Tensor::zeros({1, k});
  for (std::size_t i = 0; i < k; ++i) mean.at(0, i) = mean_col.at(i, 0);
  return {std::move(mean), std::move(cov)};
}

// ---------------------------------------------------------------------------
// Point-estimate baselines

PointAttackResult general_mi(const LikelihoodModel& lik, int target_class, const Tensor& x_init,
                             int steps, double lr) {
  PointAttackResult r = descend(
      x_init, steps, lr, /*ascent=*/true,
      [&](ad::Tape& tape, ad::Value x) {
        return ad::mean(lik.log_likelihood_on_tape(tape, x, target_class));
      },
      "general_mi");
  if (!r.trace.empty() &&
      r.trace.back() < r.trace.front() - 1e-12 * (1.0 + std::abs(r.trace.front()))) {
    throw std::runtime_error("general_mi: final log-likelihood below initial (lr too large?)");
  }
  return r;
}

PointAttackResult generative_mi(const Generator& gen, const Discriminator& disc,
                                const LikelihoodModel& lik, int target_class, double lambda,
                                const Tensor& z_init, int steps, double lr) {
  if (!(lambda > 0.0)) throw std::invalid_argument("generative_mi: lambda must be > 0");
  return descend(
      z_init, steps, lr, /*ascent=*/false,
      [&](ad::Tape& tape, ad::Value z) {
        std::vector<ad::Value> codes(gen.num_layers(), z);
        ad::Value x = gen.synthesize_codes_on_tape(tape, codes);
        ad::Value lp = ad::mean(lik.log_likelihood_on_tape(tape, x, target_class));
        ad::Value prior = ad::mean(ad::log_sigmoid(disc.logit_on_tape(tape, x)));
        return ad::sub(ad::scale(lp, -lambda), prior);
      },
      "generative_mi");
}

PointAttackResult vmi_point_estimate(const Generator& gen, const Discriminator& disc,
                                     const LikelihoodModel& lik, int target_class, double gamma,
                                     const Tensor& z_init, int steps, double lr) {
  if (!(gamma > 0.0)) throw std::invalid_argument("vmi_point_estimate: gamma must be > 0");
  return descend(
      z_init, steps, lr, /*ascent=*/false,
      [&](ad::Tape& tape, ad::Value z) {
        std::vector<ad::Value> codes(gen.num_layers(), z);
        ad::Value x = gen.synthesize_codes_on_tape(tape, codes);
        ad::Value lp = ad::mean(lik.log_likelihood_on_tape(tape, x, target_class));
        ad::Value prior = ad::mean(ad::log_sigmoid(disc.logit_on_tape(tape, x)));
        return ad::sub(ad::neg(lp), ad::scale(prior, gamma));
      },
      "vmi_point_estimate");
}

}  // namespace vmi
