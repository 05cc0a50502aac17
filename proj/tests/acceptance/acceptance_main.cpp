// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criterion 10 drives the CLI binary end to end; pass its path with
// --cli (the ctest registration does).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "vmi/attacks.hpp"
#include "vmi/checkpoint.hpp"
#include "vmi/config.hpp"
#include "vmi/experiment.hpp"
#include "vmi/metrics.hpp"
#include "vmi/report.hpp"
#include "vmi/rng.hpp"
#include "vmi/tasks.hpp"

#include "../knn_oracle.hpp"

using namespace vmi;
namespace fs = std::filesystem;

namespace {

std::string g_cli_path;

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared fixtures

LinearGaussianGenerator identity_generator(std::size_t k) {
  return LinearGaussianGenerator(Tensor::identity(k), std::vector<double>(k, 0.0), 0.0);
}

QuadraticLogitTask well_conditioned_task(std::size_t k, RngStream& rng) {
  QuadraticLogitTask::ClassTerm t;
  Tensor m = Tensor::randn({k, k}, rng);
  Tensor h = linalg::scale(linalg::matmul(linalg::transpose(m), m), 1.0 / static_cast<double>(k));
  for (std::size_t i = 0; i < k; ++i) h.at(i, i) += 0.5;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      double s = 0.5 * (h.at(i, j) + h.at(j, i));
      h.at(i, j) = s;
      h.at(j, i) = s;
    }
  }
  t.h = std::move(h);
  t.b.resize(k);
  for (double& v : t.b) v = 0.5 * rng.normal();
  t.c = rng.normal();
  return QuadraticLogitTask({t});
}

// Conjugate task whose power posterior factorizes, so the diagonal Gaussian
// family can represent it exactly. (A diagonal family fitted by reverse KL
// to a correlated Gaussian lands on the inverse precision diagonal, not the
// marginal variances, so recovery is only well-posed for diagonal H.)
QuadraticLogitTask diagonal_task(std::size_t k, RngStream& rng) {
  QuadraticLogitTask::ClassTerm t;
  Tensor h = Tensor::zeros({k, k});
  for (std::size_t i = 0; i < k; ++i) h.at(i, i) = 0.5 + rng.uniform();
  t.h = std::move(h);
  t.b.resize(k);
  for (double& v : t.b) v = 0.5 * rng.normal();
  t.c = rng.normal();
  return QuadraticLogitTask({t});
}

CouplingFlow perturbed_flow(std::size_t dim, std::size_t blocks, std::size_t hidden,
                            std::uint64_t seed, double scale = 0.4) {
  RngStream rng(seed);
  CouplingFlow flow = CouplingFlow::make(dim, blocks, hidden, rng);
  for (ParamRef p : flow.mutable_params()) {
    if (p.name.ends_with("w3") || p.name.ends_with("b3")) {
      for (double& v : *p.data) v = scale * rng.normal();
    }
  }
  return flow;
}

// Central-difference check of the gradients a loss functional reports for
// one named parameter vector. `eval` must be deterministic.
double grad_vs_fd(const std::function<double(const std::vector<double>&)>& eval,
                  const std::vector<double>& at, const std::vector<double>& analytic) {
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < at.size(); ++i) {
    std::vector<double> up = at, dn = at;
    up[i] += eps;
    dn[i] -= eps;
    double numeric = (eval(up) - eval(dn)) / (2.0 * eps);
    double rel = std::abs(analytic[i] - numeric) /
                 (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient correctness of every objective

bool criterion_gradients(std::string& detail) {
  Check c;
  double worst_gauss = 0.0, worst_flow = 0.0, worst_svmi = 0.0, worst_gmi = 0.0,
         worst_genmi = 0.0, worst_flow_lp = 0.0;

  // Power-posterior objective with a Gaussian family.
  for (int trial = 0; trial < 100; ++trial) {
    RngStream rng(9000 + trial);
    QuadraticLogitTask task = well_conditioned_task(3, rng);
    LinearGaussianGenerator gen = identity_generator(3);
    std::vector<double> mu(3), ls(3);
    for (double& v : mu) v = rng.normal();
    for (double& v : ls) v = 0.3 * rng.normal();
    const std::uint64_t mc = 111 + trial;
    auto eval_mu = [&](const std::vector<double>& m) {
      RngStream r(mc);
      Family f = GaussianFamily(m, ls);
      return vmi_loss(f, gen, task, 0, 0.3, 16, r).total;
    };
    auto eval_ls = [&](const std::vector<double>& s) {
      RngStream r(mc);
      Family f = GaussianFamily(mu, s);
      return vmi_loss(f, gen, task, 0, 0.3, 16, r).total;
    };
    Family f = GaussianFamily(mu, ls);
    std::vector<std::vector<double>> grads;
    RngStream r(mc);
    vmi_loss(f, gen, task, 0, 0.3, 16, r, &grads);
    worst_gauss = std::max(worst_gauss, grad_vs_fd(eval_mu, mu, grads[0]));
    worst_gauss = std::max(worst_gauss, grad_vs_fd(eval_ls, ls, grads[1]));
  }
  c.expect(worst_gauss < 1e-4, "vmi-gaussian fd " + fmt(worst_gauss));

  // Power-posterior objective with a flow family: every conditioner block of a small flow.
  for (int trial = 0; trial < 100; ++trial) {
    RngStream rng(9200 + trial);
    QuadraticLogitTask task = well_conditioned_task(4, rng);
    LinearGaussianGenerator gen = identity_generator(4);
    CouplingFlow flow = perturbed_flow(4, 2, 4, 9300 + trial);
    const std::uint64_t mc = 222 + trial;
    std::vector<std::vector<double>> grads;
    {
      Family f = flow;
      RngStream r(mc);
      vmi_loss(f, gen, task, 0, 0.2, 8, r, &grads);
    }
    std::vector<ParamRef> params = flow.mutable_params();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto eval = [&](const std::vector<double>& v) {
        CouplingFlow probe = flow;
        *probe.mutable_params()[pi].data = v;
        Family f = std::move(probe);
        RngStream r(mc);
        return vmi_loss(f, gen, task, 0, 0.2, 8, r).total;
      };
      worst_flow = std::max(worst_flow, grad_vs_fd(eval, *params[pi].data, grads[pi]));
    }
  }
  c.expect(worst_flow < 1e-4, "vmi-flow fd " + fmt(worst_flow));

  // Layered objective: layered generator, one gaussian and one flow layer.
  for (int trial = 0; trial < 100; ++trial) {
    RngStream rng(9400 + trial);
    LayeredGenerator::Config gc;
    gc.code_dim = 4;
    gc.layers = 2;
    gc.output_dim = 5;
    gc.hidden_dim = 8;
    gc.style_dim = 6;
    LayeredGenerator gen(gc, rng);
    Classifier cls(5, {8}, 3, rng);

    LayeredVariational fam;
    std::vector<double> mu(4), ls(4);
    for (double& v : mu) v = 0.5 * rng.normal();
    for (double& v : ls) v = 0.2 * rng.normal();
    fam.layers.emplace_back(GaussianFamily(mu, ls));
    fam.layers.emplace_back(perturbed_flow(4, 2, 4, 9500 + trial, 0.2));

    const std::uint64_t mc = 333 + trial;
    std::vector<std::vector<double>> grads;
    {
      RngStream r(mc);
      svmi_loss(fam, gen, cls, 1, 0.4, 8, r, &grads);
    }
    // Check the gaussian layer's parameters and one flow block per trial.
    auto eval_block = [&](std::size_t flat_index, const std::vector<double>& v) {
      LayeredVariational probe = fam;
      std::size_t idx = 0;
      for (Family& layer : probe.layers) {
        auto params = std::visit([](auto& x) { return x.mutable_params(); }, layer);
        for (ParamRef p : params) {
          if (idx == flat_index) *p.data = v;
          ++idx;
        }
      }
      RngStream r(mc);
      return svmi_loss(probe, gen, cls, 1, 0.4, 8, r).total;
    };
    std::vector<std::pair<std::size_t, std::vector<double>>> targets;
    targets.emplace_back(0, mu);
    targets.emplace_back(1, ls);
    std::size_t flow_block = 2 + static_cast<std::size_t>(rng.next_u64() % 12);
    {
      const auto& flow = std::get<CouplingFlow>(fam.layers[1]);
      CouplingFlow copy = flow;
      targets.emplace_back(flow_block, *copy.mutable_params()[flow_block - 2].data);
    }
    for (const auto& [idx, at] : targets) {
      auto eval = [&, idx = idx](const std::vector<double>& v) { return eval_block(idx, v); };
      worst_svmi = std::max(worst_svmi, grad_vs_fd(eval, at, grads[idx]));
    }
  }
  c.expect(worst_svmi < 1e-4, "layered fd " + fmt(worst_svmi));

  // General-MI objective: gradients w.r.t. the input point.
  for (int trial = 0; trial < 100; ++trial) {
    RngStream rng(9600 + trial);
    Classifier cls(5, {10}, 4, rng);
    auto f = [&](ad::Tape& tape, ad::Value x) {
      return ad::mean(cls.log_likelihood_on_tape(tape, x, trial % 4));
    };
    worst_gmi = std::max(worst_gmi, ad::finite_diff_check(f, Tensor::randn({1, 5}, rng), 1e-5));
  }
  c.expect(worst_gmi < 1e-4, "general-mi fd " + fmt(worst_gmi));

  // Generative-MI objective: gradients w.r.t. the code point.
  for (int trial = 0; trial < 100; ++trial) {
    RngStream rng(9700 + trial);
    Tensor a = Tensor::randn({5, 3}, rng);
    if (linalg::smallest_singular_value(a) <= 1e-6) continue;
    LinearGaussianGenerator gen(a, {0.1, 0.2, -0.1, 0.3, 0.0}, 0.0);
    Classifier cls(5, {8}, 3, rng);
    Discriminator disc(5, {6}, rng);
    const double lambda = 0.5 + rng.uniform();
    auto f = [&](ad::Tape& tape, ad::Value z) {
      std::vector<ad::Value> codes(1, z);
      ad::Value x = gen.synthesize_codes_on_tape(tape, codes);
      ad::Value lp = ad::mean(cls.log_likelihood_on_tape(tape, x, trial % 3));
      ad::Value prior = ad::mean(ad::log_sigmoid(disc.logit_on_tape(tape, x)));
      return ad::sub(ad::scale(lp, -lambda), prior);
    };
    worst_genmi = std::max(worst_genmi, ad::finite_diff_check(f, Tensor::randn({1, 3}, rng), 1e-5));
  }
  c.expect(worst_genmi < 1e-4, "generative-mi fd " + fmt(worst_genmi));

  // Flow log-prob gradients w.r.t. every flow parameter.
  for (int trial = 0; trial < 100; ++trial) {
    RngStream rng(9800 + trial);
    CouplingFlow flow = perturbed_flow(4, 2, 4, 9900 + trial);
    Tensor probe = Tensor::randn({2, 4}, rng);
    std::vector<std::vector<std::size_t>> shapes;
    {
      ad::Tape scratch;
      CouplingFlow::TapeParams tp = flow.leaves_on_tape(scratch);
      for (const auto& blk : tp.blocks) {
        for (ad::Value v : blk) shapes.push_back(scratch.value(v).shape());
      }
    }
    std::vector<ParamRef> params = flow.mutable_params();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto f = [&](ad::Tape& tape, ad::Value p) {
        CouplingFlow::TapeParams tp = flow.leaves_on_tape(tape);
        std::size_t flat = 0;
        for (auto& blk : tp.blocks) {
          for (ad::Value& v : blk) {
            if (flat == pi) v = p;
            ++flat;
          }
        }
        return ad::sum(flow.log_prob_on_tape(tp, tape.leaf(probe)));
      };
      Tensor point(std::vector<std::size_t>(shapes[pi]),
                   std::vector<double>(params[pi].data->begin(), params[pi].data->end()));
      worst_flow_lp = std::max(worst_flow_lp, ad::finite_diff_check(f, point, 1e-5));
    }
  }
  c.expect(worst_flow_lp < 1e-4, "flow log-prob fd " + fmt(worst_flow_lp));

  detail = "max rel err: vmi-g " + fmt(worst_gauss) + ", vmi-f " + fmt(worst_flow) +
           ", layered " + fmt(worst_svmi) + ", general " + fmt(worst_gmi) + ", generative " +
           fmt(worst_genmi) + ", flow-lp " + fmt(worst_flow_lp) + (c.ok ? "" : " | " + c.detail);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 2: flow integrity

bool criterion_flow_integrity(std::string& detail) {
  Check c;
  double worst_round = 0.0, worst_density = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    CouplingFlow flow = perturbed_flow(8, 8, 32, 4100 + trial);
    RngStream rng(4200 + trial);
    Tensor z = Tensor::randn({1000, 8}, rng);
    Tensor round = flow.inverse(flow.forward(z));
    for (std::size_t i = 0; i < z.numel(); ++i) {
      worst_round = std::max(worst_round, std::abs(round.data()[i] - z.data()[i]));
    }
    Tensor z0 = Tensor::randn({1000, 8}, rng);
    Tensor codes = flow.forward(z0);
    std::vector<double> lp = flow.log_prob(codes);
    std::vector<double> base_lp = standard_normal_batch_log_density(z0);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      worst_density = std::max(worst_density, std::abs(lp[i] - base_lp[i]));
    }
  }
  c.expect(worst_round < 1e-6, "round trip " + fmt(worst_round));
  c.expect(worst_density < 1e-10, "density identity " + fmt(worst_density));
  detail = "round-trip max " + fmt(worst_round) + ", density identity max " + fmt(worst_density);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 3: KL estimators

bool criterion_kl(std::string& detail) {
  Check c;
  RngStream rng(4300);
  const std::size_t n_mc = 100000;
  double worst_sigma = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t d = 1 + static_cast<std::size_t>(rng.next_u64() % 6);
    std::vector<double> mu(d), ls(d);
    for (double& v : mu) v = rng.normal();
    for (double& v : ls) v = 0.4 * rng.normal();
    GaussianFamily fam(mu, ls);
    double closed = fam.kl_to_standard_normal();

    RngStream mc(4400 + trial);
    SampleBatch batch = fam.sample(n_mc, mc);
    std::vector<double> prior_lp = standard_normal_batch_log_density(batch.codes);
    double mean = 0.0;
    for (std::size_t i = 0; i < n_mc; ++i) mean += batch.log_probs[i] - prior_lp[i];
    mean /= static_cast<double>(n_mc);
    double var = 0.0;
    for (std::size_t i = 0; i < n_mc; ++i) {
      double dlt = batch.log_probs[i] - prior_lp[i] - mean;
      var += dlt * dlt;
    }
    double se = std::sqrt(var / static_cast<double>(n_mc - 1) / static_cast<double>(n_mc));
    double sigmas = std::abs(mean - closed) / std::max(se, 1e-300);
    worst_sigma = std::max(worst_sigma, sigmas);
    c.expect(std::abs(mean - closed) <= 3.0 * se,
             "gaussian kl trial " + std::to_string(trial) + ": " + fmt(sigmas) + " se");
  }

  RngStream flow_rng(4500);
  CouplingFlow identity = CouplingFlow::make(8, 8, 32, flow_rng);
  RngStream mc(4501);
  KlEstimate kl = identity.kl_to_standard_normal(2048, mc);
  c.expect(kl.estimate == 0.0 && kl.std_error == 0.0,
           "identity flow kl " + fmt(kl.estimate) + " +- " + fmt(kl.std_error));
  detail = "20 gaussian families at 1e5 samples, worst " + fmt(worst_sigma) +
           " se; identity flow kl exactly 0" + (c.ok ? "" : " | " + c.detail);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 4: conjugate power-posterior recovery

bool criterion_prop2(std::string& detail) {
  Check c;
  double worst_mean = 0.0, worst_var = 0.0;
  int case_index = 0;
  for (std::size_t k : {std::size_t{1}, std::size_t{4}}) {
    for (double gamma : {0.1, 1.0, 10.0}) {
      RngStream rng(4600 + case_index);
      QuadraticLogitTask task = diagonal_task(k, rng);
      LinearGaussianGenerator gen = identity_generator(k);

      AttackConfig cfg;
      cfg.target_class = 0;
      cfg.gamma = gamma;
      cfg.family = FamilyKind::gaussian;
      cfg.n_mc = 256;
      cfg.steps = 2000;
      cfg.optimizer.lr = 1e-2;
      cfg.optimizer.cosine_decay = true;
      cfg.seed = 4700 + case_index;
      AttackResult result = run_attack(cfg, gen, task);

      linalg::GaussianMoments post = analytic_power_posterior(task, 0, gamma);
      const auto& fam = std::get<GaussianFamily>(result.family.layers[0]);
      for (std::size_t i = 0; i < k; ++i) {
        double mean_err = std::abs(fam.mean()[i] - post.mean.at(0, i));
        double var = std::exp(2.0 * fam.log_std()[i]);
        double var_rel = std::abs(var - post.cov.at(i, i)) / post.cov.at(i, i);
        worst_mean = std::max(worst_mean, mean_err);
        worst_var = std::max(worst_var, var_rel);
        c.expect(mean_err < 0.02, "k=" + std::to_string(k) + " gamma=" + fmt(gamma) +
                                      " mean err " + fmt(mean_err));
        c.expect(var_rel < 0.05, "k=" + std::to_string(k) + " gamma=" + fmt(gamma) +
                                     " var rel err " + fmt(var_rel));
      }
      ++case_index;
    }
  }
  detail = "worst mean err " + fmt(worst_mean) + " (tol 0.02), worst var rel err " +
           fmt(worst_var) + " (tol 0.05)" + (c.ok ? "" : " | " + c.detail);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 5: KL data-processing inequality

bool criterion_prop1(std::string& detail) {
  Check c;
  RngStream rng(4800);
  double worst_margin = 1e300;
  int done = 0;
  while (done < 100) {
    std::size_t k = 1 + static_cast<std::size_t>(rng.next_u64() % 4);
    std::size_t d = k + static_cast<std::size_t>(rng.next_u64() % 4);
    Tensor a = Tensor::randn({d, k}, rng);
    if (linalg::smallest_singular_value(a) <= 1e-6) continue;
    std::vector<double> bias(d);
    for (double& v : bias) v = rng.normal();
    double sigma = 0.1 + 0.9 * rng.uniform();
    LinearGaussianGenerator gen(a, bias, sigma);

    auto random_gaussian = [&](std::size_t dim) {
      Tensor m = Tensor::randn({dim, dim}, rng);
      Tensor cov = linalg::matmul(linalg::transpose(m), m);
      for (std::size_t i = 0; i < dim; ++i) cov.at(i, i) += 0.3;
      for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = i + 1; j < dim; ++j) {
          double s = 0.5 * (cov.at(i, j) + cov.at(j, i));
          cov.at(i, j) = s;
          cov.at(j, i) = s;
        }
      }
      return linalg::GaussianMoments{Tensor::randn({1, dim}, rng), cov};
    };
    linalg::GaussianMoments q = random_gaussian(k);
    linalg::GaussianMoments p = random_gaussian(k);
    double kl_code = linalg::gaussian_kl(q, p);
    double kl_push = linalg::gaussian_kl(gen.push_forward(q), gen.push_forward(p));
    double margin = kl_code - kl_push;
    worst_margin = std::min(worst_margin, margin);
    c.expect(margin >= -1e-9, "instance " + std::to_string(done) + " margin " + fmt(margin));
    ++done;
  }
  detail = "100 instances, smallest code-minus-pushforward margin " + fmt(worst_margin) +
           (c.ok ? "" : " | " + c.detail);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 6: gamma tradeoff on the default synthetic task

bool criterion_gamma_tradeoff(std::string& detail) {
  Check c;
  SyntheticTaskSpec spec;  // desk defaults: k=8, d=16, C=10
  RngStream task_rng(5100);
  TaskBundle bundle = make_synthetic_task(spec, task_rng);

  ClassifierHyperparams target_hp;
  target_hp.epochs = 30;
  RngStream target_rng(5101);
  Classifier target =
      train_classifier(bundle.private_train, &bundle.private_test, target_hp, target_rng, nullptr);
  ClassifierHyperparams eval_hp;
  eval_hp.hidden = {48};
  eval_hp.epochs = 40;
  RngStream eval_rng(5102);
  Classifier eval =
      train_classifier(bundle.private_train, &bundle.private_test, eval_hp, eval_rng, nullptr);

  const std::vector<double> gammas = {0.01, 0.1, 1.0, 10.0};
  const int n_seeds = 5;
  const int classes = spec.classes;

  std::vector<std::vector<double>> kl(gammas.size());    // per gamma, per seed
  std::vector<std::vector<double>> acc(gammas.size());
  for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
    for (int seed = 0; seed < n_seeds; ++seed) {
      double kl_sum = 0.0, acc_sum = 0.0;
      for (int cls = 0; cls < classes; ++cls) {
        AttackConfig cfg;
        cfg.target_class = cls;
        cfg.gamma = gammas[gi];
        cfg.family = FamilyKind::gaussian;
        cfg.n_mc = 32;
        cfg.steps = 500;
        cfg.optimizer.lr = 1e-2;
        cfg.optimizer.cosine_decay = true;
        cfg.seed = 5200 + 100 * seed + cls;
        AttackResult result = run_attack(cfg, *bundle.true_generator, target);
        const auto& fam = std::get<GaussianFamily>(result.family.layers[0]);
        kl_sum += fam.kl_to_standard_normal();
        RngStream srng(5300 + 100 * seed + cls);
        SampleBatch batch = family_sample(result.family.layers[0], 100, srng);
        Tensor samples = bundle.true_generator->generate(batch.codes);
        acc_sum += attack_accuracy(samples, cls, eval);
      }
      kl[gi].push_back(kl_sum / classes);
      acc[gi].push_back(acc_sum / classes);
    }
  }

  auto mean_se = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    double se = std::sqrt(var / static_cast<double>(xs.size() - 1) /
                          static_cast<double>(xs.size()));
    return std::pair<double, double>{mean, se};
  };

  std::string curve = "kl:";
  for (std::size_t gi = 0; gi + 1 < gammas.size(); ++gi) {
    auto [m0, s0] = mean_se(kl[gi]);
    auto [m1, s1] = mean_se(kl[gi + 1]);
    double slack = 3.0 * std::sqrt(s0 * s0 + s1 * s1);
    c.expect(m1 <= m0 + slack, "kl not non-increasing at gamma " + fmt(gammas[gi + 1]));
  }
  for (std::size_t gi = 0; gi < gammas.size(); ++gi) curve += " " + fmt(mean_se(kl[gi]).first);
  curve += "; acc:";
  for (std::size_t gi = 0; gi + 1 < gammas.size(); ++gi) {
    auto [m0, s0] = mean_se(acc[gi]);
    auto [m1, s1] = mean_se(acc[gi + 1]);
    double slack = 3.0 * std::sqrt(s0 * s0 + s1 * s1);
    c.expect(m1 <= m0 + slack, "accuracy not non-increasing at gamma " + fmt(gammas[gi + 1]));
  }
  for (std::size_t gi = 0; gi < gammas.size(); ++gi) curve += " " + fmt(mean_se(acc[gi]).first);

  // Prior-reversion limit at gamma = 1000.
  double kl_huge = 0.0;
  for (int cls = 0; cls < classes; ++cls) {
    AttackConfig cfg;
    cfg.target_class = cls;
    cfg.gamma = 1000.0;
    cfg.family = FamilyKind::gaussian;
    cfg.n_mc = 32;
    cfg.steps = 500;
    cfg.optimizer.cosine_decay = true;
    cfg.seed = 5400 + cls;
    AttackResult result = run_attack(cfg, *bundle.true_generator, target);
    kl_huge += std::get<GaussianFamily>(result.family.layers[0]).kl_to_standard_normal();
  }
  kl_huge /= classes;
  c.expect(kl_huge < 0.05, "gamma=1e3 mean kl " + fmt(kl_huge));

  detail = curve + "; gamma=1e3 kl " + fmt(kl_huge) + (c.ok ? "" : " | " + c.detail);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 7: metric suite sanity

bool criterion_metrics(std::string& detail) {
  Check c;
  RngStream rng(5500);
  Tensor cloud = Tensor::randn({80, 6}, rng);
  double self_fid = fid(cloud, cloud);
  c.expect(std::abs(self_fid) < 1e-8, "fid(X,X) " + fmt(self_fid));

  linalg::GaussianMoments a{Tensor::row({0.0}), Tensor::matrix(1, 1, {1.0})};
  linalg::GaussianMoments b{Tensor::row({1.0}), Tensor::matrix(1, 1, {4.0})};
  double scalar_fid = frechet_distance(a, b);
  c.expect(std::abs(scalar_fid - 2.0) < 1e-10, "scalar frechet " + fmt(scalar_fid));

  PrResult self_pr = precision_recall(cloud, cloud, 5);
  DcResult self_dc = density_coverage(cloud, cloud, 5);
  c.expect(self_pr.precision == 1.0 && self_pr.recall == 1.0 && self_dc.coverage == 1.0,
           "identical clouds pr/rc/cov");

  Tensor far = cloud;
  for (double& v : far.mutable_data()) v += 1e7;
  PrResult far_pr = precision_recall(cloud, far, 5);
  DcResult far_dc = density_coverage(cloud, far, 5);
  c.expect(far_pr.precision == 0.0 && far_pr.recall == 0.0 && far_dc.density == 0.0 &&
               far_dc.coverage == 0.0,
           "far clouds not all zero");

  bool exact = true;
  for (int trial = 0; trial < 3; ++trial) {
    Tensor real = Tensor::randn({500, 4}, rng);
    Tensor gen = Tensor::randn({500, 4}, rng);
    for (double& v : gen.mutable_data()) v += 0.3;
    int k = 3 + trial;
    PrResult pr = precision_recall(real, gen, k);
    PrResult pr_bf = knn_oracle::precision_recall(real, gen, k);
    DcResult dc = density_coverage(real, gen, k);
    DcResult dc_bf = knn_oracle::density_coverage(real, gen, k);
    exact = exact && pr.precision == pr_bf.precision && pr.recall == pr_bf.recall &&
            dc.density == dc_bf.density && dc.coverage == dc_bf.coverage;
  }
  c.expect(exact, "500-point brute-force parity");

  detail = "fid(X,X) " + fmt(self_fid) + ", scalar case " + fmt(scalar_fid) +
           ", brute-force parity on 500-point clouds" + (c.ok ? "" : " | " + c.detail);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 8: paper-exact diversity arithmetic

bool criterion_diversity(std::string& detail) {
  auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
  bool ok = round2(diversity(0.21, 0.83)) == 0.52 && round2(diversity(0.01, 0.67)) == 0.34 &&
            round2(diversity(0.42, 0.98)) == 0.70;
  detail = "(0.21,0.83)->" + fmt(round2(diversity(0.21, 0.83))) + ", (0.01,0.67)->" +
           fmt(round2(diversity(0.01, 0.67))) + ", (0.42,0.98)->" +
           fmt(round2(diversity(0.42, 0.98)));
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 9: baseline reductions

bool criterion_baselines(std::string& detail) {
  Check c;
  QuadraticLogitTask::ClassTerm t;
  t.h = Tensor::matrix(1, 1, {2.0});
  t.b = {6.0};
  t.c = -9.0;
  QuadraticLogitTask task({t});

  PointAttackResult gm = general_mi(task, 0, Tensor::row({0.0}), 600, 0.1);
  double gm_err = std::abs(gm.point.at(0, 0) - 3.0);
  c.expect(gm_err < 1e-4, "general_mi err " + fmt(gm_err));

  LinearGaussianGenerator gen = identity_generator(1);
  Discriminator disc = Discriminator::constant(1);
  const double gamma = 0.25;
  PointAttackResult vp =
      vmi_point_estimate(gen, disc, task, 0, gamma, Tensor::row({0.0}), 1500, 0.05);
  PointAttackResult zm = generative_mi(gen, disc, task, 0, 1.0 / gamma, Tensor::row({0.0}), 1500,
                                       0.05 * gamma);
  double match_err = std::abs(vp.point.at(0, 0) - zm.point.at(0, 0));
  c.expect(match_err < 1e-3, "lambda=1/gamma stationary mismatch " + fmt(match_err));

  detail = "general_mi argmax err " + fmt(gm_err) + "; generative_mi vs point-VMI gap " +
           fmt(match_err) + (c.ok ? "" : " | " + c.detail);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 10: end-to-end desk experiment through the CLI

std::string default_run_config() {
  return R"(seed = 20240704
task.classes = 10
task.code_dim = 8
task.data_dim = 16
task.samples_per_class = 200
task.aux_samples = 5000
attack.family = flow
attack.gamma = 0.001
attack.steps = 2000
attack.n_mc = 64
metrics.k = 5
metrics.samples_per_class = 100
)";
}

bool criterion_end_to_end(std::string& detail) {
  Check c;
  fs::path dir = fs::temp_directory_path() / "vmi_acceptance_run";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::path config_path = dir / "default.cfg";
  {
    std::ofstream os(config_path);
    os << default_run_config();
  }
  fs::path out1 = dir / "out1";
  fs::path out2 = dir / "out2";

  auto start = std::chrono::steady_clock::now();
  ExperimentConfig cfg = ExperimentConfig::parse_file(config_path);
  if (!g_cli_path.empty()) {
    std::string cmd = "\"" + g_cli_path + "\" run --config " + config_path.string() + " --out " +
                      out1.string() + " > " + (dir / "run1.log").string() + " 2>&1";
    c.expect(std::system(cmd.c_str()) == 0, "cli run failed (see run1.log)");
    std::string cmd2 = "\"" + g_cli_path + "\" run --config " + config_path.string() + " --out " +
                       out2.string() + " > " + (dir / "run2.log").string() + " 2>&1";
    c.expect(std::system(cmd2.c_str()) == 0, "cli rerun failed");
  } else {
    cmd_run(cfg, out1);
    cmd_run(cfg, out2);
  }
  double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  c.expect(seconds < 600.0, "pipeline took " + fmt(seconds) + " s");

  std::vector<std::string> problems = validate_report_files(out1);
  for (const std::string& p : problems) c.expect(false, "schema: " + p);

  // Byte reproducibility, manifest timestamps aside.
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(out1)) {
    if (!entry.is_regular_file()) continue;
    std::string rel = fs::relative(entry.path(), out1).generic_string();
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  auto bytes_of = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  };
  for (const std::string& rel : files) {
    if (bytes_of(out1 / rel) != bytes_of(out2 / rel)) {
      c.expect(false, "not byte-identical: " + rel);
    }
  }

  // Method comparison: flow VMI vs the point baselines.
  auto rows = read_csv(out1 / "metrics" / "methods.csv");
  double vmi_acc = -1, general_acc = -1, vmi_recall = -1, generative_recall = -1;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r][0] == "vmi") {
      vmi_acc = std::stod(rows[r][1]);
      vmi_recall = std::stod(rows[r][3]);
    } else if (rows[r][0] == "general_mi") {
      general_acc = std::stod(rows[r][1]);
    } else if (rows[r][0] == "generative_mi") {
      generative_recall = std::stod(rows[r][3]);
    }
  }
  c.expect(vmi_acc >= general_acc, "vmi accuracy " + fmt(vmi_acc) + " < general_mi " +
                                       fmt(general_acc));
  c.expect(generative_recall == 0.0, "generative_mi recall " + fmt(generative_recall));
  c.expect(vmi_recall > generative_recall, "vmi recall " + fmt(vmi_recall) + " not > " +
                                               fmt(generative_recall));

  detail = fmt(seconds) + " s; vmi acc " + fmt(vmi_acc) + " vs general " + fmt(general_acc) +
           "; vmi recall " + fmt(vmi_recall) + " vs generative " + fmt(generative_recall) +
           (c.ok ? "" : " | " + c.detail);
  if (c.ok) fs::remove_all(dir);
  return c.ok;
}

// ---------------------------------------------------------------------------
// Criterion 11: layered objective structure

bool criterion_layered(std::string& detail) {
  Check c;
  // L = 1 reduction.
  RngStream init(5600);
  QuadraticLogitTask task = well_conditioned_task(4, init);
  LinearGaussianGenerator gen = identity_generator(4);
  Family fam = GaussianFamily(std::vector<double>{0.2, -0.1, 0.4, 0.0},
                              std::vector<double>{0.1, 0.0, -0.2, 0.3});
  LayeredVariational layered1;
  layered1.layers.push_back(fam);
  RngStream ra(5601), rb(5601);
  double direct = vmi_loss(fam, gen, task, 0, 0.7, 64, ra).total;
  double viaL = svmi_loss(layered1, gen, task, 0, 0.7, 64, rb).total;
  c.expect(std::abs(direct - viaL) < 1e-12, "L=1 reduction gap " + fmt(direct - viaL));

  // Multi-layer KL combination.
  RngStream rng(5602);
  LayeredGenerator::Config gc;
  gc.code_dim = 4;
  gc.layers = 3;
  gc.output_dim = 6;
  LayeredGenerator lgen(gc, rng);
  Classifier cls(6, {8}, 3, rng);
  LayeredVariational layered;
  std::vector<double> expected_kls;
  for (int l = 0; l < 3; ++l) {
    std::vector<double> mu(4), ls(4);
    for (double& v : mu) v = 0.4 * rng.normal();
    for (double& v : ls) v = 0.2 * rng.normal();
    GaussianFamily g(mu, ls);
    expected_kls.push_back(g.kl_to_standard_normal());
    layered.layers.emplace_back(std::move(g));
  }
  const double gamma = 0.8;
  std::vector<double> per_layer_kl, per_layer_entropy;
  RngStream mc(5603);
  LossBreakdown lb =
      svmi_loss(layered, lgen, cls, 1, gamma, 32, mc, nullptr, &per_layer_kl, &per_layer_entropy);
  double expected_term = gamma * (expected_kls[0] + expected_kls[1] + expected_kls[2]) / 3.0;
  c.expect(std::abs(lb.kl - expected_term) < 1e-8, "kl term gap " + fmt(lb.kl - expected_term));
  c.expect(per_layer_kl.size() == 3 && per_layer_entropy.size() == 3, "diagnostic sizes");

  // Per-layer diagnostic columns from a layered pipeline run.
  ExperimentConfig cfg = ExperimentConfig::parse_string(R"(seed = 8
task.classes = 2
task.code_dim = 4
task.data_dim = 8
task.samples_per_class = 50
task.aux_samples = 150
task.generator = layered
models.generator.layers = 4
models.generator_mode = gan
models.gan.steps = 60
models.target.epochs = 10
models.eval.epochs = 10
attack.family = layered
attack.layer_family = flow
attack.steps = 30
attack.n_mc = 8
baselines.enabled = false
metrics.k = 3
metrics.samples_per_class = 30
)");
  fs::path out = fs::temp_directory_path() / "vmi_acceptance_layered";
  fs::remove_all(out);
  cmd_run(cfg, out);
  auto rows = read_csv(out / "attacks" / "layer_diagnostics.csv");
  // Header plus 2 classes x 4 layers.
  c.expect(rows.size() == 1 + 2 * 4, "layer diagnostics rows " + std::to_string(rows.size()));
  c.expect(rows[0] == std::vector<std::string>{"class", "layer", "kl", "entropy"},
           "diagnostics header");
  if (c.ok) fs::remove_all(out);

  detail = "L=1 gap " + fmt(direct - viaL) + "; kl-term gap " + fmt(lb.kl - expected_term) +
           "; per-layer columns emitted" + (c.ok ? "" : " | " + c.detail);
  return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::string(argv[i]) == "--cli") g_cli_path = argv[i + 1];
    if (std::string(argv[i]) == "--only") only = std::atoi(argv[i + 1]);
  }

  struct Criterion {
    int id;
    const char* title;
    bool (*run)(std::string&);
  };
  const Criterion criteria[] = {
      {1, "gradient correctness of all objectives", criterion_gradients},
      {2, "flow integrity", criterion_flow_integrity},
      {3, "KL estimators", criterion_kl},
      {4, "conjugate power-posterior recovery", criterion_prop2},
      {5, "code-space KL dominates pushforward KL", criterion_prop1},
      {6, "gamma tradeoff on the default task", criterion_gamma_tradeoff},
      {7, "metric suite sanity", criterion_metrics},
      {8, "diversity arithmetic", criterion_diversity},
      {9, "baseline reductions", criterion_baselines},
      {10, "end-to-end desk experiment", criterion_end_to_end},
      {11, "layered objective structure", criterion_layered},
  };

  int failures = 0;
  for (const Criterion& cr : criteria) {
    if (only != 0 && cr.id != only) continue;
    auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool ok = false;
    try {
      ok = cr.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %2d: %s (%.1fs) — %s\n", ok ? "PASS" : "FAIL", cr.id, cr.title,
                seconds, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
