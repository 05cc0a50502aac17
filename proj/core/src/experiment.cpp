#include "vmi/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "vmi/checkpoint.hpp"
#include "vmi/metrics.hpp"
#include "vmi/report.hpp"
#include "vmi/rng.hpp"

namespace vmi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

std::string timestamp_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_manifest(const fs::path& out, const std::string& command,
                    const ExperimentConfig& cfg, const std::string& started,
                    const std::string& status, const std::string& error) {
  json j;
  j["artifact_version"] = kArtifactVersion;
  j["command"] = command;
  j["config_hash"] = cfg.config_hash();
  j["seed"] = cfg.seed;
  j["started_at"] = started;
  j["finished_at"] = timestamp_now();
  j["status"] = status;
  if (!error.empty()) j["error"] = error;
  json inventory = json::array();
  if (fs::exists(out)) {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(out)) {
      if (!entry.is_regular_file()) continue;
      std::string rel = fs::relative(entry.path(), out).generic_string();
      if (rel == "manifest.json") continue;
      files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    for (const std::string& rel : files) {
      inventory.push_back({{"path", rel}, {"bytes", fs::file_size(out / rel)}});
    }
  }
  j["inventory"] = std::move(inventory);
  std::ofstream os(out / "manifest.json", std::ios::binary | std::ios::trunc);
  os << j.dump(2) << "\n";
}

// Runs `body` between a "running" and a finalized manifest; failures leave
// partial outputs plus a failure record behind.
template <typename Fn>
void with_manifest(const ExperimentConfig& cfg, const fs::path& out, const std::string& command,
                   Fn&& body) {
  fs::create_directories(out);
  std::string started = timestamp_now();
  write_manifest(out, command, cfg, started, "running", "");
  try {
    body();
  } catch (const std::exception& e) {
    write_manifest(out, command, cfg, started, "failed", e.what());
    throw;
  }
  write_manifest(out, command, cfg, started, "ok", "");
}

struct Pretrained {
  LabeledDataset private_train;
  LabeledDataset private_test;
  LabeledDataset auxiliary;
  Classifier target{std::vector<DenseLayer>{DenseLayer::zeros(1, 2)}};
  Classifier eval{std::vector<DenseLayer>{DenseLayer::zeros(1, 2)}};
  std::shared_ptr<Generator> generator;
  Discriminator discriminator{std::vector<DenseLayer>{DenseLayer::zeros(1, 1)}};
  TrainCurve target_curve;
  TrainCurve eval_curve;
  std::vector<std::string> warnings;
};

// Discriminator-only fitting against a fixed generator (oracle mode), so the
// generative-MI baseline has a meaningful prior term.
Discriminator fit_discriminator(const LabeledDataset& aux, const Generator& gen, int steps,
                                RngStream& rng) {
  RngStream init = rng.split("disc-init");
  Discriminator disc(aux.dim(), {64}, init);
  if (steps <= 0) return disc;
  OptimizerConfig oc;
  oc.lr = 1e-3;
  Optimizer opt(oc, disc.mutable_params());
  RngStream loop = rng.split("disc-loop");
  const std::size_t batch = 64;
  for (int step = 0; step < steps; ++step) {
    Tensor x_real = Tensor::zeros({batch, aux.dim()});
    for (std::size_t r = 0; r < batch; ++r) {
      std::size_t idx = static_cast<std::size_t>(loop.next_u64() % aux.size());
      for (std::size_t c = 0; c < aux.dim(); ++c) x_real.at(r, c) = aux.features.at(idx, c);
    }
    Tensor z = Tensor::randn({batch, gen.code_dim()}, loop);
    Tensor x_fake = gen.generate(z);

    ad::Tape tape;
    std::vector<std::pair<ad::Value, ad::Value>> leaves;
    for (std::size_t i = 0; i < disc.layers().size(); ++i) {
      const DenseLayer& l = disc.layers()[i];
      leaves.emplace_back(tape.leaf(Tensor::matrix(l.in, l.out, l.w), "w"),
                          tape.leaf(Tensor::row(l.b), "b"));
    }
    auto apply = [&](ad::Value x) {
      ad::Value h = x;
      for (std::size_t i = 0; i + 1 < leaves.size(); ++i) {
        h = ad::tanh(ad::add(ad::matmul(h, leaves[i].first), leaves[i].second));
      }
      return ad::add(ad::matmul(h, leaves.back().first), leaves.back().second);
    };
    ad::Value real_logit = apply(tape.leaf(std::move(x_real), "real"));
    ad::Value fake_logit = apply(tape.leaf(std::move(x_fake), "fake"));
    ad::Value loss = ad::neg(ad::add(ad::mean(ad::log_sigmoid(real_logit)),
                                     ad::mean(ad::log_sigmoid(ad::neg(fake_logit)))));
    tape.backward(loss);
    std::vector<std::vector<double>> grads;
    for (const auto& [w, b] : leaves) {
      grads.emplace_back(tape.grad(w).data().begin(), tape.grad(w).data().end());
      grads.emplace_back(tape.grad(b).data().begin(), tape.grad(b).data().end());
    }
    opt.step(grads);
  }
  return disc;
}

Pretrained do_pretrain(const ExperimentConfig& cfg, const fs::path& out) {
  fs::create_directories(out / "datasets");
  fs::create_directories(out / "models");

  RngStream root(cfg.seed);
  Pretrained pre;

  if (cfg.task_kind == "synthetic") {
    RngStream task_rng = root.split("task");
    TaskBundle bundle = make_synthetic_task(cfg.task, task_rng);
    pre.private_train = std::move(bundle.private_train);
    pre.private_test = std::move(bundle.private_test);
    pre.auxiliary = std::move(bundle.auxiliary);
    pre.warnings = std::move(bundle.warnings);
    if (cfg.generator_mode == "oracle") pre.generator = bundle.true_generator;
  } else {
    pre.private_train = load_dataset(cfg.task_private_train);
    pre.private_test = load_dataset(cfg.task_private_test);
    pre.auxiliary = load_dataset(cfg.task_auxiliary);
    if (cfg.generator_mode == "oracle") {
      throw std::invalid_argument("pretrain: oracle generator requires a synthetic task");
    }
  }

  RngStream target_rng = root.split("train-target");
  pre.target = train_classifier(pre.private_train, &pre.private_test, cfg.target_classifier,
                                target_rng, &pre.target_curve);
  // The evaluation classifier sees the same private training rows but has
  // its own width and seed; the held-out rows score both classifiers.
  RngStream eval_rng = root.split("train-eval");
  pre.eval = train_classifier(pre.private_train, &pre.private_test, cfg.eval_classifier, eval_rng,
                              &pre.eval_curve);

  if (cfg.generator_mode == "gan") {
    RngStream gan_rng = root.split("train-gan");
    GanHyperparams hp = cfg.gan;
    hp.generator.code_dim = cfg.task.code_dim;
    GanResult gan = train_gan(pre.auxiliary, hp, gan_rng);
    pre.generator = std::make_shared<LayeredGenerator>(std::move(gan.generator));
    pre.discriminator = std::move(gan.discriminator);
  } else {
    RngStream disc_rng = root.split("fit-discriminator");
    pre.discriminator =
        fit_discriminator(pre.auxiliary, *pre.generator, cfg.discriminator_steps, disc_rng);
  }

  save_dataset(pre.private_train, out / "datasets" / "private_train.vmids");
  save_dataset(pre.private_test, out / "datasets" / "private_test.vmids");
  save_dataset(pre.auxiliary, out / "datasets" / "auxiliary.vmids");
  save_classifier(pre.target, out / "models" / "target_classifier.vmick");
  save_classifier(pre.eval, out / "models" / "eval_classifier.vmick");
  save_generator(*pre.generator, out / "models" / "generator.vmick");
  save_discriminator(pre.discriminator, out / "models" / "discriminator.vmick");

  {
    CsvWriter curves(out / "models" / "training_curves.csv");
    curves.row({"model", "epoch", "loss"});
    for (std::size_t i = 0; i < pre.target_curve.epoch_loss.size(); ++i) {
      curves.row({"target", std::to_string(i), format_double(pre.target_curve.epoch_loss[i])});
    }
    for (std::size_t i = 0; i < pre.eval_curve.epoch_loss.size(); ++i) {
      curves.row({"eval", std::to_string(i), format_double(pre.eval_curve.epoch_loss[i])});
    }
  }
  {
    json info;
    info["target"] = {{"train_accuracy", pre.target_curve.train_accuracy},
                      {"val_accuracy", pre.target_curve.val_accuracy}};
    info["eval"] = {{"train_accuracy", pre.eval_curve.train_accuracy},
                    {"val_accuracy", pre.eval_curve.val_accuracy}};
    info["warnings"] = pre.warnings;
    std::ofstream os(out / "models" / "model_info.json", std::ios::binary | std::ios::trunc);
    os << info.dump(2) << "\n";
  }
  {
    std::ofstream os(out / "config.txt", std::ios::binary | std::ios::trunc);
    os << cfg.canonical_string();
  }
  return pre;
}

Pretrained load_pretrained(const ExperimentConfig& cfg, const fs::path& out) {
  Pretrained pre;
  pre.private_train = load_dataset(out / "datasets" / "private_train.vmids");
  pre.private_test = load_dataset(out / "datasets" / "private_test.vmids");
  pre.auxiliary = load_dataset(out / "datasets" / "auxiliary.vmids");
  pre.target = load_classifier(out / "models" / "target_classifier.vmick");
  pre.eval = load_classifier(out / "models" / "eval_classifier.vmick");
  pre.generator = load_generator(out / "models" / "generator.vmick");
  pre.discriminator = load_discriminator(out / "models" / "discriminator.vmick");
  (void)cfg;
  return pre;
}

std::vector<int> classes_to_attack(const ExperimentConfig& cfg) {
  if (!cfg.attack_classes.empty()) return cfg.attack_classes;
  std::vector<int> all(cfg.task.classes);
  for (int c = 0; c < cfg.task.classes; ++c) all[c] = c;
  return all;
}

struct AttackArtifacts {
  std::vector<int> classes;
  std::vector<AttackResult> vmi;  // per class
  // A point attack yields a sample set only by re-running the optimization,
  // so general MI stores one ascent result per requested sample (random
  // seeded inits). Generative MI is the single-point attack by construction.
  LabeledDataset general_samples;  // (samples_per_class * classes) x d
  Tensor generative_codes;         // classes x k
  bool have_baselines = false;
};

AttackArtifacts do_attacks(const ExperimentConfig& cfg, const fs::path& out,
                           const Pretrained& pre) {
  fs::create_directories(out / "attacks");
  RngStream root(cfg.seed);

  AttackArtifacts art;
  art.classes = classes_to_attack(cfg);
  const std::size_t d = pre.generator->output_dim();
  const std::size_t k = pre.generator->code_dim();

  CsvWriter traces(out / "attacks" / "traces.csv");
  traces.row({"class", "step", "nll", "kl", "total"});
  CsvWriter diag(out / "attacks" / "layer_diagnostics.csv");
  diag.row({"class", "layer", "kl", "entropy"});

  for (int c : art.classes) {
    AttackConfig ac = cfg.attack;
    ac.target_class = c;
    ac.seed = root.split("attack", static_cast<std::uint64_t>(c)).seed();
    AttackResult result = run_attack(ac, *pre.generator, pre.target);
    save_family(result.family, out / "attacks" / ("vmi_class" + std::to_string(c) + ".vmick"));
    for (std::size_t s = 0; s < result.trace.size(); ++s) {
      traces.row({std::to_string(c), std::to_string(s), format_double(result.trace[s].nll),
                  format_double(result.trace[s].kl), format_double(result.trace[s].total)});
    }
    for (std::size_t l = 0; l < result.per_layer_kl.size(); ++l) {
      diag.row({std::to_string(c), std::to_string(l), format_double(result.per_layer_kl[l]),
                format_double(result.per_layer_entropy[l])});
    }
    art.vmi.push_back(std::move(result));
  }

  if (cfg.baselines_enabled) {
    art.have_baselines = true;
    const std::size_t per_class = cfg.metrics_samples_per_class;
    art.general_samples.num_classes = cfg.task.classes;
    art.general_samples.features = Tensor::zeros({per_class * art.classes.size(), d});
    art.generative_codes = Tensor::zeros({art.classes.size(), k});
    CsvWriter btr(out / "attacks" / "baseline_traces.csv");
    btr.row({"method", "class", "step", "objective"});
    std::size_t row = 0;
    for (std::size_t i = 0; i < art.classes.size(); ++i) {
      int c = art.classes[i];
      RngStream init_rng = root.split("baseline-general", static_cast<std::uint64_t>(c));
      for (std::size_t s = 0; s < per_class; ++s) {
        PointAttackResult gm = general_mi(pre.target, c, Tensor::randn({1, d}, init_rng),
                                          cfg.general_steps, cfg.general_lr);
        for (std::size_t j = 0; j < d; ++j) {
          art.general_samples.features.at(row, j) = gm.point.at(0, j);
        }
        art.general_samples.labels.push_back(c);
        ++row;
        if (s == 0) {
          for (std::size_t t = 0; t < gm.trace.size(); ++t) {
            btr.row({"general_mi", std::to_string(c), std::to_string(t),
                     format_double(gm.trace[t])});
          }
        }
      }
      PointAttackResult zm =
          generative_mi(*pre.generator, pre.discriminator, pre.target, c, cfg.generative_lambda,
                        Tensor::zeros({1, k}), cfg.generative_steps, cfg.generative_lr);
      for (std::size_t j = 0; j < k; ++j) art.generative_codes.at(i, j) = zm.point.at(0, j);
      for (std::size_t t = 0; t < zm.trace.size(); ++t) {
        btr.row({"generative_mi", std::to_string(c), std::to_string(t),
                 format_double(zm.trace[t])});
      }
    }
    save_dataset(art.general_samples, out / "attacks" / "baseline_points_general.vmids");
    LabeledDataset zp;
    zp.features = art.generative_codes;
    zp.labels = art.classes;
    zp.num_classes = cfg.task.classes;
    save_dataset(zp, out / "attacks" / "baseline_codes_generative.vmids");
  }
  return art;
}

AttackArtifacts load_attacks(const ExperimentConfig& cfg, const fs::path& out) {
  AttackArtifacts art;
  art.classes = classes_to_attack(cfg);
  for (int c : art.classes) {
    AttackResult r;
    r.family = load_family(out / "attacks" / ("vmi_class" + std::to_string(c) + ".vmick"));
    art.vmi.push_back(std::move(r));
  }
  fs::path gp = out / "attacks" / "baseline_points_general.vmids";
  if (fs::exists(gp)) {
    art.have_baselines = true;
    art.general_samples = load_dataset(gp);
    art.generative_codes = load_dataset(out / "attacks" / "baseline_codes_generative.vmids").features;
  }
  return art;
}

Tensor rows_of_class(const LabeledDataset& ds, int label) {
  std::size_t n = 0;
  for (int y : ds.labels) {
    if (y == label) ++n;
  }
  Tensor out = Tensor::zeros({n, ds.dim()});
  std::size_t row = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] != label) continue;
    for (std::size_t j = 0; j < ds.dim(); ++j) out.at(row, j) = ds.features.at(i, j);
    ++row;
  }
  return out;
}

Tensor sample_family_codes(const LayeredVariational& family, const Generator& gen, std::size_t n,
                           RngStream& rng) {
  if (family.num_layers() == 1) {
    SampleBatch batch = family_sample(family.layers[0], n, rng);
    return gen.generate(batch.codes);
  }
  std::vector<Tensor> per_layer;
  per_layer.reserve(family.num_layers());
  for (const Family& f : family.layers) per_layer.push_back(family_sample(f, n, rng).codes);
  return gen.synthesize(per_layer, /*are_styles=*/false, nullptr);
}

Tensor replicate_row(const Tensor& mat, std::size_t row, std::size_t n) {
  Tensor out = Tensor::zeros({n, mat.cols()});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < mat.cols(); ++c) out.at(r, c) = mat.at(row, c);
  }
  return out;
}

struct MethodEvaluation {
  std::string name;
  MetricsReport report;
  double kl_final = std::nan("");
  double entropy_final = std::nan("");
};

json method_to_json(const MethodEvaluation& ev) {
  json j;
  j["accuracy"] = ev.report.mean_accuracy;
  j["precision"] = ev.report.mean_precision;
  j["recall"] = ev.report.mean_recall;
  j["density"] = ev.report.mean_density;
  j["coverage"] = ev.report.mean_coverage;
  j["diversity"] = ev.report.mean_diversity;
  j["fid"] = ev.report.pooled_fid;
  if (!std::isnan(ev.kl_final)) {
    j["kl_final"] = ev.kl_final;
    j["entropy_final"] = ev.entropy_final;
  }
  return j;
}

std::vector<MethodEvaluation> do_evaluate(const ExperimentConfig& cfg, const fs::path& out,
                                          const Pretrained& pre, const AttackArtifacts& art) {
  fs::create_directories(out / "metrics");
  fs::create_directories(out / "samples");
  RngStream root(cfg.seed);
  ClassifierFeatures extractor(pre.eval);
  const std::size_t n_samples = cfg.metrics_samples_per_class;

  std::vector<MethodEvaluation> evaluations;

  // Generated raw samples per method: classes x (n x d).
  struct MethodSamples {
    std::string name;
    std::vector<Tensor> per_class;
  };
  std::vector<MethodSamples> methods;
  {
    MethodSamples vmi_samples{"vmi", {}};
    for (std::size_t i = 0; i < art.classes.size(); ++i) {
      RngStream srng = root.split("eval-samples", static_cast<std::uint64_t>(art.classes[i]));
      vmi_samples.per_class.push_back(
          sample_family_codes(art.vmi[i].family, *pre.generator, n_samples, srng));
    }
    methods.push_back(std::move(vmi_samples));
  }
  if (art.have_baselines) {
    MethodSamples general{"general_mi", {}};
    MethodSamples generative{"generative_mi", {}};
    for (std::size_t i = 0; i < art.classes.size(); ++i) {
      general.per_class.push_back(rows_of_class(art.general_samples, art.classes[i]));
      Tensor z = replicate_row(art.generative_codes, i, 1);
      Tensor x = pre.generator->generate(z);
      generative.per_class.push_back(replicate_row(x, 0, n_samples));
    }
    methods.push_back(std::move(general));
    methods.push_back(std::move(generative));
  }

  CsvWriter per_class_csv(out / "metrics" / "per_class.csv");
  per_class_csv.row({"method", "class", "n_real", "n_gen", "accuracy", "accuracy_half_width",
                     "precision", "recall", "density", "coverage", "diversity"});
  CsvWriter methods_csv(out / "metrics" / "methods.csv");
  methods_csv.row(
      {"method", "accuracy", "precision", "recall", "density", "coverage", "diversity", "fid"});

  for (const MethodSamples& ms : methods) {
    std::vector<FeatureCloud> real_clouds, gen_clouds;
    std::vector<double> accuracy;
    LabeledDataset dump;
    dump.num_classes = cfg.task.classes;
    std::size_t total = 0;
    for (const Tensor& t : ms.per_class) total += t.rows();
    Tensor dump_rows = Tensor::zeros({total, pre.generator->output_dim()});
    std::size_t dump_row = 0;

    for (std::size_t i = 0; i < art.classes.size(); ++i) {
      int c = art.classes[i];
      Tensor real_x = rows_of_class(pre.private_train, c);
      real_clouds.push_back({extractor.extract(real_x), FeatureCloud::Source::real, c});
      gen_clouds.push_back(
          {extractor.extract(ms.per_class[i]), FeatureCloud::Source::generated, c});
      accuracy.push_back(attack_accuracy(ms.per_class[i], c, pre.eval));
      for (std::size_t r = 0; r < ms.per_class[i].rows(); ++r, ++dump_row) {
        for (std::size_t j = 0; j < ms.per_class[i].cols(); ++j) {
          dump_rows.at(dump_row, j) = ms.per_class[i].at(r, j);
        }
        dump.labels.push_back(c);
      }
    }
    dump.features = std::move(dump_rows);
    save_dataset(dump, out / "samples" / (ms.name + ".vmids"));

    MethodEvaluation ev;
    ev.name = ms.name;
    ev.report = evaluate_metrics(real_clouds, gen_clouds, accuracy, cfg.metrics_k);
    if (ms.name == "vmi") {
      double kl = 0.0, ent = 0.0;
      for (const AttackResult& r : art.vmi) {
        double lk = 0.0, le = 0.0;
        for (double v : r.per_layer_kl) lk += v;
        for (double v : r.per_layer_entropy) le += v;
        kl += lk / static_cast<double>(std::max<std::size_t>(1, r.per_layer_kl.size()));
        ent += le / static_cast<double>(std::max<std::size_t>(1, r.per_layer_entropy.size()));
      }
      ev.kl_final = kl / static_cast<double>(art.vmi.size());
      ev.entropy_final = ent / static_cast<double>(art.vmi.size());
    }

    for (const ClassMetrics& m : ev.report.per_class) {
      per_class_csv.row({ms.name, std::to_string(m.label), std::to_string(m.n_real),
                         std::to_string(m.n_gen), format_double(m.accuracy),
                         format_double(m.accuracy_half_width), format_double(m.precision),
                         format_double(m.recall), format_double(m.density),
                         format_double(m.coverage), format_double(m.diversity)});
    }
    methods_csv.row({ms.name, format_double(ev.report.mean_accuracy),
                     format_double(ev.report.mean_precision), format_double(ev.report.mean_recall),
                     format_double(ev.report.mean_density), format_double(ev.report.mean_coverage),
                     format_double(ev.report.mean_diversity), format_double(ev.report.pooled_fid)});
    evaluations.push_back(std::move(ev));
  }

  json summary;
  summary["config_hash"] = cfg.config_hash();
  summary["seed"] = cfg.seed;
  summary["k"] = cfg.metrics_k;
  summary["samples_per_class"] = n_samples;
  summary["classes_attacked"] = art.classes;
  summary["gamma"] = cfg.attack.gamma;
  summary["family"] = family_kind_to_string(cfg.attack.family);
  json methods_json;
  for (const MethodEvaluation& ev : evaluations) methods_json[ev.name] = method_to_json(ev);
  summary["methods"] = std::move(methods_json);
  fs::path info_path = out / "models" / "model_info.json";
  if (fs::exists(info_path)) {
    std::ifstream is(info_path);
    summary["classifiers"] = json::parse(is);
  }
  std::ofstream os(out / "metrics" / "summary.json", std::ios::binary | std::ios::trunc);
  os << summary.dump(2) << "\n";
  return evaluations;
}

struct SweepRow {
  double gamma = 0.0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, density = 0.0, coverage = 0.0,
         diversity = 0.0, fid = 0.0, kl_final = 0.0, entropy_final = 0.0;
};

SweepRow sweep_entry(const ExperimentConfig& cfg, const Pretrained& pre, double gamma) {
  // In-memory attack + evaluation against the shared pretrained models. The
  // attack seed is shared across gammas so the sweep is a paired comparison.
  ExperimentConfig entry = cfg;
  entry.attack.gamma = gamma;
  RngStream root(entry.seed);
  ClassifierFeatures extractor(pre.eval);

  std::vector<int> classes = classes_to_attack(entry);
  std::vector<FeatureCloud> real_clouds, gen_clouds;
  std::vector<double> accuracy;
  double kl_final = 0.0, entropy_final = 0.0;
  for (int c : classes) {
    AttackConfig ac = entry.attack;
    ac.target_class = c;
    ac.seed = root.split("attack", static_cast<std::uint64_t>(c)).seed();
    AttackResult result = run_attack(ac, *pre.generator, pre.target);

    RngStream srng = root.split("eval-samples", static_cast<std::uint64_t>(c));
    Tensor samples =
        sample_family_codes(result.family, *pre.generator, entry.metrics_samples_per_class, srng);
    Tensor real_x = rows_of_class(pre.private_train, c);
    real_clouds.push_back({extractor.extract(real_x), FeatureCloud::Source::real, c});
    gen_clouds.push_back({extractor.extract(samples), FeatureCloud::Source::generated, c});
    accuracy.push_back(attack_accuracy(samples, c, pre.eval));

    double lk = 0.0, le = 0.0;
    for (double v : result.per_layer_kl) lk += v;
    for (double v : result.per_layer_entropy) le += v;
    kl_final += lk / static_cast<double>(std::max<std::size_t>(1, result.per_layer_kl.size()));
    entropy_final +=
        le / static_cast<double>(std::max<std::size_t>(1, result.per_layer_entropy.size()));
  }
  MetricsReport report = evaluate_metrics(real_clouds, gen_clouds, accuracy, entry.metrics_k);

  SweepRow row;
  row.gamma = gamma;
  row.accuracy = report.mean_accuracy;
  row.precision = report.mean_precision;
  row.recall = report.mean_recall;
  row.density = report.mean_density;
  row.coverage = report.mean_coverage;
  row.diversity = report.mean_diversity;
  row.fid = report.pooled_fid;
  row.kl_final = kl_final / static_cast<double>(classes.size());
  row.entropy_final = entropy_final / static_cast<double>(classes.size());
  return row;
}

}  // namespace

void cmd_pretrain(const ExperimentConfig& cfg, const fs::path& out) {
  with_manifest(cfg, out, "pretrain", [&] { do_pretrain(cfg, out); });
}

void cmd_attack(const ExperimentConfig& cfg, const fs::path& out) {
  with_manifest(cfg, out, "attack", [&] {
    Pretrained pre = load_pretrained(cfg, out);
    do_attacks(cfg, out, pre);
  });
}

void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
  with_manifest(cfg, out, "evaluate", [&] {
    Pretrained pre = load_pretrained(cfg, out);
    AttackArtifacts art = load_attacks(cfg, out);
    do_evaluate(cfg, out, pre, art);
  });
}

void cmd_run(const ExperimentConfig& cfg, const fs::path& out) {
  with_manifest(cfg, out, "run", [&] {
    Pretrained pre = do_pretrain(cfg, out);
    AttackArtifacts art = do_attacks(cfg, out, pre);
    do_evaluate(cfg, out, pre, art);
  });
}

void cmd_sweep(const ExperimentConfig& cfg, const fs::path& out,
               const std::vector<double>& gammas) {
  with_manifest(cfg, out, "sweep", [&] {
    if (gammas.empty()) throw std::invalid_argument("sweep: need at least one gamma");
    for (double g : gammas) {
      if (g < 0.0) throw std::invalid_argument("sweep: gammas must be >= 0");
    }
    Pretrained pre = do_pretrain(cfg, out);
    fs::create_directories(out / "sweep");

    std::vector<SweepRow> rows(gammas.size());
    unsigned workers = cfg.sweep_workers > 0 ? static_cast<unsigned>(cfg.sweep_workers)
                                             : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, gammas.size());

    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::mutex error_mutex;
    std::string first_error;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= gammas.size()) return;
          try {
            rows[i] = sweep_entry(cfg, pre, gammas[i]);
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (first_error.empty()) first_error = e.what();
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (!first_error.empty()) throw std::runtime_error("sweep: " + first_error);

    CsvWriter csv(out / "sweep" / "sweep.csv");
    csv.row({"gamma", "accuracy", "precision", "recall", "density", "coverage", "diversity",
             "fid", "kl_final", "entropy_final"});
    for (const SweepRow& r : rows) {
      csv.row({format_double(r.gamma), format_double(r.accuracy), format_double(r.precision),
               format_double(r.recall), format_double(r.density), format_double(r.coverage),
               format_double(r.diversity), format_double(r.fid), format_double(r.kl_final),
               format_double(r.entropy_final)});
    }
  });
}

}  // namespace vmi
