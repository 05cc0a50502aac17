#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "vmi/checkpoint.hpp"
#include "vmi/config.hpp"
#include "vmi/experiment.hpp"
#include "vmi/report.hpp"
#include "vmi/rng.hpp"

using namespace vmi;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vmi_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

const std::string kSmokeConfig = R"(
# two-class smoke pipeline
seed = 11
task.classes = 2
task.code_dim = 4
task.data_dim = 8
task.samples_per_class = 60
task.aux_samples = 200
models.target.epochs = 15
models.eval.epochs = 15
attack.family = gaussian
attack.gamma = 0.001
attack.steps = 60
attack.n_mc = 16
baselines.general_steps = 50
baselines.generative_steps = 50
metrics.k = 3
metrics.samples_per_class = 40
)";

}  // namespace

TEST_CASE("config parses defaults and validates") {
  ExperimentConfig cfg = ExperimentConfig::parse_string("seed = 5\n");
  CHECK(cfg.seed == 5);
  CHECK(cfg.task.classes == 10);
  CHECK(cfg.attack.steps == 2000);
  CHECK(cfg.metrics_k == 5);
}

TEST_CASE("config rejects unknown keys with the line number") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_string("seed = 5\nattack.gama = 0.1\n"),
                       doctest::Contains("line 2: unknown key 'attack.gama'"),
                       std::invalid_argument);
}

TEST_CASE("config rejects duplicate keys, bad values, and a missing seed") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_string("seed = 5\nseed = 6\n"),
                       doctest::Contains("duplicate key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_string("seed = 5\nattack.gamma = -2\n"),
                       doctest::Contains("attack.gamma"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_string("task.classes = 4\n"),
                       doctest::Contains("seed"), std::invalid_argument);
}

TEST_CASE("files task kind requires dataset paths") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_string("seed = 1\ntask.kind = files\n"),
                       doctest::Contains("task.private_train"), std::invalid_argument);
}

TEST_CASE("config hash is stable and tracks content") {
  ExperimentConfig a = ExperimentConfig::parse_string("seed = 5\n");
  ExperimentConfig b = ExperimentConfig::parse_string("seed = 5\nmetrics.k = 5\n");
  ExperimentConfig c = ExperimentConfig::parse_string("seed = 5\nmetrics.k = 4\n");
  CHECK(a.config_hash() == b.config_hash());  // explicit default == default
  CHECK(a.config_hash() != c.config_hash());
  // Canonical string re-parses to the same hash.
  ExperimentConfig round = ExperimentConfig::parse_string(a.canonical_string());
  CHECK(round.config_hash() == a.config_hash());
}

TEST_CASE("gaussian family checkpoint round trip is bit exact") {
  RngStream rng(1);
  LayeredVariational fam;
  std::vector<double> mu(6), ls(6);
  for (double& v : mu) v = rng.normal();
  for (double& v : ls) v = 0.3 * rng.normal();
  fam.layers.emplace_back(GaussianFamily(mu, ls));

  fs::path dir = temp_dir("family");
  save_family(fam, dir / "fam.vmick");
  LayeredVariational back = load_family(dir / "fam.vmick");
  const auto& g = std::get<GaussianFamily>(back.layers[0]);
  CHECK(g.mean() == mu);
  CHECK(g.log_std() == ls);
  fs::remove_all(dir);
}

TEST_CASE("flow checkpoint reload reproduces log probs bit-exactly") {
  RngStream rng(2);
  CouplingFlow flow = CouplingFlow::make(6, 4, 8, rng);
  for (ParamRef p : flow.mutable_params()) {
    for (double& v : *p.data) v += 0.1 * rng.normal();
  }
  LayeredVariational fam;
  fam.layers.emplace_back(flow);

  fs::path dir = temp_dir("flow");
  save_family(fam, dir / "flow.vmick");
  LayeredVariational back = load_family(dir / "flow.vmick");
  const auto& restored = std::get<CouplingFlow>(back.layers[0]);

  Tensor probes = Tensor::randn({100, 6}, rng);
  std::vector<double> lp1 = flow.log_prob(probes);
  std::vector<double> lp2 = restored.log_prob(probes);
  for (std::size_t i = 0; i < lp1.size(); ++i) CHECK(lp1[i] == lp2[i]);
  fs::remove_all(dir);
}

TEST_CASE("classifier checkpoint round trip and type tag checks") {
  RngStream rng(3);
  Classifier c(5, {8}, 3, rng);
  fs::path dir = temp_dir("classifier");
  save_classifier(c, dir / "c.vmick");
  Classifier back = load_classifier(dir / "c.vmick");
  Tensor probe = Tensor::randn({7, 5}, rng);
  Tensor l1 = c.logits(probe);
  Tensor l2 = back.logits(probe);
  for (std::size_t i = 0; i < l1.numel(); ++i) CHECK(l1.data()[i] == l2.data()[i]);

  // Loading a classifier checkpoint as a generator is a type-tag error.
  CHECK_THROWS_WITH_AS(load_generator(dir / "c.vmick"), doctest::Contains("type tag"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(load_discriminator(dir / "c.vmick"), doctest::Contains("type tag"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("generator checkpoints round trip for both kinds") {
  RngStream rng(4);
  fs::path dir = temp_dir("generator");

  LinearGaussianGenerator lin(Tensor::randn({5, 3}, rng), {0.1, 0.2, 0.3, 0.4, 0.5}, 0.25);
  save_generator(lin, dir / "lin.vmick");
  std::shared_ptr<Generator> lin_back = load_generator(dir / "lin.vmick");
  Tensor z = Tensor::randn({6, 3}, rng);
  Tensor x1 = lin.generate(z);
  Tensor x2 = lin_back->generate(z);
  for (std::size_t i = 0; i < x1.numel(); ++i) CHECK(x1.data()[i] == x2.data()[i]);
  CHECK(lin_back->noise_sigma() == 0.25);

  LayeredGenerator::Config cfg;
  cfg.code_dim = 3;
  cfg.layers = 2;
  cfg.output_dim = 5;
  LayeredGenerator layered(cfg, rng);
  save_generator(layered, dir / "layered.vmick");
  std::shared_ptr<Generator> layered_back = load_generator(dir / "layered.vmick");
  Tensor y1 = layered.generate(z);
  Tensor y2 = layered_back->generate(z);
  for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
  fs::remove_all(dir);
}

TEST_CASE("truncated checkpoint is an error") {
  fs::path dir = temp_dir("truncated");
  RngStream rng(5);
  Classifier c(3, {4}, 2, rng);
  save_classifier(c, dir / "c.vmick");
  auto bytes = file_bytes(dir / "c.vmick");
  {
    std::ofstream os(dir / "cut.vmick", std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_classifier(dir / "cut.vmick"), doctest::Contains("truncated"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("csv writer quotes per RFC and ends lines with LF") {
  fs::path dir = temp_dir("csv");
  {
    CsvWriter w(dir / "t.csv");
    w.row({"plain", "has,comma", "has\"quote"});
  }
  auto bytes = file_bytes(dir / "t.csv");
  std::string content(bytes.begin(), bytes.end());
  CHECK(content == "plain,\"has,comma\",\"has\"\"quote\"\n");
  auto rows = read_csv(dir / "t.csv");
  CHECK(rows[0][1] == "has,comma");
  CHECK(rows[0][2] == "has\"quote");
  fs::remove_all(dir);
}

TEST_CASE("full pipeline smoke run emits a valid, reproducible report") {
  ExperimentConfig cfg = ExperimentConfig::parse_string(kSmokeConfig);
  fs::path out1 = temp_dir("run1");
  fs::path out2 = temp_dir("run2");
  cmd_run(cfg, out1);
  cmd_run(cfg, out2);

  std::vector<std::string> problems = validate_report_files(out1);
  for (const std::string& p : problems) MESSAGE(p);
  CHECK(problems.empty());

  // Byte-identical reports under the same seed (manifest timestamps aside).
  for (const char* rel : {"metrics/per_class.csv", "metrics/methods.csv", "metrics/summary.json",
                          "attacks/traces.csv", "attacks/layer_diagnostics.csv", "config.txt",
                          "samples/vmi.vmids"}) {
    CHECK(file_bytes(out1 / rel) == file_bytes(out2 / rel));
  }

  // The metrics CSV carries rows for all three methods.
  auto rows = read_csv(out1 / "metrics" / "methods.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[1][0] == "vmi");
  CHECK(rows[2][0] == "general_mi");
  CHECK(rows[3][0] == "generative_mi");

  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("staged pipeline matches artifacts written by the stages") {
  ExperimentConfig cfg = ExperimentConfig::parse_string(kSmokeConfig);
  fs::path staged = temp_dir("staged");
  cmd_pretrain(cfg, staged);
  cmd_attack(cfg, staged);
  cmd_evaluate(cfg, staged);
  std::vector<std::string> problems = validate_report_files(staged);
  for (const std::string& p : problems) MESSAGE(p);
  CHECK(problems.empty());
  fs::remove_all(staged);
}

TEST_CASE("mid-run failure leaves partial outputs and a failure record") {
  ExperimentConfig cfg = ExperimentConfig::parse_string(
      "seed = 3\ntask.kind = files\ntask.private_train = /nonexistent/a.vmids\n"
      "task.private_test = /nonexistent/b.vmids\ntask.auxiliary = /nonexistent/c.vmids\n"
      "models.generator_mode = gan\n");
  fs::path out = temp_dir("failing");
  CHECK_THROWS_AS(cmd_run(cfg, out), std::runtime_error);
  REQUIRE(fs::exists(out / "manifest.json"));
  std::ifstream is(out / "manifest.json");
  std::string manifest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(manifest.find("\"status\": \"failed\"") != std::string::npos);
  CHECK(manifest.find("\"error\"") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("sweep emits one row per gamma with the documented columns") {
  ExperimentConfig cfg = ExperimentConfig::parse_string(kSmokeConfig);
  cfg.attack.steps = 40;
  fs::path out = temp_dir("sweep");
  cmd_sweep(cfg, out, {0.0, 1e-3, 1e-1});
  auto rows = read_csv(out / "sweep" / "sweep.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"gamma", "accuracy", "precision", "recall", "density",
                                            "coverage", "diversity", "fid", "kl_final",
                                            "entropy_final"});
  CHECK(rows[1][0] == "0");
  CHECK(rows[2][0] == "0.001");
  CHECK(rows[3][0] == "0.1");
  fs::remove_all(out);
}

TEST_CASE("cli binary runs the pipeline end to end") {
  const char* cli = std::getenv("VMI_CLI");
  if (!cli) {
    MESSAGE("VMI_CLI not set; skipping binary smoke test");
    return;
  }
  fs::path dir = temp_dir("binary");
  fs::path config_path = dir / "smoke.cfg";
  {
    std::ofstream os(config_path);
    os << kSmokeConfig;
  }
  fs::path out = dir / "out";
  std::string command = std::string("\"") + cli + "\" run --config " + config_path.string() +
                        " --out " + out.string() + " > " + (dir / "stdout.txt").string() + " 2>&1";
  int rc = std::system(command.c_str());
  CHECK(rc == 0);
  CHECK(validate_report_files(out).empty());

  // Unknown config key: nonzero exit and a diagnostic on stderr.
  {
    std::ofstream os(config_path, std::ios::trunc);
    os << "seed = 1\nnot.a.key = 2\n";
  }
  rc = std::system(command.c_str());
  CHECK(rc != 0);
  fs::remove_all(dir);
}
