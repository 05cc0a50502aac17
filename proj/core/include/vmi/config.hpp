#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vmi/attacks.hpp"
#include "vmi/models.hpp"
#include "vmi/tasks.hpp"

namespace vmi {

// Flat key-value experiment configuration with dotted sections. Unknown or
// duplicate keys are rejected with line-addressed errors; the seed is
// mandatory. canonical_string() re-serializes every key in a fixed order,
// which is what config_hash() digests.
struct ExperimentConfig {
  std::uint64_t seed = 0;

  // task.*
  std::string task_kind = "synthetic";  // synthetic | files
  SyntheticTaskSpec task;
  std::string task_private_train;
  std::string task_private_test;
  std::string task_auxiliary;

  // models.*
  std::string generator_mode = "oracle";  // oracle | gan
  ClassifierHyperparams target_classifier;
  ClassifierHyperparams eval_classifier{.hidden = {48}, .epochs = 60};
  GanHyperparams gan;
  int discriminator_steps = 400;  // oracle mode: D-only fitting for generative MI

  // attack.*
  AttackConfig attack;
  std::vector<int> attack_classes;  // empty = all classes

  // baselines.*
  bool baselines_enabled = true;
  int general_steps = 400;
  double general_lr = 0.1;
  int generative_steps = 1500;
  double generative_lr = 0.05;
  double generative_lambda = 100.0;

  // metrics.*
  int metrics_k = 5;
  std::size_t metrics_samples_per_class = 100;

  // sweep.*
  std::vector<double> sweep_gammas = {0.0, 1e-3, 1e-1};
  int sweep_workers = 0;  // 0 = hardware concurrency

  static ExperimentConfig parse_file(const std::filesystem::path& path);
  static ExperimentConfig parse_string(const std::string& text);

  std::string canonical_string() const;
  std::string config_hash() const;  // fnv1a-64 of canonical_string, hex
  void validate() const;
};

}  // namespace vmi
