#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vmi/dataset.hpp"
#include "vmi/linalg.hpp"
#include "vmi/models.hpp"

namespace vmi {

// Everything needed to run and score an attack with known ground truth.
// Private and auxiliary data come from the same generator; only the code
// distribution differs (auxiliary N(0,I), private per-class clusters).
struct TaskBundle {
  LabeledDataset private_train;
  LabeledDataset private_test;
  LabeledDataset auxiliary;
  std::shared_ptr<Generator> true_generator;               // null for file-backed tasks
  std::vector<linalg::GaussianMoments> class_code_dists;   // per class, synthetic only
  std::vector<std::string> warnings;
};

enum class GeneratorKind { linear, layered };

struct SyntheticTaskSpec {
  std::size_t code_dim = 8;
  std::size_t data_dim = 16;
  int classes = 10;
  std::size_t samples_per_class = 200;
  std::size_t aux_samples = 5000;
  GeneratorKind generator = GeneratorKind::linear;
  double noise_sigma = 0.0;
  // Class cluster geometry: means on a sphere of radius `separation`,
  // isotropic std `class_std`. Explicit dists override both.
  double separation = 4.0;
  double class_std = 0.45;
  double min_separation = 1.0;  // closer cluster means record a warning
  std::vector<linalg::GaussianMoments> class_dists;  // optional override
  double test_fraction = 0.2;
};

TaskBundle make_synthetic_task(const SyntheticTaskSpec& spec, RngStream& rng);

// The n_target most frequent identities (ties broken by lower label index)
// become the target set; the rest are auxiliary. Exact disjoint partition.
std::pair<LabeledDataset, LabeledDataset> split_identities(const LabeledDataset& dataset,
                                                           int n_target);

}  // namespace vmi
