#pragma once

#include <string>
#include <vector>

#include "vmi/params.hpp"
#include "vmi/tensor.hpp"

namespace vmi {

struct OptimizerConfig {
  enum class Kind { adam, sgd };
  Kind kind = Kind::adam;
  double lr = 1e-2;
  double momentum = 0.0;   // sgd only
  double beta1 = 0.9;      // adam
  double beta2 = 0.999;    // adam
  double eps = 1e-8;       // adam
  // Optional cosine decay of the learning rate to ~0 over total_steps.
  bool cosine_decay = false;
  int total_steps = 0;
};

OptimizerConfig::Kind optimizer_kind_from_string(const std::string& s);

// First-order updates over named parameter vectors. Gradients are passed per
// step aligned with the parameter list handed to the constructor.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<ParamRef> params);

  void step(const std::vector<std::vector<double>>& grads);
  int steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<ParamRef> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
};

}  // namespace vmi
