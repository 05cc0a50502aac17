#pragma once

#include <string>
#include <vector>

namespace vmi {

// Named views over a model's parameter storage, consumed by optimizers
// (mutable) and checkpointing (const).
struct ParamRef {
  std::string name;
  std::vector<double>* data;
};

struct ParamCRef {
  std::string name;
  const std::vector<double>* data;
};

}  // namespace vmi
