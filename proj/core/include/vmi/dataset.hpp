#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vmi/tensor.hpp"

namespace vmi {

enum class SplitTag { private_train, private_test, auxiliary, unspecified };

// Labeled rows with a fixed class count. Labels are 0-based, < num_classes.
struct LabeledDataset {
  Tensor features;          // n x d
  std::vector<int> labels;  // length n
  int num_classes = 0;
  SplitTag tag = SplitTag::unspecified;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  void validate() const;  // throws on inconsistency
};

// Binary dataset file, magic "VMIDS1\0":
//   u32 n, u32 d, u32 C (little endian)
//   n*d float32, row-major
//   n   uint16 labels
// Storage is 32-bit for compactness; computation upcasts to 64-bit.
void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace vmi
