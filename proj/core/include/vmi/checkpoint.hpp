#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vmi/models.hpp"
#include "vmi/variational.hpp"

namespace vmi {

// Binary checkpoint, magic "VMICK1\0":
//   type tag        (u32 length + bytes)
//   u32 block count
//   per block: u32 name length + name, u64 element count, float64 LE data
// Doubles are written raw, so reload is bit-exact. Structural integers
// (dims, permutations) ride along in "arch"/"perm" blocks.
struct CheckpointBlock {
  std::string name;
  std::vector<double> data;
};

struct Checkpoint {
  std::string type_tag;
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock& block(const std::string& name) const;  // throws if missing
};

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Typed wrappers. Loading checks the type tag and fails on mismatch.
void save_family(const LayeredVariational& family, const std::filesystem::path& path);
LayeredVariational load_family(const std::filesystem::path& path);

void save_classifier(const Classifier& c, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

void save_discriminator(const Discriminator& d, const std::filesystem::path& path);
Discriminator load_discriminator(const std::filesystem::path& path);

void save_generator(const Generator& g, const std::filesystem::path& path);
std::shared_ptr<Generator> load_generator(const std::filesystem::path& path);

}  // namespace vmi
