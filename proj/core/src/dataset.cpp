#include "vmi/dataset.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace vmi {

namespace {

constexpr char kMagic[7] = {'V', 'M', 'I', 'D', 'S', '1', '\0'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("dataset: truncated file");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void LabeledDataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset: empty");
  if (features.ndim() != 2 || features.rows() != labels.size()) {
    throw std::invalid_argument("dataset: features " + features.shape_string() + " for " +
                                std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw std::invalid_argument("dataset: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  const std::size_t n = ds.size();
  const std::size_t d = ds.dim();
  if (n > std::numeric_limits<std::uint32_t>::max() || d > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("dataset: dimension overflow for VMIDS1");
  }
  if (ds.num_classes > 65536) {
    throw std::invalid_argument("dataset: label overflow for VMIDS1 (labels are u16)");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("dataset: cannot open " + path.string() + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, static_cast<std::uint32_t>(n));
  write_u32(os, static_cast<std::uint32_t>(d));
  write_u32(os, static_cast<std::uint32_t>(ds.num_classes));
  std::vector<float> row(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) row[c] = static_cast<float>(ds.features.at(r, c));
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(d * sizeof(float)));
  }
  for (std::size_t r = 0; r < n; ++r) {
    std::uint16_t y = static_cast<std::uint16_t>(ds.labels[r]);
    unsigned char b[2] = {static_cast<unsigned char>(y), static_cast<unsigned char>(y >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!os) throw std::runtime_error("dataset: write failed for " + path.string());
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open " + path.string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic))) throw std::runtime_error("dataset: truncated file");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("dataset: bad magic in " + path.string());
  }
  std::uint32_t n = read_u32(is);
  std::uint32_t d = read_u32(is);
  std::uint32_t c = read_u32(is);
  if (n == 0 || d == 0 || c == 0) throw std::runtime_error("dataset: degenerate header");
  if (static_cast<std::uint64_t>(n) * d > (1ull << 31)) {
    throw std::runtime_error("dataset: dimension overflow in header");
  }
  LabeledDataset ds;
  ds.num_classes = static_cast<int>(c);
  Tensor features = Tensor::zeros({n, d});
  std::vector<float> row(d);
  for (std::uint32_t r = 0; r < n; ++r) {
    if (!is.read(reinterpret_cast<char*>(row.data()),
                 static_cast<std::streamsize>(d * sizeof(float)))) {
      throw std::runtime_error("dataset: truncated file");
    }
    for (std::uint32_t j = 0; j < d; ++j) features.at(r, j) = static_cast<double>(row[j]);
  }
  ds.labels.resize(n);
  for (std::uint32_t r = 0; r < n; ++r) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2)) throw std::runtime_error("dataset: truncated file");
    ds.labels[r] = static_cast<int>(b[0] | (b[1] << 8));
  }
  ds.features = std::move(features);
  ds.validate();
  return ds;
}

}  // namespace vmi
