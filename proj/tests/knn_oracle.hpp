#pragma once

// O(n^2) reference implementations of the k-NN-ball metrics, kept separate
// from the production k-d path. Both share squared_distance so comparisons
// see identical floats.

#include <algorithm>
#include <vector>

#include "vmi/metrics.hpp"

namespace knn_oracle {

inline std::span<const double> row_of(const vmi::Tensor& t, std::size_t r) {
  return {t.data().data() + r * t.cols(), t.cols()};
}

inline std::vector<double> radii(const vmi::Tensor& cloud, int k) {
  std::vector<double> out(cloud.rows());
  std::vector<double> dists;
  for (std::size_t i = 0; i < cloud.rows(); ++i) {
    dists.clear();
    for (std::size_t j = 0; j < cloud.rows(); ++j) {
      if (j == i) continue;
      dists.push_back(vmi::squared_distance(row_of(cloud, i), row_of(cloud, j)));
    }
    std::nth_element(dists.begin(), dists.begin() + (k - 1), dists.end());
    out[i] = dists[k - 1];
  }
  return out;
}

inline vmi::PrResult precision_recall(const vmi::Tensor& real, const vmi::Tensor& gen, int k) {
  std::vector<double> rr = radii(real, k);
  std::vector<double> gr = radii(gen, k);
  std::size_t in_real = 0;
  for (std::size_t g = 0; g < gen.rows(); ++g) {
    for (std::size_t r = 0; r < real.rows(); ++r) {
      if (vmi::squared_distance(row_of(gen, g), row_of(real, r)) <= rr[r]) {
        ++in_real;
        break;
      }
    }
  }
  std::size_t in_gen = 0;
  for (std::size_t r = 0; r < real.rows(); ++r) {
    for (std::size_t g = 0; g < gen.rows(); ++g) {
      if (vmi::squared_distance(row_of(real, r), row_of(gen, g)) <= gr[g]) {
        ++in_gen;
        break;
      }
    }
  }
  return {static_cast<double>(in_real) / static_cast<double>(gen.rows()),
          static_cast<double>(in_gen) / static_cast<double>(real.rows())};
}

inline vmi::DcResult density_coverage(const vmi::Tensor& real, const vmi::Tensor& gen, int k) {
  std::vector<double> rr = radii(real, k);
  std::size_t hits = 0;
  for (std::size_t g = 0; g < gen.rows(); ++g) {
    for (std::size_t r = 0; r < real.rows(); ++r) {
      if (vmi::squared_distance(row_of(gen, g), row_of(real, r)) <= rr[r]) ++hits;
    }
  }
  std::size_t covered = 0;
  for (std::size_t r = 0; r < real.rows(); ++r) {
    for (std::size_t g = 0; g < gen.rows(); ++g) {
      if (vmi::squared_distance(row_of(real, r), row_of(gen, g)) <= rr[r]) {
        ++covered;
        break;
      }
    }
  }
  return {static_cast<double>(hits) / (static_cast<double>(k) * static_cast<double>(gen.rows())),
          static_cast<double>(covered) / static_cast<double>(real.rows())};
}

}  // namespace knn_oracle
