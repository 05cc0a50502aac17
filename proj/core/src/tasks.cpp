#include "vmi/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "vmi/rng.hpp"

namespace vmi {

namespace {

// Cluster means on a sphere of radius `separation`, placed repulsively: the
// best of 64 random draws by minimum pairwise distance. With the desk
// defaults (10 identities in 8 dimensions) this keeps every pair of means
// roughly a full separation apart.
std::vector<linalg::GaussianMoments> default_class_dists(const SyntheticTaskSpec& spec,
                                                         RngStream& rng) {
  std::vector<Tensor> best;
  double best_min = -1.0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<Tensor> means;
    means.reserve(spec.classes);
    for (int c = 0; c < spec.classes; ++c) {
      Tensor mean = Tensor::zeros({1, spec.code_dim});
      double norm = 0.0;
      while (norm < 1e-9) {
        norm = 0.0;
        for (std::size_t i = 0; i < spec.code_dim; ++i) {
          mean.at(0, i) = rng.normal();
          norm += mean.at(0, i) * mean.at(0, i);
        }
        norm = std::sqrt(norm);
      }
      for (std::size_t i = 0; i < spec.code_dim; ++i) {
        mean.at(0, i) *= spec.separation / norm;
      }
      means.push_back(std::move(mean));
    }
    double min_dist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < spec.classes; ++a) {
      for (int b = a + 1; b < spec.classes; ++b) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < spec.code_dim; ++i) {
          double diff = means[a].at(0, i) - means[b].at(0, i);
          d2 += diff * diff;
        }
        min_dist = std::min(min_dist, std::sqrt(d2));
      }
    }
    if (min_dist > best_min) {
      best_min = min_dist;
      best = std::move(means);
    }
  }
  std::vector<linalg::GaussianMoments> dists;
  dists.reserve(spec.classes);
  for (Tensor& mean : best) {
    Tensor cov = Tensor::identity(spec.code_dim);
    for (std::size_t i = 0; i < spec.code_dim; ++i) {
      cov.at(i, i) = spec.class_std * spec.class_std;
    }
    dists.push_back({std::move(mean), std::move(cov)});
  }
  return dists;
}

std::shared_ptr<Generator> make_task_generator(const SyntheticTaskSpec& spec, RngStream& rng) {
  if (spec.generator == GeneratorKind::linear) {
    // Random full-column-rank map; retry on the (unlikely) degenerate draw.
    for (int attempt = 0; attempt < 16; ++attempt) {
      Tensor a = Tensor::randn({spec.data_dim, spec.code_dim}, rng);
      for (double& v : a.mutable_data()) v /= std::sqrt(static_cast<double>(spec.code_dim));
      if (linalg::smallest_singular_value(a) > 1e-6) {
        std::vector<double> bias(spec.data_dim);
        for (double& v : bias) v = 0.5 * rng.normal();
        return std::make_shared<LinearGaussianGenerator>(std::move(a), std::move(bias),
                                                         spec.noise_sigma);
      }
    }
    throw std::runtime_error("make_synthetic_task: could not draw a full-rank linear map");
  }
  LayeredGenerator::Config gc;
  gc.code_dim = spec.code_dim;
  gc.output_dim = spec.data_dim;
  gc.sigma = spec.noise_sigma;
  return std::make_shared<LayeredGenerator>(gc, rng);
}

LabeledDataset draw_through_generator(const Generator& gen,
                                      const std::vector<linalg::GaussianMoments>& dists,
                                      std::size_t per_class, int classes, SplitTag tag,
                                      RngStream& rng) {
  const std::size_t n = per_class * static_cast<std::size_t>(classes);
  LabeledDataset ds;
  ds.num_classes = classes;
  ds.tag = tag;
  ds.labels.resize(n);
  Tensor all = Tensor::zeros({n, gen.output_dim()});
  std::size_t row = 0;
  for (int c = 0; c < classes; ++c) {
    Tensor codes = linalg::sample_mvn(dists[c], per_class, rng);
    Tensor noise = Tensor::randn({per_class, gen.output_dim()}, rng);
    std::vector<Tensor> per_layer(gen.num_layers(), codes);
    Tensor x = gen.synthesize(per_layer, /*are_styles=*/false,
                              gen.noise_sigma() > 0.0 ? &noise : nullptr);
    for (std::size_t r = 0; r < per_class; ++r, ++row) {
      for (std::size_t j = 0; j < gen.output_dim(); ++j) all.at(row, j) = x.at(r, j);
      ds.labels[row] = c;
    }
  }
  ds.features = std::move(all);
  return ds;
}

}  // namespace

TaskBundle make_synthetic_task(const SyntheticTaskSpec& spec, RngStream& rng) {
  if (spec.classes < 2) throw std::invalid_argument("make_synthetic_task: need >= 2 classes");
  if (spec.samples_per_class == 0) {
    throw std::invalid_argument("make_synthetic_task: samples_per_class must be >= 1");
  }
  if (spec.aux_samples == 0) {
    throw std::invalid_argument("make_synthetic_task: aux_samples must be >= 1");
  }
  if (!spec.class_dists.empty() &&
      spec.class_dists.size() != static_cast<std::size_t>(spec.classes)) {
    throw std::invalid_argument("make_synthetic_task: class_dists size mismatch");
  }
  if (spec.test_fraction < 0.0 || spec.test_fraction >= 1.0) {
    throw std::invalid_argument("make_synthetic_task: test_fraction must be in [0, 1)");
  }

  TaskBundle bundle;
  RngStream gen_rng = rng.split("task-generator");
  RngStream dist_rng = rng.split("task-class-dists");
  RngStream private_rng = rng.split("task-private");
  RngStream aux_rng = rng.split("task-aux");

  bundle.true_generator = make_task_generator(spec, gen_rng);
  bundle.class_code_dists =
      spec.class_dists.empty() ? default_class_dists(spec, dist_rng) : spec.class_dists;

  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = 0; a < spec.classes; ++a) {
    for (int b = a + 1; b < spec.classes; ++b) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < spec.code_dim; ++i) {
        double diff = bundle.class_code_dists[a].mean.at(0, i) -
                      bundle.class_code_dists[b].mean.at(0, i);
        d2 += diff * diff;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  }
  if (min_dist < spec.min_separation) {
    bundle.warnings.push_back("class code means closer than min_separation: " +
                              std::to_string(min_dist));
  }

  // Private data: per-class clusters through the common generator, split into
  // train and held-out test rows per class.
  LabeledDataset all_private =
      draw_through_generator(*bundle.true_generator, bundle.class_code_dists,
                             spec.samples_per_class, spec.classes, SplitTag::private_train,
                             private_rng);
  std::size_t test_per_class =
      static_cast<std::size_t>(std::floor(spec.test_fraction * spec.samples_per_class));
  std::size_t train_per_class = spec.samples_per_class - test_per_class;
  if (train_per_class == 0) {
    throw std::invalid_argument("make_synthetic_task: test_fraction leaves no training rows");
  }

  auto slice_split = [&](bool test_rows) {
    std::size_t per = test_rows ? test_per_class : train_per_class;
    LabeledDataset out;
    out.num_classes = spec.classes;
    out.tag = test_rows ? SplitTag::private_test : SplitTag::private_train;
    if (per == 0) return out;  // empty (validated by caller when used)
    out.labels.resize(per * spec.classes);
    Tensor feats = Tensor::zeros({per * spec.classes, spec.data_dim});
    std::size_t row = 0;
    for (int c = 0; c < spec.classes; ++c) {
      std::size_t base = static_cast<std::size_t>(c) * spec.samples_per_class +
                         (test_rows ? train_per_class : 0);
      for (std::size_t r = 0; r < per; ++r, ++row) {
        for (std::size_t j = 0; j < spec.data_dim; ++j) {
          feats.at(row, j) = all_private.features.at(base + r, j);
        }
        out.labels[row] = c;
      }
    }
    out.features = std::move(feats);
    return out;
  };
  bundle.private_train = slice_split(false);
  bundle.private_test = slice_split(true);

  // Auxiliary data: codes from the GAN prior N(0, I) through the same
  // generator.
  linalg::GaussianMoments prior{Tensor::zeros({1, spec.code_dim}),
                                Tensor::identity(spec.code_dim)};
  Tensor aux_codes = linalg::sample_mvn(prior, spec.aux_samples, aux_rng);
  Tensor aux_noise = Tensor::randn({spec.aux_samples, spec.data_dim}, aux_rng);
  std::vector<Tensor> per_layer(bundle.true_generator->num_layers(), aux_codes);
  Tensor aux_x = bundle.true_generator->synthesize(
      per_layer, false, spec.noise_sigma > 0.0 ? &aux_noise : nullptr);
  bundle.auxiliary.features = std::move(aux_x);
  bundle.auxiliary.labels.assign(spec.aux_samples, 0);
  bundle.auxiliary.num_classes = 1;
  bundle.auxiliary.tag = SplitTag::auxiliary;
  return bundle;
}

std::pair<LabeledDataset, LabeledDataset> split_identities(const LabeledDataset& dataset,
                                                           int n_target) {
  dataset.validate();
  std::vector<std::size_t> counts(dataset.num_classes, 0);
  for (int y : dataset.labels) ++counts[y];
  int identities = 0;
  for (std::size_t c : counts) {
    if (c > 0) ++identities;
  }
  if (n_target < 1 || n_target >= identities) {
    throw std::invalid_argument("split_identities: n_target " + std::to_string(n_target) +
                                " must be in [1, " + std::to_string(identities) + ")");
  }
  // Sort labels by (count desc, label asc); the prefix becomes the target.
  std::vector<int> order;
  for (int c = 0; c < dataset.num_classes; ++c) {
    if (counts[c] > 0) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return counts[a] != counts[b] ? counts[a] > counts[b] : a < b; });
  std::vector<bool> is_target(dataset.num_classes, false);
  for (int i = 0; i < n_target; ++i) is_target[order[i]] = true;

  auto build = [&](bool target_rows, SplitTag tag) {
    LabeledDataset out;
    out.num_classes = dataset.num_classes;
    out.tag = tag;
    std::size_t n = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (is_target[dataset.labels[i]] == target_rows) ++n;
    }
    Tensor feats = Tensor::zeros({n, dataset.dim()});
    out.labels.resize(n);
    std::size_t row = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (is_target[dataset.labels[i]] != target_rows) continue;
      for (std::size_t j = 0; j < dataset.dim(); ++j) feats.at(row, j) = dataset.features.at(i, j);
      out.labels[row] = dataset.labels[i];
      ++row;
    }
    out.features = std::move(feats);
    return out;
  };
  return {build(true, SplitTag::private_train), build(false, SplitTag::auxiliary)};
}

}  // namespace vmi
