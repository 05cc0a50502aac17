#include "vmi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace vmi {

namespace {

// Conservative slack on pruning bounds: boxes may only be skipped when they
// are strictly farther than the target radius by more than accumulated ulp
// noise, so leaf comparisons decide every borderline case exactly.
constexpr double kPruneSlack = 1e-9;

std::span<const double> row_of(const Tensor& t, std::size_t r) {
  return {t.data().data() + r * t.cols(), t.cols()};
}

// Median-split k-d tree over tensor rows. All membership decisions happen at
// the leaves through squared_distance, which keeps results identical to an
// exhaustive scan.
class KdTree {
 public:
  explicit KdTree(const Tensor& pts) : pts_(&pts), dim_(pts.cols()) {
    idx_.resize(pts.rows());
    std::iota(idx_.begin(), idx_.end(), 0);
    root_ = build(0, idx_.size());
  }

  // Squared distance to the k-th nearest neighbor of row `self`, self excluded.
  double kth_sq_radius(std::size_t self, int k) const {
    std::vector<double> heap;  // max-heap of the k best squared distances
    heap.reserve(k);
    knn(root_, row_of(*pts_, self), self, static_cast<std::size_t>(k), heap);
    return heap.front();
  }

  // Is any point p with sq_dist(q, p) <= sq_radii[p]? max_sq_radius bounds
  // the per-point radii for pruning.
  bool any_ball_contains(std::span<const double> q, const std::vector<double>& sq_radii,
                         double max_sq_radius) const {
    return search_balls(root_, q, sq_radii, max_sq_radius, nullptr);
  }

  std::size_t count_balls_containing(std::span<const double> q,
                                     const std::vector<double>& sq_radii,
                                     double max_sq_radius) const {
    std::size_t count = 0;
    search_balls(root_, q, sq_radii, max_sq_radius, &count);
    return count;
  }

  // Is any point within sq_radius of q?
  bool any_within(std::span<const double> q, double sq_radius) const {
    return search_fixed(root_, q, sq_radius);
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin = 0, end = 0;  // leaf range into idx_
    int left = -1, right = -1;
    std::vector<double> box_min, box_max;
    bool leaf() const { return left < 0; }
  };

  int build(std::size_t begin, std::size_t end) {
    Node nd;
    nd.begin = begin;
    nd.end = end;
    nd.box_min.assign(dim_, std::numeric_limits<double>::infinity());
    nd.box_max.assign(dim_, -std::numeric_limits<double>::infinity());
    for (std::size_t i = begin; i < end; ++i) {
      std::span<const double> p = row_of(*pts_, idx_[i]);
      for (std::size_t d = 0; d < dim_; ++d) {
        nd.box_min[d] = std::min(nd.box_min[d], p[d]);
        nd.box_max[d] = std::max(nd.box_max[d], p[d]);
      }
    }
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(nd));
    if (end - begin > kLeafSize) {
      std::size_t axis = 0;
      double width = -1.0;
      for (std::size_t d = 0; d < dim_; ++d) {
        double w = nodes_[id].box_max[d] - nodes_[id].box_min[d];
        if (w > width) {
          width = w;
          axis = d;
        }
      }
      std::size_t mid = (begin + end) / 2;
      std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                       [&](std::size_t a, std::size_t b) {
                         return pts_->at(a, axis) < pts_->at(b, axis);
                       });
      int l = build(begin, mid);
      int r = build(mid, end);
      nodes_[id].left = l;
      nodes_[id].right = r;
    }
    return id;
  }

  double box_sq_dist(const Node& nd, std::span<const double> q) const {
    double acc = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) {
      double gap = 0.0;
      if (q[d] < nd.box_min[d]) gap = nd.box_min[d] - q[d];
      else if (q[d] > nd.box_max[d]) gap = q[d] - nd.box_max[d];
      acc += gap * gap;
    }
    return acc;
  }

  void knn(int node_id, std::span<const double> q, std::size_t exclude, std::size_t k,
           std::vector<double>& heap) const {
    const Node& nd = nodes_[node_id];
    double worst = heap.size() == k ? heap.front() : std::numeric_limits<double>::infinity();
    if (box_sq_dist(nd, q) > worst * (1.0 + kPruneSlack)) return;
    if (nd.leaf()) {
      for (std::size_t i = nd.begin; i < nd.end; ++i) {
        std::size_t p = idx_[i];
        if (p == exclude) continue;
        double d2 = squared_distance(q, row_of(*pts_, p));
        if (heap.size() < k) {
          heap.push_back(d2);
          std::push_heap(heap.begin(), heap.end());
        } else if (d2 < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = d2;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    // Visit the nearer child first so the heap tightens quickly.
    double dl = box_sq_dist(nodes_[nd.left], q);
    double dr = box_sq_dist(nodes_[nd.right], q);
    if (dl <= dr) {
      knn(nd.left, q, exclude, k, heap);
      knn(nd.right, q, exclude, k, heap);
    } else {
      knn(nd.right, q, exclude, k, heap);
      knn(nd.left, q, exclude, k, heap);
    }
  }

  bool search_balls(int node_id, std::span<const double> q, const std::vector<double>& sq_radii,
                    double max_sq_radius, std::size_t* count) const {
    const Node& nd = nodes_[node_id];
    if (box_sq_dist(nd, q) > max_sq_radius * (1.0 + kPruneSlack)) return false;
    if (nd.leaf()) {
      bool hit = false;
      for (std::size_t i = nd.begin; i < nd.end; ++i) {
        std::size_t p = idx_[i];
        if (squared_distance(q, row_of(*pts_, p)) <= sq_radii[p]) {
          hit = true;
          if (count) ++(*count);
          else return true;
        }
      }
      return hit;
    }
    bool hit = search_balls(nd.left, q, sq_radii, max_sq_radius, count);
    if (hit && !count) return true;
    bool hit2 = search_balls(nd.right, q, sq_radii, max_sq_radius, count);
    return hit || hit2;
  }

  bool search_fixed(int node_id, std::span<const double> q, double sq_radius) const {
    const Node& nd = nodes_[node_id];
    if (box_sq_dist(nd, q) > sq_radius * (1.0 + kPruneSlack) + 1e-300) return false;
    if (nd.leaf()) {
      for (std::size_t i = nd.begin; i < nd.end; ++i) {
        if (squared_distance(q, row_of(*pts_, idx_[i])) <= sq_radius) return true;
      }
      return false;
    }
    return search_fixed(nd.left, q, sq_radius) || search_fixed(nd.right, q, sq_radius);
  }

  const Tensor* pts_;
  std::size_t dim_;
  std::vector<std::size_t> idx_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

void check_knn_inputs(const Tensor& real, const Tensor& gen, int k, const char* who) {
  if (real.ndim() != 2 || gen.ndim() != 2 || real.cols() != gen.cols()) {
    throw std::invalid_argument(std::string(who) + ": feature dim mismatch (" +
                                real.shape_string() + " vs " + gen.shape_string() + ")");
  }
  if (k < 1) throw std::invalid_argument(std::string(who) + ": k must be >= 1");
  if (static_cast<std::size_t>(k) >= real.rows() || static_cast<std::size_t>(k) >= gen.rows()) {
    throw std::invalid_argument(std::string(who) + ": k = " + std::to_string(k) +
                                " >= cloud size");
  }
}

std::vector<double> knn_radii(const KdTree& tree, std::size_t n, int k) {
  std::vector<double> radii(n);
  for (std::size_t i = 0; i < n; ++i) radii[i] = tree.kth_sq_radius(i, k);
  return radii;
}

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double frechet_distance(const linalg::GaussianMoments& a, const linalg::GaussianMoments& b) {
  const std::size_t d = a.mean.cols();
  if (b.mean.cols() != d || a.cov.rows() != d || b.cov.rows() != d) {
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  }
  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double diff = a.mean.at(0, i) - b.mean.at(0, i);
    mean_term += diff * diff;
  }
  double trace_a = 0.0, trace_b = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    trace_a += a.cov.at(i, i);
    trace_b += b.cov.at(i, i);
  }

  auto clamp_eigs = [](Tensor& values) {
    double max_eig = 0.0;
    for (double v : values.data()) max_eig = std::max(max_eig, v);
    double floor = 1e-10 * max_eig;
    for (double& v : values.mutable_data()) v = v < floor ? 0.0 : v;
  };

  // sqrt(C_a) via eigendecomposition.
  Tensor values, vectors;
  linalg::eigh(a.cov, values, vectors);
  clamp_eigs(values);
  Tensor sqrt_a = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < d; ++m) {
        acc += vectors.at(i, m) * std::sqrt(values.at(0, m)) * vectors.at(j, m);
      }
      sqrt_a.at(i, j) = acc;
    }
  }
  Tensor prod = linalg::matmul(linalg::matmul(sqrt_a, b.cov), sqrt_a);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      double s = 0.5 * (prod.at(i, j) + prod.at(j, i));
      prod.at(i, j) = s;
      prod.at(j, i) = s;
    }
  }
  linalg::eigh(prod, values, vectors);
  clamp_eigs(values);
  double trace_sqrt = 0.0;
  for (double v : values.data()) trace_sqrt += std::sqrt(v);
  return mean_term + trace_a + trace_b - 2.0 * trace_sqrt;
}

double fid(const Tensor& real_features, const Tensor& gen_features) {
  if (real_features.ndim() != 2 || gen_features.ndim() != 2 ||
      real_features.cols() != gen_features.cols()) {
    throw std::invalid_argument("fid: feature dim mismatch");
  }
  const std::size_t f = real_features.cols();
  if (real_features.rows() < f + 1 || gen_features.rows() < f + 1) {
    throw std::invalid_argument("fid: need at least f + 1 = " + std::to_string(f + 1) +
                                " rows per cloud");
  }
  return frechet_distance(linalg::moments_of_rows(real_features),
                          linalg::moments_of_rows(gen_features));
}

PrResult precision_recall(const Tensor& real_features, const Tensor& gen_features, int k) {
  check_knn_inputs(real_features, gen_features, k, "precision_recall");
  KdTree real_tree(real_features);
  KdTree gen_tree(gen_features);
  std::vector<double> real_radii = knn_radii(real_tree, real_features.rows(), k);
  std::vector<double> gen_radii = knn_radii(gen_tree, gen_features.rows(), k);
  double max_real = *std::max_element(real_radii.begin(), real_radii.end());
  double max_gen = *std::max_element(gen_radii.begin(), gen_radii.end());

  std::size_t inside_real = 0;
  for (std::size_t g = 0; g < gen_features.rows(); ++g) {
    if (real_tree.any_ball_contains(row_of(gen_features, g), real_radii, max_real)) ++inside_real;
  }
  std::size_t inside_gen = 0;
  for (std::size_t r = 0; r < real_features.rows(); ++r) {
    if (gen_tree.any_ball_contains(row_of(real_features, r), gen_radii, max_gen)) ++inside_gen;
  }
  return {static_cast<double>(inside_real) / static_cast<double>(gen_features.rows()),
          static_cast<double>(inside_gen) / static_cast<double>(real_features.rows())};
}

DcResult density_coverage(const Tensor& real_features, const Tensor& gen_features, int k) {
  check_knn_inputs(real_features, gen_features, k, "density_coverage");
  KdTree real_tree(real_features);
  KdTree gen_tree(gen_features);
  std::vector<double> real_radii = knn_radii(real_tree, real_features.rows(), k);
  double max_real = *std::max_element(real_radii.begin(), real_radii.end());

  std::size_t ball_hits = 0;
  for (std::size_t g = 0; g < gen_features.rows(); ++g) {
    ball_hits += real_tree.count_balls_containing(row_of(gen_features, g), real_radii, max_real);
  }
  std::size_t covered = 0;
  for (std::size_t r = 0; r < real_features.rows(); ++r) {
    if (gen_tree.any_within(row_of(real_features, r), real_radii[r])) ++covered;
  }
  return {static_cast<double>(ball_hits) /
              (static_cast<double>(k) * static_cast<double>(gen_features.rows())),
          static_cast<double>(covered) / static_cast<double>(real_features.rows())};
}

double diversity(double recall, double coverage) {
  if (!(recall >= 0.0 && recall <= 1.0) || !(coverage >= 0.0 && coverage <= 1.0)) {
    throw std::invalid_argument("diversity: recall and coverage must lie in [0, 1]");
  }
  return 0.5 * (recall + coverage);
}

double attack_accuracy(const Tensor& samples, int target_class,
                       const Classifier& eval_classifier) {
  if (samples.rows() == 0) throw std::invalid_argument("attack_accuracy: no samples");
  std::vector<int> pred = eval_classifier.predict(samples);
  std::size_t hits = 0;
  for (int p : pred) {
    if (p == target_class) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

MetricsReport evaluate_metrics(const std::vector<FeatureCloud>& real_per_class,
                               const std::vector<FeatureCloud>& gen_per_class,
                               const std::vector<double>& per_class_accuracy, int k) {
  if (real_per_class.empty() || real_per_class.size() != gen_per_class.size() ||
      per_class_accuracy.size() != real_per_class.size()) {
    throw std::invalid_argument("evaluate_metrics: per-class inputs misaligned");
  }
  MetricsReport report;
  report.k = k;

  std::size_t total_real = 0, total_gen = 0;
  const std::size_t f = real_per_class.front().features.cols();
  for (std::size_t c = 0; c < real_per_class.size(); ++c) {
    total_real += real_per_class[c].features.rows();
    total_gen += gen_per_class[c].features.rows();
  }
  Tensor pooled_real = Tensor::zeros({total_real, f});
  Tensor pooled_gen = Tensor::zeros({total_gen, f});
  std::size_t ri = 0, gi = 0;

  for (std::size_t c = 0; c < real_per_class.size(); ++c) {
    const Tensor& real = real_per_class[c].features;
    const Tensor& gen = gen_per_class[c].features;
    ClassMetrics m;
    m.label = real_per_class[c].label;
    m.n_real = real.rows();
    m.n_gen = gen.rows();
    m.accuracy = per_class_accuracy[c];
    m.accuracy_half_width =
        1.96 * std::sqrt(m.accuracy * (1.0 - m.accuracy) / static_cast<double>(m.n_gen));
    PrResult pr = precision_recall(real, gen, k);
    DcResult dc = density_coverage(real, gen, k);
    m.precision = pr.precision;
    m.recall = pr.recall;
    m.density = dc.density;
    m.coverage = dc.coverage;
    m.diversity = diversity(pr.recall, dc.coverage);
    report.per_class.push_back(m);

    for (std::size_t r = 0; r < real.rows(); ++r, ++ri) {
      for (std::size_t j = 0; j < f; ++j) pooled_real.at(ri, j) = real.at(r, j);
    }
    for (std::size_t r = 0; r < gen.rows(); ++r, ++gi) {
      for (std::size_t j = 0; j < f; ++j) pooled_gen.at(gi, j) = gen.at(r, j);
    }
  }

  const double n = static_cast<double>(report.per_class.size());
  for (const ClassMetrics& m : report.per_class) {
    report.mean_accuracy += m.accuracy / n;
    report.mean_precision += m.precision / n;
    report.mean_recall += m.recall / n;
    report.mean_density += m.density / n;
    report.mean_coverage += m.coverage / n;
    report.mean_diversity += m.diversity / n;
  }
  report.pooled_fid = fid(pooled_real, pooled_gen);
  report.samples_per_class = gen_per_class.front().features.rows();
  return report;
}

}  // namespace vmi
