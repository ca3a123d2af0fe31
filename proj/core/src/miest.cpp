// Copyright 2026 The MIPAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mipae/miest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <queue>
#include <random>
#include <stdexcept>

#include <boost/math/special_functions/digamma.hpp>

#include "mipae/errors.hpp"

namespace mipae::miest {
namespace {

double digamma(double x) { return boost::math::digamma(x); }

// KD-tree over a subset of rows of a row-major matrix, max-coordinate metric.
class KdTree {
 public:
  KdTree(const double* pts, std::int64_t dim, std::vector<std::int64_t> idx)
      : pts_(pts), dim_(dim), idx_(std::move(idx)) {
    if (!idx_.empty()) root_ = build(0, static_cast<std::int64_t>(idx_.size()));
  }

  // Distance from row `q` to its k-th nearest other row in the tree.
  double kth_distance(std::int64_t q, int k) const {
    std::priority_queue<double> heap;  // k smallest distances so far
    knn(root_, row(q), q, k, heap);
    return heap.top();
  }

  // Rows other than `q` at distance <= r.
  std::int64_t count_within(std::int64_t q, double r) const {
    std::int64_t n = 0;
    count(root_, row(q), q, r, n);
    return n;
  }

 private:
  struct Node {
    std::int64_t begin = 0, end = 0;
    std::int64_t split_dim = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
  };
  static constexpr std::int64_t kLeaf = 16;

  const double* row(std::int64_t i) const { return pts_ + i * dim_; }

  double dist(const double* a, const double* b) const {
    double m = 0.0;
    for (std::int64_t d = 0; d < dim_; ++d) m = std::max(m, std::abs(a[d] - b[d]));
    return m;
  }

  int build(std::int64_t begin, std::int64_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin > kLeaf) {
      std::int64_t best = 0;
      double spread = -1.0;
      for (std::int64_t d = 0; d < dim_; ++d) {
        double lo = row(idx_[begin])[d], hi = lo;
        for (std::int64_t i = begin + 1; i < end; ++i) {
          const double v = row(idx_[i])[d];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        if (hi - lo > spread) {
          spread = hi - lo;
          best = d;
        }
      }
      if (spread > 0.0) {
        const std::int64_t mid = begin + (end - begin) / 2;
        std::nth_element(idx_.begin() + begin, idx_.begin() + mid, idx_.begin() + end,
                         [&](std::int64_t a, std::int64_t b) {
                           return row(a)[best] < row(b)[best];
                         });
        node.split_dim = best;
        node.split = row(idx_[mid])[best];
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(node);
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[self].left = l;
        nodes_[self].right = r;
        return self;
      }
    }
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }

  void knn(int ni, const double* q, std::int64_t self, int k,
           std::priority_queue<double>& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(ni)];
    if (n.split_dim < 0) {
      for (std::int64_t i = n.begin; i < n.end; ++i) {
        if (idx_[i] == self) continue;
        const double d = dist(q, row(idx_[i]));
        if (static_cast<int>(heap.size()) < k) {
          heap.push(d);
        } else if (d < heap.top()) {
          heap.pop();
          heap.push(d);
        }
      }
      return;
    }
    // Left holds values <= split, right holds values >= split.
    const double diff = q[n.split_dim] - n.split;
    const int near = diff <= 0 ? n.left : n.right;
    const int far = diff <= 0 ? n.right : n.left;
    knn(near, q, self, k, heap);
    if (static_cast<int>(heap.size()) < k || std::abs(diff) <= heap.top())
      knn(far, q, self, k, heap);
  }

  void count(int ni, const double* q, std::int64_t self, double r, std::int64_t& out) const {
    const Node& n = nodes_[static_cast<std::size_t>(ni)];
    if (n.split_dim < 0) {
      for (std::int64_t i = n.begin; i < n.end; ++i)
        if (idx_[i] != self && dist(q, row(idx_[i])) <= r) ++out;
      return;
    }
    const double diff = q[n.split_dim] - n.split;
    if (diff <= r) count(n.left, q, self, r, out);
    if (diff >= -r) count(n.right, q, self, r, out);
  }

  const double* pts_;
  std::int64_t dim_;
  std::vector<std::int64_t> idx_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace

std::vector<std::int64_t> label_counts(std::span<const std::int64_t> labels) {
  std::map<std::int64_t, std::int64_t> m;
  for (std::int64_t l : labels) ++m[l];
  std::vector<std::int64_t> out;
  for (const auto& [_, c] : m) out.push_back(c);
  return out;
}

double grassberger_entropy(std::span<const std::int64_t> counts) {
  if (counts.empty()) throw std::invalid_argument("grassberger_entropy: no counts");
  std::int64_t n = 0;
  for (std::int64_t c : counts) {
    if (c <= 0) throw std::invalid_argument("grassberger_entropy: counts must be positive");
    n += c;
  }
  double acc = 0.0;
  for (std::int64_t c : counts) acc += static_cast<double>(c) * digamma(static_cast<double>(c));
  return digamma(static_cast<double>(n)) - acc / static_cast<double>(n);
}

double knn_mi_raw(std::span<const std::int64_t> labels, Points vectors, int k) {
  const std::int64_t n = static_cast<std::int64_t>(labels.size());
  const std::int64_t dim = vectors.dim;
  if (k < 1) throw std::invalid_argument("knn_mi: k must be >= 1");
  if (dim < 1 || static_cast<std::int64_t>(vectors.values.size()) != n * dim)
    throw std::invalid_argument("knn_mi: labels and vectors disagree in count");
  for (double v : vectors.values)
    if (!std::isfinite(v)) throw NumericError("knn_mi: non-finite vector entry");

  // Canonical order: by label, then lexicographically by vector.
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const double* v = vectors.values.data();
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    if (labels[a] != labels[b]) return labels[a] < labels[b];
    return std::lexicographical_compare(v + a * dim, v + (a + 1) * dim, v + b * dim,
                                        v + (b + 1) * dim);
  });

  double mean_abs = 0.0;
  for (double x : vectors.values) mean_abs += std::abs(x);
  mean_abs /= static_cast<double>(std::max<std::size_t>(1, vectors.values.size()));
  const double scale = 1e-10 * std::max(1.0, mean_abs);
  std::mt19937_64 rng(0x6b6e6e6d69ull);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  std::vector<double> pts(static_cast<std::size_t>(n * dim));
  std::vector<std::int64_t> lab(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    const std::int64_t src = order[static_cast<std::size_t>(r)];
    lab[r] = labels[src];
    for (std::int64_t d = 0; d < dim; ++d)
      pts[r * dim + d] = v[src * dim + d] + scale * jitter(rng);
  }

  // Per-class radii.
  std::vector<double> radius(static_cast<std::size_t>(n));
  std::vector<std::int64_t> class_size(static_cast<std::size_t>(n));
  for (std::int64_t b = 0; b < n;) {
    std::int64_t e = b;
    while (e < n && lab[e] == lab[b]) ++e;
    if (e - b < k + 1)
      throw std::invalid_argument("knn_mi: label " + std::to_string(lab[b]) + " has " +
                                  std::to_string(e - b) + " samples, need at least " +
                                  std::to_string(k + 1));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(e - b));
    std::iota(idx.begin(), idx.end(), b);
    const KdTree tree(pts.data(), dim, std::move(idx));
    for (std::int64_t i = b; i < e; ++i) {
      radius[i] = tree.kth_distance(i, k);
      class_size[i] = e - b;
    }
    b = e;
  }

  std::vector<std::int64_t> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  const KdTree tree(pts.data(), dim, std::move(all));
  double sum_nc = 0.0, sum_m = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t m = tree.count_within(i, radius[i]);
    sum_nc += digamma(static_cast<double>(class_size[i]));
    sum_m += digamma(static_cast<double>(m));
  }
  const double dn = static_cast<double>(n);
  return digamma(dn) - sum_nc / dn + digamma(static_cast<double>(k)) - sum_m / dn;
}

double knn_mi_discrete_continuous(std::span<const std::int64_t> labels, Points vectors,
                                  int k) {
  return std::max(0.0, knn_mi_raw(labels, vectors, k));
}

namespace {

struct Subset {
  std::vector<std::int64_t> labels;
  std::vector<double> content, pose;
  std::int64_t dropped = 0;
};

Subset keep_frequent(const std::vector<std::int64_t>& labels, const RepSamples& reps, int k) {
  std::map<std::int64_t, std::int64_t> counts;
  for (std::int64_t l : labels) ++counts[l];
  Subset s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (counts[labels[i]] < k + 1) {
      ++s.dropped;
      continue;
    }
    s.labels.push_back(labels[i]);
    const auto cd = static_cast<std::size_t>(reps.content_dim);
    const auto pd = static_cast<std::size_t>(reps.pose_dim);
    s.content.insert(s.content.end(), reps.content.begin() + i * cd,
                     reps.content.begin() + (i + 1) * cd);
    s.pose.insert(s.pose.end(), reps.pose.begin() + i * pd, reps.pose.begin() + (i + 1) * pd);
  }
  return s;
}

}  // namespace

MigReport mig_score(const FactorSamples& factors, const RepSamples& reps, int k) {
  const auto n = static_cast<std::int64_t>(factors.content.size());
  if (static_cast<std::int64_t>(factors.pose.size()) != n ||
      static_cast<std::int64_t>(reps.content.size()) != n * reps.content_dim ||
      static_cast<std::int64_t>(reps.pose.size()) != n * reps.pose_dim)
    throw std::invalid_argument("mig_score: factor and representation samples are not aligned");

  MigReport r;
  r.samples = n;
  const Subset c = keep_frequent(factors.content, reps, k);
  const Subset p = keep_frequent(factors.pose, reps, k);
  r.dropped_content = c.dropped;
  r.dropped_pose = p.dropped;
  if (c.labels.empty() || p.labels.empty())
    throw std::invalid_argument("mig_score: no label class has enough samples");
  r.h_fc = grassberger_entropy(label_counts(c.labels));
  r.h_fp = grassberger_entropy(label_counts(p.labels));
  if (!(r.h_fc > 0.0) || !(r.h_fp > 0.0))
    throw std::invalid_argument("mig_score: a generative factor has zero entropy");

  auto mi = [&](const Subset& s, const std::vector<double>& x, std::int64_t dim, double h) {
    const double v = knn_mi_discrete_continuous(s.labels, Points{x, dim}, k);
    return std::min(v, h);
  };
  r.i_fc_zc = mi(c, c.content, reps.content_dim, r.h_fc);
  r.i_fc_zp = mi(c, c.pose, reps.pose_dim, r.h_fc);
  r.i_fp_zc = mi(p, p.content, reps.content_dim, r.h_fp);
  r.i_fp_zp = mi(p, p.pose, reps.pose_dim, r.h_fp);
  r.mig = 0.5 / r.h_fc * (r.i_fc_zc - r.i_fc_zp) + 0.5 / r.h_fp * (r.i_fp_zp - r.i_fp_zc);
  return r;
}

void write_mig_csv(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, MigReport>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "experiment,I_fc_zc,I_fc_zp,I_fp_zc,I_fp_zp,MIG\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& [name, r] : rows)
    out << name << ',' << r.i_fc_zc << ',' << r.i_fc_zp << ',' << r.i_fp_zc << ','
        << r.i_fp_zp << ',' << r.mig << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace mipae::miest
