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

// Non-parametric information estimates: nearest-neighbour mutual information
// between a discrete label and a continuous vector, digamma-corrected
// entropy of discrete counts, and the mutual information gap built from them.
// All quantities are in nats.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mipae::miest {

// Row-major (n, dim) sample matrix.
struct Points {
  std::span<const double> values;
  std::int64_t dim = 1;
  std::int64_t size() const { return dim ? static_cast<std::int64_t>(values.size()) / dim : 0; }
};

// Estimate before clipping. Neighbour searches use the max-coordinate
// metric; m_i counts every other sample within (<=) the distance to the
// k-th same-label neighbour. Exact ties are broken by a fixed, seeded jitter
// of relative size 1e-10 applied in a canonical sample order, so the result
// does not depend on input order.
double knn_mi_raw(std::span<const std::int64_t> labels, Points vectors, int k = 3);

// max(0, knn_mi_raw(...)). Throws std::invalid_argument when a label has
// fewer than k + 1 samples or sizes disagree.
double knn_mi_discrete_continuous(std::span<const std::int64_t> labels, Points vectors,
                                  int k = 3);

// psi(N) - (1/N) sum_i n_i psi(n_i).
double grassberger_entropy(std::span<const std::int64_t> counts);

// Counts of each distinct label.
std::vector<std::int64_t> label_counts(std::span<const std::int64_t> labels);

struct FactorSamples {
  std::vector<std::int64_t> content;  // one label per sample
  std::vector<std::int64_t> pose;
};

struct RepSamples {
  std::int64_t content_dim = 0;
  std::int64_t pose_dim = 0;
  std::vector<double> content;  // (n, content_dim)
  std::vector<double> pose;     // (n, pose_dim)
};

struct MigReport {
  double i_fc_zc = 0.0;
  double i_fc_zp = 0.0;
  double i_fp_zc = 0.0;
  double i_fp_zp = 0.0;
  double h_fc = 0.0;
  double h_fp = 0.0;
  double mig = 0.0;
  std::int64_t samples = 0;
  std::int64_t dropped_content = 0;  // samples whose content label was too rare
  std::int64_t dropped_pose = 0;
};

// Samples whose label occurs fewer than k + 1 times are left out of the terms
// of that factor. MI estimates are clipped to [0, H(f)] before combining.
MigReport mig_score(const FactorSamples& factors, const RepSamples& reps, int k = 3);

// Header: experiment,I_fc_zc,I_fc_zp,I_fp_zc,I_fp_zp,MIG
void write_mig_csv(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, MigReport>>& rows);

}  // namespace mipae::miest
