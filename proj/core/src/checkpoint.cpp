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

// Layout (little-endian): "MIPAECKP", u32 version, str config YAML,
// u32 precision, i64 phase1 step, i64 phase2 step, str RNG state,
// u32 stat count + (str, f64) pairs, u32 group count, then per group:
// str name, u32 entry count, per entry: str name, u32 rank, i64 dims[rank],
// f64 values. A CRC-32 of all preceding bytes closes the file. Strings are
// u32 length + bytes.

#include "binio.hpp"
#include "mipae/checkpoint.hpp"

namespace mipae {
namespace {
constexpr char kMagic[8] = {'M', 'I', 'P', 'A', 'E', 'C', 'K', 'P'};
}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put(kCheckpointFormatVersion);
  w.str(to_yaml(ckpt.config));
  w.put(ckpt.precision_bytes);
  w.put(ckpt.phase1_step);
  w.put(ckpt.phase2_step);
  w.str(ckpt.rng_state);
  w.put(static_cast<std::uint32_t>(ckpt.stats.size()));
  for (const auto& [k, v] : ckpt.stats) {
    w.str(k);
    w.put(v);
  }
  w.put(static_cast<std::uint32_t>(ckpt.groups.size()));
  for (const auto& [gname, group] : ckpt.groups) {
    w.str(gname);
    w.put(static_cast<std::uint32_t>(group.size()));
    for (const auto& [ename, t] : group) {
      w.str(ename);
      w.put(static_cast<std::uint32_t>(t.rank()));
      for (std::int64_t d : t.shape()) w.put(d);
      w.array(t.data(), static_cast<std::size_t>(t.numel()));
    }
  }
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r = binio::Reader::open(path);
  r.magic(kMagic, sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointFormatVersion)
    throw VersionError("checkpoint " + path.string(), version, kCheckpointFormatVersion);
  Checkpoint ckpt;
  ckpt.config = config_from_yaml(r.str(), path.string() + " (embedded config)");
  ckpt.precision_bytes = r.get<std::uint32_t>();
  ckpt.phase1_step = r.get<std::int64_t>();
  ckpt.phase2_step = r.get<std::int64_t>();
  ckpt.rng_state = r.str();
  const auto nstats = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nstats; ++i) {
    std::string k = r.str();
    ckpt.stats[k] = r.get<double>();
  }
  const auto ngroups = r.get<std::uint32_t>();
  for (std::uint32_t g = 0; g < ngroups; ++g) {
    auto& group = ckpt.groups[r.str()];
    const auto nentries = r.get<std::uint32_t>();
    for (std::uint32_t e = 0; e < nentries; ++e) {
      std::string name = r.str();
      const auto rank = r.get<std::uint32_t>();
      if (rank > 8) r.corrupt("implausible tensor rank");
      nn::Shape shape(rank);
      std::uint64_t count = 1;
      for (auto& d : shape) {
        d = r.get<std::int64_t>();
        if (d < 0) r.corrupt("negative tensor dimension");
        count *= static_cast<std::uint64_t>(d);
      }
      r.expect(count, sizeof(double));
      nn::Tensor<double> t(shape);
      r.array(t.data(), static_cast<std::size_t>(count));
      group[name] = std::move(t);
    }
  }
  r.finish();
  return ckpt;
}

}  // namespace mipae
