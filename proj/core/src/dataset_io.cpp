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

// Byte layout: see docs/dataset_format.md.

#include <cmath>

#include "binio.hpp"
#include "mipae/synthvid.hpp"

namespace mipae::synthvid {
namespace {

constexpr char kMagic[8] = {'M', 'I', 'P', 'A', 'E', 'V', 'I', 'D'};
constexpr int kTrackColumns = 10;

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  binio::Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put(kDatasetFormatVersion);
  w.str(to_text(ds.config));

  const auto n = static_cast<std::uint64_t>(ds.sequences.size());
  const VideoSequence* first = n ? &ds.sequences.front() : nullptr;
  const auto frames = static_cast<std::uint32_t>(first ? first->length : ds.config.clip_length());
  const auto height = static_cast<std::uint32_t>(first ? first->height : ds.config.frame_size);
  const auto width = static_cast<std::uint32_t>(first ? first->width : ds.config.frame_size);
  const auto channels = static_cast<std::uint32_t>(first ? first->channels : 1);
  const auto objects = static_cast<std::uint32_t>(first ? first->tracks.size() : ds.config.num_objects);
  w.put(n);
  w.put(frames);
  w.put(height);
  w.put(width);
  w.put(channels);
  w.put(objects);
  for (const auto& s : ds.sequences) {
    if (s.length != frames || s.height != height || s.width != width ||
        s.channels != channels || s.tracks.size() != objects) {
      throw ConfigError("write_dataset: sequences have inconsistent shapes");
    }
    w.put(s.seed);
  }
  for (const auto& s : ds.sequences) w.array(s.pixels.data(), s.pixels.size());

  w.put(n * objects * frames);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto& s = ds.sequences[i];
    for (std::uint32_t o = 0; o < objects; ++o) {
      const FactorTrack& tr = s.tracks[o];
      for (std::uint32_t t = 0; t < frames; ++t) {
        const double row[kTrackColumns] = {
            static_cast<double>(i), static_cast<double>(o), static_cast<double>(t),
            static_cast<double>(tr.content.shape_id),
            static_cast<double>(tr.content.scale_id),
            static_cast<double>(tr.content.orient_id),
            tr.positions[t].x, tr.positions[t].y,
            tr.velocities[t].x, tr.velocities[t].y};
        w.array(row, kTrackColumns);
      }
    }
  }
  w.save(path);
}

Dataset read_dataset(const std::filesystem::path& path) {
  binio::Reader r = binio::Reader::open(path);
  r.magic(kMagic, sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetFormatVersion) {
    throw VersionError("dataset " + path.string(), version, kDatasetFormatVersion);
  }
  Dataset ds;
  try {
    ds.config = dataset_config_from_text(r.str());
  } catch (const ConfigError& e) {
    r.corrupt(e.what());
  }
  const auto n = r.get<std::uint64_t>();
  const auto frames = r.get<std::uint32_t>();
  const auto height = r.get<std::uint32_t>();
  const auto width = r.get<std::uint32_t>();
  const auto channels = r.get<std::uint32_t>();
  const auto objects = r.get<std::uint32_t>();
  const std::uint64_t frame_bytes = std::uint64_t{height} * width * channels;
  r.expect(n, 8 + frame_bytes * frames);

  ds.sequences.resize(n);
  for (auto& s : ds.sequences) {
    s.seed = r.get<std::uint64_t>();
    s.length = frames;
    s.height = height;
    s.width = width;
    s.channels = channels;
  }
  for (auto& s : ds.sequences) {
    s.pixels.resize(frame_bytes * frames);
    r.array(s.pixels.data(), s.pixels.size());
  }

  const auto rows = r.get<std::uint64_t>();
  if (rows != n * objects * frames) r.corrupt("track row count mismatch");
  r.expect(rows, kTrackColumns * sizeof(double));
  double row[kTrackColumns];
  for (std::uint64_t i = 0; i < n; ++i) {
    auto& s = ds.sequences[i];
    s.tracks.resize(objects);
    for (std::uint32_t o = 0; o < objects; ++o) {
      FactorTrack& tr = s.tracks[o];
      tr.positions.resize(frames);
      tr.velocities.resize(frames);
      for (std::uint32_t t = 0; t < frames; ++t) {
        r.array(row, kTrackColumns);
        if (row[0] != static_cast<double>(i) || row[1] != o || row[2] != t)
          r.corrupt("track rows out of order");
        const Content c{static_cast<int>(row[3]), static_cast<int>(row[4]),
                        static_cast<int>(row[5])};
        if (t == 0) {
          tr.content = c;
        } else if (!(c == tr.content)) {
          r.corrupt("content factors change within a clip");
        }
        tr.positions[t] = {row[6], row[7]};
        tr.velocities[t] = {row[8], row[9]};
      }
    }
  }
  r.finish();
  return ds;
}

}  // namespace mipae::synthvid
