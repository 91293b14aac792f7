// Copyright 2026 The efqat Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "efqat/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>

#include "efqat/error.hpp"
#include "efqat/rng.hpp"

namespace efqat {

std::size_t Dataset::num_classes() const {
  int mx = -1;
  for (int y : labels) mx = std::max(mx, y);
  return static_cast<std::size_t>(mx + 1);
}

Tensor Dataset::batch_inputs(std::span<const std::size_t> indices) const {
  const std::size_t d = sample_numel();
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Tensor t(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ContractError("sample index out of range");
    std::copy_n(features.begin() + static_cast<long>(indices[i] * d), d, t.data() + i * d);
  }
  return t;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw ContractError("dataset slice out of range");
  const std::size_t d = sample_numel();
  Dataset out;
  out.sample_shape = sample_shape;
  out.features.assign(features.begin() + static_cast<long>(begin * d),
                      features.begin() + static_cast<long>((begin + count) * d));
  out.labels.assign(labels.begin() + static_cast<long>(begin), labels.begin() + static_cast<long>(begin + count));
  return out;
}

void Dataset::validate() const {
  if (sample_shape.empty()) throw ContractError("dataset has no sample shape");
  if (features.size() != labels.size() * sample_numel()) throw ContractError("dataset features/labels disagree");
  for (int y : labels)
    if (y < 0) throw ContractError("negative label in dataset");
}

// ---------------------------------------------------------------------------

namespace {

struct Bump {
  double cy, cx, sigma, amp;
};

Dataset synth_images(const SyntheticSpec& s, const std::vector<std::vector<Bump>>& protos, std::size_t count,
                     Rng& rng) {
  const std::size_t c = s.shape[0], h = s.shape[1], w = s.shape[2];
  Dataset d;
  d.sample_shape = s.shape;
  d.features.resize(count * c * h * w);
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % s.classes;
    d.labels[i] = static_cast<int>(label);
    const double gain = rng.uniform(0.8, 1.2);
    const long span = 2 * static_cast<long>(s.shift) + 1;
    const double dy = static_cast<double>(static_cast<long>(rng.below(static_cast<std::size_t>(span))) - static_cast<long>(s.shift));
    const double dx = static_cast<double>(static_cast<long>(rng.below(static_cast<std::size_t>(span))) - static_cast<long>(s.shift));
    float* out = d.features.data() + i * c * h * w;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          double v = 0.0;
          for (const Bump& b : protos[label * c + ch]) {
            const double ry = static_cast<double>(y) - (b.cy + dy), rx = static_cast<double>(x) - (b.cx + dx);
            v += b.amp * std::exp(-(ry * ry + rx * rx) / (2.0 * b.sigma * b.sigma));
          }
          out[(ch * h + y) * w + x] = static_cast<float>(s.separation * gain * v + s.noise * rng.normal());
        }
      }
    }
  }
  return d;
}

Dataset synth_flat(const SyntheticSpec& s, const std::vector<std::vector<double>>& centers, std::size_t count, Rng& rng) {
  const std::size_t dim = s.shape[0];
  Dataset d;
  d.sample_shape = s.shape;
  d.features.resize(count * dim);
  d.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = i % s.classes;
    d.labels[i] = static_cast<int>(label);
    for (std::size_t j = 0; j < dim; ++j) {
      d.features[i * dim + j] = static_cast<float>(centers[label][j] + s.noise * rng.normal());
    }
  }
  return d;
}

}  // namespace

DataSplit make_synthetic(const SyntheticSpec& s) {
  if (s.classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  if (s.train_size == 0 || s.eval_size == 0) throw ConfigError("synthetic train_size and eval_size must be positive");
  if (s.shape.size() != 1 && s.shape.size() != 3) throw ConfigError("synthetic shape must be [D] or [C,H,W], got " + shape_str(s.shape));
  for (std::size_t e : s.shape)
    if (!e) throw ConfigError("synthetic shape extents must be positive");
  Rng rng(s.seed);
  DataSplit out;
  if (s.shape.size() == 3) {
    const std::size_t c = s.shape[0], h = s.shape[1], w = s.shape[2];
    std::vector<std::vector<Bump>> protos(s.classes * c);
    for (auto& p : protos) {
      for (std::size_t b = 0; b < std::max<std::size_t>(1, s.blobs); ++b) {
        const double amp = rng.uniform(0.5, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        p.push_back({rng.uniform(1.0, static_cast<double>(h) - 2.0), rng.uniform(1.0, static_cast<double>(w) - 2.0),
                     rng.uniform(1.0, 2.5), amp});
      }
    }
    out.train = synth_images(s, protos, s.train_size, rng);
    out.eval = synth_images(s, protos, s.eval_size, rng);
  } else {
    std::vector<std::vector<double>> centers(s.classes, std::vector<double>(s.shape[0]));
    for (auto& c : centers)
      for (double& v : c) v = s.separation * rng.normal();
    out.train = synth_flat(s, centers, s.train_size, rng);
    out.eval = synth_flat(s, centers, s.eval_size, rng);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off, const std::string& source) {
  if (off + 4 > b.size()) {
    throw ParseError(source + ": truncated header at byte " + std::to_string(off) + " (file has " +
                     std::to_string(b.size()) + " bytes)");
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels, const std::string& source) {
  const std::string img_src = source + " images", lbl_src = source + " labels";
  const std::uint32_t img_magic = read_be32(images, 0, img_src);
  if (img_magic != 0x00000803u) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", img_magic);
    throw ParseError(img_src + ": bad magic " + buf + " at byte 0 (expected 0x00000803)");
  }
  const std::uint32_t n = read_be32(images, 4, img_src);
  const std::uint32_t rows = read_be32(images, 8, img_src);
  const std::uint32_t cols = read_be32(images, 12, img_src);
  const std::size_t need = 16 + std::size_t{n} * rows * cols;
  if (images.size() < need) {
    throw ParseError(img_src + ": truncated payload, expected " + std::to_string(need) + " bytes, got " +
                     std::to_string(images.size()));
  }
  const std::uint32_t lbl_magic = read_be32(labels, 0, lbl_src);
  if (lbl_magic != 0x00000801u) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", lbl_magic);
    throw ParseError(lbl_src + ": bad magic " + buf + " at byte 0 (expected 0x00000801)");
  }
  const std::uint32_t nl = read_be32(labels, 4, lbl_src);
  if (nl != n) {
    throw ParseError(lbl_src + ": count " + std::to_string(nl) + " at byte 4 differs from image count " + std::to_string(n));
  }
  if (labels.size() < 8 + std::size_t{n}) {
    throw ParseError(lbl_src + ": truncated payload, expected " + std::to_string(8 + std::size_t{n}) + " bytes, got " +
                     std::to_string(labels.size()));
  }
  if (n == 0 || rows == 0 || cols == 0) throw ParseError(img_src + ": empty image set");
  Dataset d;
  d.sample_shape = {1, rows, cols};
  d.features.resize(std::size_t{n} * rows * cols);
  for (std::size_t i = 0; i < d.features.size(); ++i) d.features[i] = static_cast<float>(images[16 + i]) / 255.0f;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = labels[8 + i];
  return d;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file_bytes(images_path);
  const auto lbl = read_file_bytes(labels_path);
  return parse_idx(img, lbl, images_path);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset parse_csv(std::string_view text, const CsvOptions& options, const std::string& source) {
  Dataset d;
  std::size_t line_no = 0, width = 0, label_col = 0;
  bool label_resolved = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_row(line);
    if (!width) {
      width = cells.size();
      if (width < 2) throw ParseError(source + ": line " + std::to_string(line_no) + " needs at least one feature and a label");
      if (options.label_column.empty()) {
        label_col = width - 1;
        label_resolved = true;
      } else if (std::all_of(options.label_column.begin(), options.label_column.end(), ::isdigit)) {
        label_col = std::stoul(options.label_column);
        label_resolved = true;
      }
      if (options.header) {
        if (!label_resolved) {
          for (std::size_t c = 0; c < cells.size(); ++c)
            if (trim(cells[c]) == options.label_column) {
              label_col = c;
              label_resolved = true;
            }
          if (!label_resolved) throw ParseError(source + ": label column '" + options.label_column + "' not in header");
        }
        if (label_col >= width) throw ParseError(source + ": label column index out of range");
        continue;
      }
      if (!label_resolved) throw ParseError(source + ": a named label column needs a header row");
      if (label_col >= width) throw ParseError(source + ": label column index out of range");
    }
    if (cells.size() != width) {
      throw ParseError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(width));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string_view cell = trim(cells[c]);
      const std::string where = source + ": line " + std::to_string(line_no) + ", column " + std::to_string(c + 1);
      if (c == label_col) {
        int y = 0;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), y);
        if (ec != std::errc() || p != cell.data() + cell.size() || y < 0) {
          throw ParseError(where + ": label '" + std::string(cell) + "' is not a non-negative integer");
        }
        d.labels.push_back(y);
      } else {
        float v = 0.0f;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || p != cell.data() + cell.size() || cell.empty()) {
          throw ParseError(where + ": '" + std::string(cell) + "' is not numeric");
        }
        d.features.push_back(v);
      }
    }
  }
  if (d.labels.empty()) throw ParseError(source + ": no data rows");
  d.sample_shape = {width - 1};
  return d;
}

Dataset load_csv(const std::string& path, const CsvOptions& options) {
  const auto bytes = read_file_bytes(path);
  return parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), options, path);
}

}  // namespace efqat
