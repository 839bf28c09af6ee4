// Copyright 2026 The obikit Authors
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

#ifndef OBIKIT_DATA_HPP
#define OBIKIT_DATA_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "obikit/error.hpp"
#include "obikit/numerics.hpp"

namespace obikit {

struct LabeledExample {
  std::vector<double> x;
  std::size_t y = 0;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

/// Where a dataset came from. `original_index[i]` is the index of example i in
/// the parent dataset (identity for freshly generated data).
struct Provenance {
  std::string source;
  nlohmann::json params = nlohmann::json::object();
  std::vector<std::size_t> original_index;
};

/// An ordered, immutable collection of labeled examples sharing feature
/// dimension and class count. Doubles as an empirical data distribution.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<LabeledExample> examples, std::size_t dim, std::size_t num_classes, Provenance provenance = {})
      : examples_(std::move(examples)), dim_(dim), num_classes_(num_classes), provenance_(std::move(provenance)) {
    if (num_classes_ == 0) {
      throw ValidationError("dataset needs at least one class");
    }
    for (const auto& e : examples_) {
      if (e.x.size() != dim_) {
        throw ValidationError("example dimension does not match dataset dimension");
      }
      if (e.y >= num_classes_) {
        throw ValidationError("label out of range");
      }
    }
    if (provenance_.original_index.empty()) {
      provenance_.original_index.resize(examples_.size());
      for (std::size_t i = 0; i < examples_.size(); ++i) {
        provenance_.original_index[i] = i;
      }
    } else if (provenance_.original_index.size() != examples_.size()) {
      throw ValidationError("provenance index length does not match dataset size");
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return examples_.size(); }
  [[nodiscard]] bool empty() const noexcept { return examples_.empty(); }
  [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
  [[nodiscard]] std::size_t num_classes() const noexcept { return num_classes_; }
  [[nodiscard]] const std::vector<LabeledExample>& examples() const noexcept { return examples_; }
  [[nodiscard]] const LabeledExample& operator[](std::size_t i) const { return examples_.at(i); }
  [[nodiscard]] const Provenance& provenance() const noexcept { return provenance_; }
  [[nodiscard]] std::size_t original_index(std::size_t i) const { return provenance_.original_index.at(i); }

  [[nodiscard]] std::vector<std::vector<double>> inputs() const {
    std::vector<std::vector<double>> xs;
    xs.reserve(examples_.size());
    for (const auto& e : examples_) {
      xs.push_back(e.x);
    }
    return xs;
  }

  /// Examples at `indices`, in that order; provenance maps back into this dataset.
  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices, std::string source = "subset") const {
    std::vector<LabeledExample> picked;
    picked.reserve(indices.size());
    Provenance prov{std::move(source), {{"parent", provenance_.source}}, {}};
    for (std::size_t i : indices) {
      picked.push_back(examples_.at(i));
      prov.original_index.push_back(i);
    }
    return {std::move(picked), dim_, num_classes_, std::move(prov)};
  }

  /// This dataset followed by `extra`; provenance indexes the concatenation.
  [[nodiscard]] Dataset concat(std::span<const LabeledExample> extra) const {
    std::vector<LabeledExample> all = examples_;
    all.insert(all.end(), extra.begin(), extra.end());
    return {std::move(all), dim_, num_classes_, Provenance{"concat", {{"parent", provenance_.source}}, {}}};
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.dim_ == b.dim_ && a.num_classes_ == b.num_classes_ && a.examples_ == b.examples_;
  }

 private:
  std::vector<LabeledExample> examples_;
  std::size_t dim_ = 0;
  std::size_t num_classes_ = 0;
  Provenance provenance_;
};

struct DuplicationSpec {
  std::size_t factor = 1;
  bool allow_reselection = false;
};

/**
 * Isotropic Gaussian clusters, one per class.
 *
 * Class means lie on the unit circle spanned by the first two coordinates
 * (angle 2*pi*c/C); for d = 1 they are spaced one unit apart. Examples are
 * emitted round-robin over classes.
 */
inline Dataset generate_cluster_dataset(std::size_t n_per_class, std::size_t num_classes, std::size_t dim, double spread,
                                        RngStream rng) {
  if (n_per_class == 0 || num_classes < 2 || dim == 0) {
    throw ValidationError("cluster dataset needs n_per_class >= 1, C >= 2, d >= 1");
  }
  if (!(spread > 0.0)) {
    throw ValidationError("cluster spread must be positive");
  }
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (dim == 1) {
      means[c][0] = static_cast<double>(c);
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
      means[c][0] = std::cos(angle);
      means[c][1] = std::sin(angle);
    }
  }
  std::vector<LabeledExample> examples;
  examples.reserve(n_per_class * num_classes);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      LabeledExample e{std::vector<double>(dim), c};
      for (std::size_t k = 0; k < dim; ++k) {
        e.x[k] = means[c][k] + spread * rng.normal();
      }
      examples.push_back(std::move(e));
    }
  }
  Provenance prov{"clusters",
                  {{"n_per_class", n_per_class},
                   {"classes", num_classes},
                   {"dim", dim},
                   {"spread", spread},
                   {"seed", rng.seed()},
                   {"stream", rng.stream_id()}},
                  {}};
  return {std::move(examples), dim, num_classes, std::move(prov)};
}

/// Every example repeated `spec.factor` times, shuffled so copies interleave.
inline Dataset duplicate_pool(const Dataset& pool, const DuplicationSpec& spec, RngStream rng) {
  if (spec.factor == 0) {
    throw ValidationError("duplication factor must be >= 1");
  }
  std::vector<std::size_t> order;
  order.reserve(pool.size() * spec.factor);
  for (std::size_t r = 0; r < spec.factor; ++r) {
    for (std::size_t i = 0; i < pool.size(); ++i) {
      order.push_back(i);
    }
  }
  rng.shuffle(order);
  auto out = pool.subset(order, "duplicated");
  Provenance prov = out.provenance();
  prov.params["factor"] = spec.factor;
  prov.params["allow_reselection"] = spec.allow_reselection;
  std::vector<LabeledExample> examples = out.examples();
  return {std::move(examples), pool.dim(), pool.num_classes(), std::move(prov)};
}

/// Disjoint random subsets of sizes floor(f_i * n); the flooring remainder goes
/// to the last split when the fractions sum to one.
inline std::vector<Dataset> split(const Dataset& dataset, std::span<const double> fractions, RngStream rng) {
  if (fractions.empty()) {
    throw ValidationError("split needs at least one fraction");
  }
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) {
      throw ValidationError("split fractions must be positive");
    }
    total += f;
  }
  if (total > 1.0 + 1e-12) {
    throw ValidationError("split fractions sum to more than 1");
  }
  const std::size_t n = dataset.size();
  const auto perm = rng.permutation(n);
  std::vector<std::size_t> sizes;
  std::size_t used = 0;
  for (double f : fractions) {
    sizes.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(n))));
    used += sizes.back();
  }
  if (std::abs(total - 1.0) <= 1e-12) {
    sizes.back() += n - used;
  }
  std::vector<Dataset> out;
  std::size_t offset = 0;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                                 perm.begin() + static_cast<std::ptrdiff_t>(offset + sizes[s]));
    out.push_back(dataset.subset(idx, "split" + std::to_string(s)));
    offset += sizes[s];
  }
  return out;
}

// IDX files: big-endian header, magic 0x00000803 for u8 images, 0x00000801 for u8 labels.

namespace detail {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline std::uint32_t read_be32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw ValidationError("unexpected EOF");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
  out.write(b.data(), 4);
}

inline std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  return in;
}

}  // namespace detail

/// Loads an IDX image/label pair; pixels are scaled to [0, 1], C = 10.
inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                                std::optional<std::size_t> limit = std::nullopt) {
  auto images = detail::open_binary(images_path);
  auto labels = detail::open_binary(labels_path);
  if (detail::read_be32(images) != detail::kIdxImagesMagic) {
    throw ValidationError("not an IDX file: " + images_path);
  }
  if (detail::read_be32(labels) != detail::kIdxLabelsMagic) {
    throw ValidationError("not an IDX file: " + labels_path);
  }
  const std::size_t n_images = detail::read_be32(images);
  const std::size_t rows = detail::read_be32(images);
  const std::size_t cols = detail::read_be32(images);
  const std::size_t n_labels = detail::read_be32(labels);
  if (n_images != n_labels) {
    throw ValidationError("count mismatch");
  }
  const std::size_t n = limit ? std::min(*limit, n_images) : n_images;
  const std::size_t dim = rows * cols;
  std::vector<unsigned char> pixels(dim);
  std::vector<LabeledExample> examples;
  examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!images.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(dim))) {
      throw ValidationError("unexpected EOF");
    }
    char label = 0;
    if (!labels.read(&label, 1)) {
      throw ValidationError("unexpected EOF");
    }
    LabeledExample e{std::vector<double>(dim), static_cast<unsigned char>(label)};
    for (std::size_t k = 0; k < dim; ++k) {
      e.x[k] = static_cast<double>(pixels[k]) / 255.0;
    }
    examples.push_back(std::move(e));
  }
  Provenance prov{"idx",
                  {{"images", images_path}, {"labels", labels_path}, {"limit", limit ? static_cast<long long>(*limit) : -1},
                   {"scaling", "pixel/255"}},
                  {}};
  return {std::move(examples), dim, 10, std::move(prov)};
}

/// Writes raw u8 images and labels in IDX format.
inline void write_idx_files(const std::string& images_path, const std::string& labels_path,
                            std::span<const std::vector<unsigned char>> images, std::span<const unsigned char> labels,
                            std::uint32_t rows, std::uint32_t cols) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) {
    throw IoError("cannot write " + images_path + " / " + labels_path);
  }
  detail::write_be32(img, detail::kIdxImagesMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(images.size()));
  detail::write_be32(img, rows);
  detail::write_be32(img, cols);
  for (const auto& im : images) {
    img.write(reinterpret_cast<const char*>(im.data()), static_cast<std::streamsize>(im.size()));
  }
  detail::write_be32(lab, detail::kIdxLabelsMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

inline std::string format_double(double v) {
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  if (std::isnan(v)) {
    return "nan";
  }
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

/// CSV with columns x0..x{d-1},y and a header row.
inline void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  for (std::size_t k = 0; k < data.dim(); ++k) {
    out << 'x' << k << ',';
  }
  out << "y\n";
  for (const auto& e : data.examples()) {
    for (double v : e.x) {
      out << format_double(v) << ',';
    }
    out << e.y << '\n';
  }
}

inline Dataset read_dataset_csv(const std::string& path, std::size_t num_classes) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ValidationError("empty dataset CSV: " + path);
  }
  std::size_t dim = 0;
  for (char ch : line) {
    dim += ch == ',' ? 1 : 0;
  }
  std::vector<LabeledExample> examples;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    LabeledExample e;
    for (std::size_t k = 0; k < dim; ++k) {
      if (!std::getline(ss, cell, ',')) {
        throw ValidationError("short row in " + path);
      }
      e.x.push_back(std::stod(cell));
    }
    if (!std::getline(ss, cell, ',')) {
      throw ValidationError("missing label in " + path);
    }
    e.y = std::stoul(cell);
    examples.push_back(std::move(e));
  }
  return {std::move(examples), dim, num_classes, Provenance{"csv", {{"path", path}}, {}}};
}

}  // namespace obikit

#endif  // OBIKIT_DATA_HPP
