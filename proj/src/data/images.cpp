#include <algorithm>
#include <cmath>
#include <numbers>

#include "simba/container.hpp"
#include "simba/data.hpp"
#include "simba/error.hpp"

namespace simba {

namespace {

constexpr double kPalette[2][3] = {{0.9, 0.35, 0.1}, {0.1, 0.45, 0.9}};
constexpr double kGratingPeriod = 8.0;
constexpr double kBlobSigma = 4.0;

void render(const SyntheticImageSpec& spec, std::size_t label, Rng& rng, float* out) {
  const std::size_t n_orient = (spec.classes + 1) / 2;
  const std::size_t orient = label % n_orient, scheme = label / n_orient;
  const double theta = std::numbers::pi * double(orient) / double(n_orient);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double margin = std::min(6.0, double(spec.size) / 4.0);
  const double cx = rng.uniform(margin, double(spec.size) - margin);
  const double cy = rng.uniform(margin, double(spec.size) - margin);
  const double* grating_colour = kPalette[scheme];
  const double* blob_colour = kPalette[1 - scheme];
  const std::size_t s = spec.size;
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double u = double(x) * std::cos(theta) + double(y) * std::sin(theta);
      const double g = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * u / kGratingPeriod + phase);
      const double r2 = (double(x) - cx) * (double(x) - cx) + (double(y) - cy) * (double(y) - cy);
      const double b = std::exp(-r2 / (2.0 * kBlobSigma * kBlobSigma));
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = 0.05 + 0.55 * g * grating_colour[c] + 0.6 * b * blob_colour[c] +
                         spec.noise * rng.normal();
        out[(c * s + y) * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
}

ImageDataset render_set(const SyntheticImageSpec& spec, std::size_t per_class, Rng& rng) {
  ImageDataset ds;
  ds.count = per_class * spec.classes;
  ds.size = spec.size;
  ds.classes = spec.classes;
  const std::size_t stride = 3 * spec.size * spec.size;
  ds.pixels.resize(ds.count * stride);
  ds.labels.resize(ds.count);
  // Interleaved labels so any prefix is class balanced.
  for (std::size_t i = 0; i < ds.count; ++i) {
    ds.labels[i] = static_cast<std::int64_t>(i % spec.classes);
    render(spec, i % spec.classes, rng, ds.pixels.data() + i * stride);
  }
  return ds;
}

}  // namespace

Tensor<float> ImageDataset::batch_images(const std::vector<std::size_t>& indices) const {
  const std::size_t stride = channels * size * size;
  std::vector<float> out(indices.size() * stride);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= count)
      throw DimensionError("image index " + std::to_string(indices[i]) + " out of range " +
                           std::to_string(count));
    std::copy_n(pixels.begin() + std::ptrdiff_t(indices[i] * stride), stride,
                out.begin() + std::ptrdiff_t(i * stride));
  }
  return Tensor<float>({indices.size(), channels, size, size}, std::move(out));
}

std::vector<std::int64_t> ImageDataset::batch_labels(const std::vector<std::size_t>& indices) const {
  std::vector<std::int64_t> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i >= count)
      throw DimensionError("image index " + std::to_string(i) + " out of range " +
                           std::to_string(count));
    out.push_back(labels[i]);
  }
  return out;
}

double nearest_centroid_accuracy(const ImageDataset& train, const ImageDataset& test) {
  const std::size_t stride = train.channels * train.size * train.size;
  if (test.channels * test.size * test.size != stride || train.classes != test.classes)
    throw DimensionError("nearest_centroid_accuracy: datasets have different layouts");
  if (test.count == 0) throw DataError("nearest_centroid_accuracy: empty test set");
  std::vector<double> centroid(train.classes * stride, 0.0);
  std::vector<std::size_t> counts(train.classes, 0);
  for (std::size_t i = 0; i < train.count; ++i) {
    const auto k = static_cast<std::size_t>(train.labels[i]);
    ++counts[k];
    for (std::size_t j = 0; j < stride; ++j) centroid[k * stride + j] += train.pixels[i * stride + j];
  }
  for (std::size_t k = 0; k < train.classes; ++k)
    for (std::size_t j = 0; j < stride; ++j)
      centroid[k * stride + j] /= double(std::max<std::size_t>(counts[k], 1));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.count; ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < train.classes; ++k) {
      if (counts[k] == 0) continue;
      double d = 0;
      for (std::size_t j = 0; j < stride; ++j) {
        const double e = test.pixels[i * stride + j] - centroid[k * stride + j];
        d += e * e;
      }
      if (d < best_d) best_d = d, best = k;
    }
    correct += static_cast<std::int64_t>(best) == test.labels[i];
  }
  return double(correct) / double(test.count);
}

ImageDataset gen_synthetic_images(std::uint64_t seed, const SyntheticImageSpec& spec) {
  if (spec.classes < 2) throw ParameterError("gen_synthetic_images: need at least 2 classes");
  if (spec.size < 8) throw ParameterError("gen_synthetic_images: size must be at least 8");
  if (spec.per_class == 0) throw ParameterError("gen_synthetic_images: per_class must be positive");
  if (!(spec.noise >= 0.0)) throw ParameterError("gen_synthetic_images: noise must be non-negative");
  Rng root(seed);
  Rng main_rng = root.fork("images.main");
  ImageDataset ds = render_set(spec, spec.per_class, main_rng);
  if (spec.holdout_per_class > 0) {
    Rng holdout_rng = root.fork("images.holdout");
    const ImageDataset holdout = render_set(spec, spec.holdout_per_class, holdout_rng);
    ds.centroid_accuracy = nearest_centroid_accuracy(ds, holdout);
  }
  return ds;
}

void save_images(const std::filesystem::path& dir, const ImageDataset& ds) {
  Container c;
  c.kind = "images";
  c.meta = {{"count", ds.count},
            {"channels", ds.channels},
            {"size", ds.size},
            {"classes", ds.classes},
            {"centroid_accuracy", ds.centroid_accuracy}};
  c.entries.push_back(
      ContainerEntry::from<float>("pixels", {ds.count, ds.channels, ds.size, ds.size}, ds.pixels));
  c.entries.push_back(ContainerEntry::from<std::int64_t>("labels", {ds.count}, ds.labels));
  write_container(dir, c);
}

ImageDataset load_images(const std::filesystem::path& dir) {
  const Container c = read_container(dir);
  if (c.kind != "images") throw FormatError(dir.string() + " holds '" + c.kind + "', not images");
  ImageDataset ds;
  try {
    ds.count = c.meta.at("count");
    ds.channels = c.meta.at("channels");
    ds.size = c.meta.at("size");
    ds.classes = c.meta.at("classes");
    ds.centroid_accuracy = c.meta.at("centroid_accuracy");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  ds.pixels = c.get("pixels").values<float>();
  ds.labels = c.get("labels").values<std::int64_t>();
  if (ds.pixels.size() != ds.count * ds.channels * ds.size * ds.size || ds.labels.size() != ds.count)
    throw FormatError(dir.string() + ": payload does not match the recorded layout");
  for (auto l : ds.labels)
    if (l < 0 || static_cast<std::size_t>(l) >= ds.classes)
      throw FormatError(dir.string() + ": label " + std::to_string(l) + " out of range");
  return ds;
}

}  // namespace simba
