#pragma once

// Synthetic generators, CSV ingestion and windowing for the two tasks.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "simba/rng.hpp"
#include "simba/tensor.hpp"

namespace simba {

enum class Split { train, val, test };

const char* split_name(Split split);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

// Multivariate series, row-major (length, channels). Splits are chronological;
// a window belongs to a split only if all of its lookback + horizon rows lie
// inside that split.
struct SeriesDataset {
  std::vector<double> values;
  std::size_t length = 0;
  std::size_t channels = 0;
  std::vector<std::string> names;
  SplitFractions fractions;
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::vector<double> mean, stddev;  // per channel, from the train split

  double at(std::size_t row, std::size_t channel) const { return values[row * channels + channel]; }
  // Half-open row range of a split.
  std::pair<std::size_t, std::size_t> split_range(Split split) const;
  // split_len - lookback - horizon + 1, or 0 when the split is too short.
  std::size_t window_count(Split split) const;

  // Train-split z-score statistics; DataError on a constant channel.
  void fit_standardization();
  double standardize(double v, std::size_t channel) const {
    return (v - mean[channel]) / stddev[channel];
  }
  double destandardize(double z, std::size_t channel) const {
    return z * stddev[channel] + mean[channel];
  }
};

struct SyntheticSeriesSpec {
  std::size_t channels = 7;
  std::size_t length = 10000;
  std::vector<std::size_t> periods{12, 24, 48, 96, 168};
  std::size_t min_components = 2;
  std::size_t max_components = 4;
  double noise = 0.1;      // Gaussian σ
  double trend = 1.0;      // max absolute drift over the whole series
  double coupling = 0.3;   // scale of off-identity mixing entries
};

SeriesDataset gen_synthetic_series(std::uint64_t seed, const SyntheticSeriesSpec& spec);

// Header row required. With date_column set the first column is skipped.
// Non-numeric cells raise ParseError (1-based row counting the header and
// 1-based column); rows with the wrong cell count raise FormatError.
SeriesDataset parse_csv_series(std::istream& in, bool date_column);
SeriesDataset load_csv_series(const std::filesystem::path& path, bool date_column);

template <typename T>
struct WindowBatch {
  Tensor<T> inputs;   // (B, lookback, C), standardized
  Tensor<T> targets;  // (B, horizon, C), standardized
  std::vector<std::size_t> starts;  // first row of each window
};

// One pass over the windows of a split; shuffled order only for train.
class WindowIterator {
 public:
  WindowIterator(const SeriesDataset& dataset, Split split, std::size_t batch, bool shuffle,
                 Rng* rng);

  template <typename T>
  bool next(WindowBatch<T>& out);
  // Starts a new pass, reshuffling when enabled.
  void reset();
  std::size_t size() const { return order_.size(); }

 private:
  const SeriesDataset& ds_;
  Split split_;
  std::size_t batch_;
  bool shuffle_;
  Rng* rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// Standardized windows starting at the given rows.
template <typename T>
WindowBatch<T> make_window_batch(const SeriesDataset& dataset, const std::vector<std::size_t>& starts);

// Images in [0, 1], row-major (count, channels, size, size).
struct ImageDataset {
  std::vector<float> pixels;
  std::vector<std::int64_t> labels;
  std::size_t count = 0;
  std::size_t channels = 3;
  std::size_t size = 32;
  std::size_t classes = 10;
  double centroid_accuracy = 0.0;  // nearest-centroid baseline on held-out samples

  Tensor<float> batch_images(const std::vector<std::size_t>& indices) const;
  std::vector<std::int64_t> batch_labels(const std::vector<std::size_t>& indices) const;
};

struct SyntheticImageSpec {
  std::size_t classes = 10;
  std::size_t per_class = 500;
  std::size_t size = 32;
  double noise = 0.1;
  std::size_t holdout_per_class = 100;  // for the centroid baseline only
};

// Class = (grating orientation, colour scheme). Each image overlays a
// randomly phased oriented grating and a randomly placed Gaussian blob, with
// the two colours swapped between schemes, plus pixel noise.
ImageDataset gen_synthetic_images(std::uint64_t seed, const SyntheticImageSpec& spec);

// Fraction of `test` assigned to its class by nearest class mean of `train`.
double nearest_centroid_accuracy(const ImageDataset& train, const ImageDataset& test);

void save_series(const std::filesystem::path& dir, const SeriesDataset& dataset);
SeriesDataset load_series(const std::filesystem::path& dir);
void save_images(const std::filesystem::path& dir, const ImageDataset& dataset);
ImageDataset load_images(const std::filesystem::path& dir);

}  // namespace simba
