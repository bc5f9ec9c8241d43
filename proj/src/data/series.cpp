#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "simba/container.hpp"
#include "simba/data.hpp"
#include "simba/error.hpp"

namespace simba {

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::pair<std::size_t, std::size_t> SeriesDataset::split_range(Split split) const {
  const double total = fractions.train + fractions.val + fractions.test;
  if (!(fractions.train > 0 && fractions.val >= 0 && fractions.test >= 0) ||
      std::abs(total - 1.0) > 1e-9)
    throw DataError("split fractions must be non-negative, train positive, and sum to 1");
  const auto train_end = static_cast<std::size_t>(std::floor(fractions.train * double(length)));
  const auto val_end =
      train_end + static_cast<std::size_t>(std::floor(fractions.val * double(length)));
  switch (split) {
    case Split::train: return {0, train_end};
    case Split::val: return {train_end, val_end};
    case Split::test: return {val_end, length};
  }
  return {0, 0};
}

std::size_t SeriesDataset::window_count(Split split) const {
  const auto [begin, end] = split_range(split);
  const std::size_t span = lookback + horizon;
  return end - begin >= span ? end - begin - span + 1 : 0;
}

void SeriesDataset::fit_standardization() {
  const auto [begin, end] = split_range(Split::train);
  if (end - begin < 2) throw DataError("train split has fewer than 2 rows");
  mean.assign(channels, 0.0);
  stddev.assign(channels, 0.0);
  const double n = double(end - begin);
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < channels; ++c) mean[c] += at(r, c);
  for (auto& m : mean) m /= n;
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < channels; ++c) {
      const double d = at(r, c) - mean[c];
      stddev[c] += d * d;
    }
  for (std::size_t c = 0; c < channels; ++c) {
    stddev[c] = std::sqrt(stddev[c] / n);
    if (!(stddev[c] > 1e-12 * std::max(1.0, std::abs(mean[c]))))
      throw DataError("channel '" + (c < names.size() ? names[c] : std::to_string(c)) +
                      "' is constant over the train split");
  }
}

SeriesDataset gen_synthetic_series(std::uint64_t seed, const SyntheticSeriesSpec& spec) {
  if (spec.channels == 0) throw ParameterError("gen_synthetic_series: channels must be positive");
  if (spec.length == 0) throw ParameterError("gen_synthetic_series: length must be positive");
  if (spec.periods.empty() || spec.min_components == 0 ||
      spec.min_components > spec.max_components)
    throw ParameterError("gen_synthetic_series: invalid component counts");
  if (!(spec.noise >= 0.0)) throw ParameterError("gen_synthetic_series: noise must be non-negative");

  Rng root(seed);
  Rng shape_rng = root.fork("series.components");
  Rng mix_rng = root.fork("series.mixing");
  Rng noise_rng = root.fork("series.noise");
  const std::size_t c = spec.channels, n = spec.length;

  std::vector<double> source(n * c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const std::size_t comps =
        spec.min_components + shape_rng.below(spec.max_components - spec.min_components + 1);
    const double slope = shape_rng.uniform(-spec.trend, spec.trend);
    std::vector<double> amp(comps), phase(comps), period(comps);
    for (std::size_t k = 0; k < comps; ++k) {
      period[k] = double(spec.periods[shape_rng.below(spec.periods.size())]);
      amp[k] = shape_rng.uniform(0.5, 1.5);
      phase[k] = shape_rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    for (std::size_t t = 0; t < n; ++t) {
      double v = slope * double(t) / double(n);
      for (std::size_t k = 0; k < comps; ++k)
        v += amp[k] * std::sin(2.0 * std::numbers::pi * double(t) / period[k] + phase[k]);
      source[t * c + ch] = v;
    }
  }

  std::vector<double> mix(c * c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      mix[i * c + j] = (i == j ? 1.0 : 0.0) + (i == j ? 0.0 : spec.coupling * mix_rng.normal());

  SeriesDataset ds;
  ds.length = n;
  ds.channels = c;
  ds.values.resize(n * c);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < c; ++i) {
      double v = 0;
      for (std::size_t j = 0; j < c; ++j) v += mix[i * c + j] * source[t * c + j];
      ds.values[t * c + i] = v + spec.noise * noise_rng.normal();
    }
  for (std::size_t i = 0; i < c; ++i) ds.names.push_back("ch" + std::to_string(i));
  return ds;
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

}  // namespace

SeriesDataset parse_csv_series(std::istream& in, bool date_column) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("CSV is empty; a header row is required");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_row(line);
  const std::size_t skip = date_column ? 1 : 0;
  if (header.size() <= skip) throw FormatError("CSV header has no value columns");

  SeriesDataset ds;
  ds.channels = header.size() - skip;
  for (std::size_t i = skip; i < header.size(); ++i) ds.names.push_back(trim(header[i]));
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size())
      throw FormatError("CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    for (std::size_t i = skip; i < cells.size(); ++i) {
      const std::string cell = trim(cells[i]);
      double v = 0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (*first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
        throw ParseError("CSV row " + std::to_string(row) + ", column " + std::to_string(i + 1) +
                             ": '" + cell + "' is not a number",
                         row, i + 1);
      ds.values.push_back(v);
    }
    ++ds.length;
  }
  return ds;
}

SeriesDataset load_csv_series(const std::filesystem::path& path, bool date_column) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_csv_series(in, date_column);
}

WindowIterator::WindowIterator(const SeriesDataset& dataset, Split split, std::size_t batch,
                               bool shuffle, Rng* rng)
    : ds_(dataset), split_(split), batch_(batch), shuffle_(shuffle && split == Split::train),
      rng_(rng) {
  if (batch == 0) throw ParameterError("WindowIterator: batch must be positive");
  if (shuffle_ && rng == nullptr) throw ContractError("WindowIterator: shuffling needs an Rng");
  if (dataset.mean.size() != dataset.channels)
    throw ContractError("WindowIterator: dataset is not standardized");
  const std::size_t count = dataset.window_count(split);
  if (count == 0) {
    const auto [b, e] = dataset.split_range(split);
    throw DataError(std::string(split_name(split)) + " split has " + std::to_string(e - b) +
                    " rows, fewer than one window of " +
                    std::to_string(dataset.lookback + dataset.horizon));
  }
  const std::size_t begin = dataset.split_range(split).first;
  order_.resize(count);
  for (std::size_t i = 0; i < count; ++i) order_[i] = begin + i;
  reset();
}

void WindowIterator::reset() {
  pos_ = 0;
  if (!shuffle_) return;
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_->below(i)]);
}

template <typename T>
bool WindowIterator::next(WindowBatch<T>& out) {
  if (pos_ >= order_.size()) return false;
  const std::size_t n = std::min(batch_, order_.size() - pos_);
  std::vector<std::size_t> starts(order_.begin() + std::ptrdiff_t(pos_),
                                  order_.begin() + std::ptrdiff_t(pos_ + n));
  pos_ += n;
  out = make_window_batch<T>(ds_, starts);
  return true;
}

template <typename T>
WindowBatch<T> make_window_batch(const SeriesDataset& ds, const std::vector<std::size_t>& starts) {
  const std::size_t b = starts.size(), l = ds.lookback, h = ds.horizon, c = ds.channels;
  std::vector<T> in(b * l * c), tg(b * h * c);
  for (std::size_t i = 0; i < b; ++i) {
    if (starts[i] + l + h > ds.length)
      throw DataError("window at row " + std::to_string(starts[i]) + " runs past the series end");
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t ch = 0; ch < c; ++ch)
        in[(i * l + t) * c + ch] = static_cast<T>(ds.standardize(ds.at(starts[i] + t, ch), ch));
    for (std::size_t t = 0; t < h; ++t)
      for (std::size_t ch = 0; ch < c; ++ch)
        tg[(i * h + t) * c + ch] =
            static_cast<T>(ds.standardize(ds.at(starts[i] + l + t, ch), ch));
  }
  return {Tensor<T>({b, l, c}, std::move(in)), Tensor<T>({b, h, c}, std::move(tg)), starts};
}

template bool WindowIterator::next(WindowBatch<float>&);
template bool WindowIterator::next(WindowBatch<double>&);
template WindowBatch<float> make_window_batch(const SeriesDataset&, const std::vector<std::size_t>&);
template WindowBatch<double> make_window_batch(const SeriesDataset&, const std::vector<std::size_t>&);

void save_series(const std::filesystem::path& dir, const SeriesDataset& ds) {
  Container c;
  c.kind = "series";
  c.meta = {{"length", ds.length},
            {"channels", ds.channels},
            {"names", ds.names},
            {"fractions", {ds.fractions.train, ds.fractions.val, ds.fractions.test}},
            {"lookback", ds.lookback},
            {"horizon", ds.horizon}};
  c.entries.push_back(ContainerEntry::from<double>("values", {ds.length, ds.channels}, ds.values));
  if (!ds.mean.empty()) {
    c.entries.push_back(ContainerEntry::from<double>("mean", {ds.channels}, ds.mean));
    c.entries.push_back(ContainerEntry::from<double>("stddev", {ds.channels}, ds.stddev));
  }
  write_container(dir, c);
}

SeriesDataset load_series(const std::filesystem::path& dir) {
  const Container c = read_container(dir);
  if (c.kind != "series") throw FormatError(dir.string() + " holds '" + c.kind + "', not a series");
  SeriesDataset ds;
  try {
    ds.length = c.meta.at("length");
    ds.channels = c.meta.at("channels");
    ds.names = c.meta.at("names").get<std::vector<std::string>>();
    const auto f = c.meta.at("fractions").get<std::vector<double>>();
    if (f.size() != 3) throw FormatError("series fractions must have 3 entries");
    ds.fractions = {f[0], f[1], f[2]};
    ds.lookback = c.meta.at("lookback");
    ds.horizon = c.meta.at("horizon");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + ": " + e.what());
  }
  ds.values = c.get("values").values<double>();
  if (ds.values.size() != ds.length * ds.channels)
    throw FormatError(dir.string() + ": values do not match length x channels");
  if (c.has("mean")) {
    ds.mean = c.get("mean").values<double>();
    ds.stddev = c.get("stddev").values<double>();
  }
  return ds;
}

}  // namespace simba
