#include <fstream>
#include <set>
#include <sstream>

#include "internal.hpp"
#include "simba/cli.hpp"
#include "simba/error.hpp"

namespace simba {

namespace fs = std::filesystem;
using nlohmann::json;

const char* task_name(Task task) { return task == Task::vision ? "vision" : "forecast"; }

namespace {

// Reads one JSON object, tracking the pointer path for errors and rejecting
// keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path.empty() ? "/" : path, what);
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  bool read(const std::string& key, std::size_t& out) {
    const json* v = find(key);
    if (!v) return false;
    out = as_size(*v, at(key));
    return true;
  }
  bool read(const std::string& key, std::uint64_t& out, int) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number_unsigned()) fail(at(key), "expected a non-negative integer");
    out = v->get<std::uint64_t>();
    return true;
  }
  bool read(const std::string& key, double& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number()) fail(at(key), "expected a number");
    out = v->get<double>();
    return true;
  }
  bool read(const std::string& key, bool& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_boolean()) fail(at(key), "expected true or false");
    out = v->get<bool>();
    return true;
  }
  bool read(const std::string& key, std::string& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_string()) fail(at(key), "expected a string");
    out = v->get<std::string>();
    return true;
  }
  bool read(const std::string& key, std::vector<std::size_t>& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_array()) fail(at(key), "expected an array of non-negative integers");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i)
      out.push_back(as_size((*v)[i], at(key) + "/" + std::to_string(i)));
    return true;
  }
  std::string require_string(const std::string& key) {
    std::string s;
    if (!read(key, s)) fail(at(key), "is required");
    return s;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(at(it.key()), "unknown field");
  }

  const std::string& path() const { return path_; }

 private:
  static std::size_t as_size(const json& v, const std::string& path) {
    if (!v.is_number_unsigned()) fail(path, "expected a non-negative integer");
    return v.get<std::size_t>();
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Rethrows a model-level ConfigError ("block/ssm/state") at its location in
// the model section, where block fields sit alongside the model fields.
[[noreturn]] void rethrow_model_error(const ConfigError& e, const std::string& base) {
  std::string p = e.path();
  if (p.rfind("block/", 0) == 0) p = p.substr(6);
  throw ConfigError(base + (p.empty() ? "" : "/" + p), e.detail());
}

void read_block(Reader& r, BlockConfig& b) {
  std::string mixer;
  if (r.read("mixer", mixer)) {
    try {
      b.mixer = parse_mixer(mixer);
    } catch (const ConfigError& e) {
      Reader::fail(r.at("mixer"), e.detail());
    }
  }
  r.read("dropout", b.dropout);
  r.read("mlp_ratio", b.mlp_ratio);
  r.read("norm_eps", b.norm_eps);
  if (const json* s = r.find("ssm")) {
    Reader sr(*s, r.at("ssm"));
    sr.read("expand", b.ssm.expand);
    sr.read("state", b.ssm.state);
    sr.read("conv_width", b.ssm.conv_width);
    sr.finish();
  }
  if (const json* s = r.find("einfft")) {
    Reader er(*s, r.at("einfft"));
    er.read("num_blocks", b.einfft.num_blocks);
    er.read("sparsity_threshold", b.einfft.sparsity_threshold);
    er.read("init_scale", b.einfft.init_scale);
    std::string axis;
    if (er.read("fft_axis", axis)) {
      if (axis == "sequence") b.einfft.fft_axis = FftAxis::sequence;
      else if (axis == "channel") b.einfft.fft_axis = FftAxis::channel;
      else Reader::fail(er.at("fft_axis"), "expected \"sequence\" or \"channel\"");
    }
    er.finish();
  }
}

json block_json(const BlockConfig& b) {
  return {{"mixer", mixer_name(b.mixer)},
          {"dropout", b.dropout},
          {"mlp_ratio", b.mlp_ratio},
          {"norm_eps", b.norm_eps},
          {"ssm", {{"expand", b.ssm.expand}, {"state", b.ssm.state}, {"conv_width", b.ssm.conv_width}}},
          {"einfft",
           {{"num_blocks", b.einfft.num_blocks},
            {"sparsity_threshold", b.einfft.sparsity_threshold},
            {"init_scale", b.einfft.init_scale},
            {"fft_axis", b.einfft.fft_axis == FftAxis::sequence ? "sequence" : "channel"}}}};
}

VisionConfig read_vision(Reader& r) {
  VisionConfig c;
  r.read("image_size", c.image_size);
  r.read("in_channels", c.in_channels);
  r.read("patch", c.patch);
  r.read("dims", c.dims);
  r.read("depths", c.depths);
  r.read("num_classes", c.num_classes);
  read_block(r, c.block);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    rethrow_model_error(e, r.path());
  }
  return c;
}

ForecastConfig read_forecast(Reader& r, bool* channels_set) {
  ForecastConfig c;
  const bool set = r.read("channels", c.channels);
  if (channels_set) *channels_set = set;
  r.read("lookback", c.lookback);
  r.read("horizon", c.horizon);
  r.read("depth", c.depth);
  r.read("dim", c.block.dim);
  read_block(r, c.block);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    rethrow_model_error(e, r.path());
  }
  return c;
}

void read_optim(Reader& r, OptimConfig& o) {
  r.read("base_lr", o.base_lr);
  if (const json* b = r.find("betas")) {
    if (!b->is_array() || b->size() != 2) Reader::fail(r.at("betas"), "expected two numbers");
    for (std::size_t i = 0; i < 2; ++i)
      if (!(*b)[i].is_number()) Reader::fail(r.at("betas") + "/" + std::to_string(i), "expected a number");
    o.beta1 = (*b)[0].get<double>();
    o.beta2 = (*b)[1].get<double>();
  }
  r.read("eps", o.eps);
  r.read("weight_decay", o.weight_decay);
  r.read("warmup_fraction", o.warmup_fraction);
  r.read("epochs", o.epochs);
  r.read("max_steps", o.max_steps);
  r.read("label_smoothing", o.label_smoothing);
  r.read("grad_clip_norm", o.grad_clip_norm);
  r.read("batch", o.batch);
  r.read("abort_after", o.abort_after);
  r.read("eval_every", o.eval_every);
  r.finish();
  try {
    o.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.path() + "/" + e.path(), e.detail());
  }
}

void read_series_spec(Reader& r, SyntheticSeriesSpec& s) {
  r.read("channels", s.channels);
  r.read("length", s.length);
  r.read("periods", s.periods);
  r.read("min_components", s.min_components);
  r.read("max_components", s.max_components);
  r.read("noise", s.noise);
  r.read("trend", s.trend);
  r.read("coupling", s.coupling);
  r.finish();
  if (s.channels == 0) Reader::fail(r.at("channels"), "must be positive");
  if (s.length == 0) Reader::fail(r.at("length"), "must be positive");
  if (s.periods.empty()) Reader::fail(r.at("periods"), "must not be empty");
  for (std::size_t i = 0; i < s.periods.size(); ++i)
    if (s.periods[i] == 0) Reader::fail(r.at("periods") + "/" + std::to_string(i), "must be positive");
  if (s.min_components == 0) Reader::fail(r.at("min_components"), "must be positive");
  if (s.max_components < s.min_components)
    Reader::fail(r.at("max_components"), "must be at least min_components");
  if (!(s.noise >= 0)) Reader::fail(r.at("noise"), "must be non-negative");
}

void read_image_spec(Reader& r, SyntheticImageSpec& s) {
  r.read("classes", s.classes);
  r.read("per_class", s.per_class);
  r.read("size", s.size);
  r.read("noise", s.noise);
  r.read("holdout_per_class", s.holdout_per_class);
  r.finish();
  if (s.classes < 2) Reader::fail(r.at("classes"), "must be at least 2");
  if (s.per_class == 0) Reader::fail(r.at("per_class"), "must be positive");
  if (s.size < 8) Reader::fail(r.at("size"), "must be at least 8");
  if (!(s.noise >= 0)) Reader::fail(r.at("noise"), "must be non-negative");
}

void read_data(Reader& r, Task task, const fs::path& base_dir, DataSource& d) {
  int sources = 0;
  if (const json* s = r.find("synthetic")) {
    ++sources;
    d.kind = DataSource::Kind::synthetic;
    Reader sr(*s, r.at("synthetic"));
    if (task == Task::forecast) read_series_spec(sr, d.series);
    else read_image_spec(sr, d.images);
  }
  auto read_path = [&](const char* key, DataSource::Kind kind) {
    const json* v = r.find(key);
    if (!v) return;
    ++sources;
    d.kind = kind;
    if (!v->is_string()) Reader::fail(r.at(key), "expected a path string");
    fs::path p = v->get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    if (!fs::exists(p)) Reader::fail(r.at(key), "path " + p.string() + " does not exist");
    d.path = p;
  };
  read_path("csv", DataSource::Kind::csv);
  read_path("dataset", DataSource::Kind::dataset);
  if (sources != 1)
    Reader::fail(r.path(), "exactly one of synthetic, csv, dataset is required");
  if (d.kind == DataSource::Kind::csv && task != Task::forecast)
    Reader::fail(r.at("csv"), "CSV input is only supported for the forecast task");
  std::uint64_t seed;
  if (r.read("seed", seed, 0)) d.has_seed = true, d.seed = seed;
  r.read("date_column", d.date_column);
  if (const json* f = r.find("fractions")) {
    if (!f->is_array() || f->size() != 3 || !(*f)[0].is_number() || !(*f)[1].is_number() ||
        !(*f)[2].is_number())
      Reader::fail(r.at("fractions"), "expected three numbers (train, val, test)");
    d.fractions = {(*f)[0].get<double>(), (*f)[1].get<double>(), (*f)[2].get<double>()};
    const double sum = d.fractions.train + d.fractions.val + d.fractions.test;
    if (!(d.fractions.train > 0 && d.fractions.val >= 0 && d.fractions.test >= 0) ||
        std::abs(sum - 1.0) > 1e-9)
      Reader::fail(r.at("fractions"), "must be non-negative with positive train and sum to 1");
  }
  r.read("val_fraction", d.val_fraction);
  if (!(d.val_fraction >= 0 && d.val_fraction < 1))
    Reader::fail(r.at("val_fraction"), "must lie in [0, 1)");
  r.finish();
}

json parse_json_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

}  // namespace

RunConfig parse_run_config(std::string_view text, const fs::path& base_dir) {
  const json j = parse_json_text(text);
  Reader root(j, "");
  RunConfig c;
  const std::string task = root.require_string("task");
  if (task == "vision") c.task = Task::vision;
  else if (task == "forecast") c.task = Task::forecast;
  else Reader::fail("/task", "expected \"vision\" or \"forecast\"");
  root.read("seed", c.seed, 0);
  std::string out;
  if (root.read("out", out)) c.out = fs::path(out).is_relative() ? base_dir / out : fs::path(out);
  std::string precision;
  if (root.read("precision", precision)) {
    if (precision == "f32") c.precision = Precision::f32;
    else if (precision == "f64") c.precision = Precision::f64;
    else Reader::fail("/precision", "expected \"f32\" or \"f64\"");
  }
  static const json empty = json::object();
  const json* model = root.find("model");
  Reader mr(model ? *model : empty, "/model");
  if (c.task == Task::vision) c.vision = read_vision(mr);
  else c.forecast = read_forecast(mr, &c.forecast_channels_set);
  if (c.task == Task::forecast) c.optim.grad_clip_norm = 1.0;
  if (const json* o = root.find("optim")) {
    Reader orr(*o, "/optim");
    read_optim(orr, c.optim);
  }
  const json* data = root.find("data");
  if (!data) Reader::fail("/data", "is required");
  Reader dr(*data, "/data");
  read_data(dr, c.task, base_dir, c.data);
  root.finish();
  c.optim.seed = c.seed;
  return c;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_text_file(path), path.parent_path());
}

GenDataSpec parse_gen_data_spec(std::string_view text) {
  const json j = parse_json_text(text);
  Reader root(j, "");
  GenDataSpec spec;
  const std::string kind = root.require_string("kind");
  if (kind == "images") spec.images = true;
  else if (kind != "series") Reader::fail("/kind", "expected \"series\" or \"images\"");
  root.read("seed", spec.seed, 0);
  static const json empty = json::object();
  if (spec.images) {
    const json* s = root.find("images");
    Reader r(s ? *s : empty, "/images");
    read_image_spec(r, spec.image);
  } else {
    const json* s = root.find("series");
    Reader r(s ? *s : empty, "/series");
    read_series_spec(r, spec.series);
  }
  root.finish();
  return spec;
}

json to_json(const VisionConfig& c) {
  json j = block_json(c.block);
  j["image_size"] = c.image_size;
  j["in_channels"] = c.in_channels;
  j["patch"] = c.patch;
  j["dims"] = c.dims;
  j["depths"] = c.depths;
  j["num_classes"] = c.num_classes;
  return j;
}

json to_json(const ForecastConfig& c) {
  json j = block_json(c.block);
  j["channels"] = c.channels;
  j["lookback"] = c.lookback;
  j["horizon"] = c.horizon;
  j["depth"] = c.depth;
  j["dim"] = c.block.dim;
  return j;
}

VisionConfig vision_config_from_json(const json& j) {
  Reader r(j, "/model");
  return read_vision(r);
}

ForecastConfig forecast_config_from_json(const json& j) {
  Reader r(j, "/model");
  return read_forecast(r, nullptr);
}

}  // namespace simba
