#include <Eigen/Core>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "internal.hpp"
#include "simba/cli.hpp"
#include "simba/error.hpp"

namespace simba {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  fs::path config, checkpoint, out, input;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool quiet = false;
};

struct FinalMetric {
  std::string split, metric;
  double value;
};

void print_metrics(const std::vector<FinalMetric>& rows, std::ostream& out) {
  for (const auto& r : rows) out << r.split << ' ' << r.metric << ' ' << format_double(r.value) << '\n';
}

RunConfig load_config(const Options& o) {
  RunConfig cfg = load_run_config(o.config);
  if (o.seed_set) {
    cfg.seed = o.seed;
    cfg.optim.seed = o.seed;
  }
  return cfg;
}

SeriesDataset load_series_data(RunConfig& cfg) {
  SeriesDataset ds;
  switch (cfg.data.kind) {
    case DataSource::Kind::synthetic: ds = gen_synthetic_series(cfg.data_seed(), cfg.data.series); break;
    case DataSource::Kind::csv: ds = load_csv_series(cfg.data.path, cfg.data.date_column); break;
    case DataSource::Kind::dataset: ds = load_series(cfg.data.path); break;
  }
  if (cfg.forecast_channels_set && cfg.forecast.channels != ds.channels)
    throw ConfigError("/model/channels", "is " + std::to_string(cfg.forecast.channels) +
                                             " but the data has " + std::to_string(ds.channels) +
                                             " channels");
  cfg.forecast.channels = ds.channels;
  ds.fractions = cfg.data.fractions;
  ds.lookback = cfg.forecast.lookback;
  ds.horizon = cfg.forecast.horizon;
  ds.fit_standardization();
  return ds;
}

ImageDataset load_image_data(const RunConfig& cfg) {
  ImageDataset ds = cfg.data.kind == DataSource::Kind::dataset
                        ? load_images(cfg.data.path)
                        : gen_synthetic_images(cfg.data_seed(), cfg.data.images);
  const VisionConfig& v = cfg.vision;
  if (ds.size != v.image_size)
    throw ConfigError("/model/image_size", "is " + std::to_string(v.image_size) +
                                               " but the images are " + std::to_string(ds.size));
  if (ds.channels != v.in_channels)
    throw ConfigError("/model/in_channels", "is " + std::to_string(v.in_channels) +
                                                " but the images have " + std::to_string(ds.channels));
  if (ds.classes != v.num_classes)
    throw ConfigError("/model/num_classes", "is " + std::to_string(v.num_classes) +
                                                " but the data has " + std::to_string(ds.classes));
  return ds;
}

template <typename T>
std::vector<FinalMetric> final_vision(const VisionModel<T>& model, const ImageDataset& data,
                                      const std::vector<std::size_t>& val_idx) {
  if (val_idx.empty()) return {};
  const auto m = evaluate_vision(model, data, val_idx, 64);
  return {{"val", "loss", m.loss}, {"val", "top1", m.top1}};
}

template <typename T>
std::vector<FinalMetric> final_forecast(const ForecastModel<T>& model, const SeriesDataset& data) {
  std::vector<FinalMetric> rows;
  const std::string h = "@" + std::to_string(data.horizon);
  for (Split split : {Split::val, Split::test}) {
    if (data.window_count(split) == 0) continue;
    const auto m = evaluate_forecast(model, data, split, 64);
    const auto p = persistence_baseline(data, split);
    rows.push_back({split_name(split), "mse" + h, m.mse});
    rows.push_back({split_name(split), "mae" + h, m.mae});
    rows.push_back({split_name(split), "persistence_mse" + h, p.mse});
    rows.push_back({split_name(split), "persistence_mae" + h, p.mae});
  }
  return rows;
}

template <typename T>
int train_impl(RunConfig& cfg, const Options& o, std::ostream& out, std::ostream& err) {
  fs::path dir = o.out.empty() ? cfg.out : o.out;
  if (dir.empty()) throw ConfigError("/out", "no output directory; set it in the config or pass --out");
  fs::create_directories(dir);
  const fs::path ckpt_dir = dir / "checkpoint";
  Rng init_rng = Rng(cfg.seed).fork("init");

  CheckpointInfo info;
  info.task = cfg.task;
  info.precision = std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
  TrainReport report;
  std::vector<FinalMetric> final;
  ParamList<T> params;
  auto hook = [&](std::size_t step, const Rng& rng) {
    info.step = step;
    info.rng_state = rng.state();
    save_checkpoint(ckpt_dir, params, info);
  };

  if (cfg.task == Task::vision) {
    const ImageDataset data = load_image_data(cfg);
    auto [train_idx, val_idx] = image_split(data, cfg.data.val_fraction);
    auto model = VisionModel<T>::init(cfg.vision, init_rng);
    params = model.parameters();
    info.model = to_json(cfg.vision);
    report = train_vision(model, data, train_idx, val_idx, cfg.optim, hook);
    final = final_vision(model, data, val_idx);
  } else {
    const SeriesDataset data = load_series_data(cfg);
    auto model = ForecastModel<T>::init(cfg.forecast, init_rng);
    params = model.parameters();
    info.model = to_json(cfg.forecast);
    info.mean = data.mean;
    info.stddev = data.stddev;
    info.channel_names = data.names;
    report = train_forecast(model, data, cfg.optim, hook);
    final = final_forecast(model, data);
  }

  {
    std::ostringstream csv;
    report.metrics.write_csv(csv);
    write_file_atomic(dir / "metrics.csv", csv.str());
  }
  json summary = {{"task", task_name(cfg.task)},
                  {"seed", cfg.seed},
                  {"steps", report.steps},
                  {"nonfinite_steps", report.nonfinite_steps},
                  {"nonfinite", report.nonfinite},
                  {"aborted", report.aborted},
                  {"wall_seconds", report.wall_seconds},
                  {"parameters", count_parameters(params)},
                  {"checkpoint", ckpt_dir.string()},
                  {"final", json::array()}};
  if (!report.losses.empty()) {
    summary["initial_loss"] = report.losses.front();
    summary["final_loss"] = report.losses.back();
  }
  for (const auto& r : final)
    summary["final"].push_back({{"split", r.split}, {"metric", r.metric}, {"value", r.value}});
  write_file_atomic(dir / "summary.json", summary.dump(2) + "\n");

  if (!o.quiet) {
    out << "task " << task_name(cfg.task) << ", " << count_parameters(params) << " parameters, "
        << report.steps << " steps in " << format_double(std::round(report.wall_seconds * 10) / 10)
        << " s, " << report.nonfinite_steps << " non-finite\n";
    if (!report.losses.empty())
      out << "train loss " << format_double(report.losses.front()) << " -> "
          << format_double(report.losses.back()) << '\n';
  }
  print_metrics(final, out);
  if (report.aborted) {
    err << "training aborted after " << cfg.optim.abort_after
              << " consecutive non-finite steps\n";
    return 3;
  }
  return 0;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(o);
  return cfg.precision == Precision::f32 ? train_impl<float>(cfg, o, out, err)
                                         : train_impl<double>(cfg, o, out, err);
}

template <typename T>
int eval_impl(RunConfig& cfg, const Container& ckpt, const CheckpointInfo& info, std::ostream& out) {
  Rng rng(0);
  if (info.task == Task::vision) {
    cfg.vision = vision_config_from_json(info.model);
    const ImageDataset data = load_image_data(cfg);
    const auto val_idx = image_split(data, cfg.data.val_fraction).second;
    auto model = VisionModel<T>::init(cfg.vision, rng);
    load_parameters(ckpt, model.parameters());
    print_metrics(final_vision(model, data, val_idx), out);
  } else {
    cfg.forecast = forecast_config_from_json(info.model);
    cfg.forecast_channels_set = true;
    SeriesDataset data = load_series_data(cfg);
    if (info.mean.size() == data.channels) {
      data.mean = info.mean;
      data.stddev = info.stddev;
    }
    auto model = ForecastModel<T>::init(cfg.forecast, rng);
    load_parameters(ckpt, model.parameters());
    print_metrics(final_forecast(model, data), out);
  }
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  RunConfig cfg = load_config(o);
  const Container ckpt = read_container(o.checkpoint);
  const CheckpointInfo info = read_checkpoint_info(ckpt);
  if (info.task != cfg.task)
    throw ConfigError("/task", std::string("is ") + task_name(cfg.task) + " but the checkpoint is " +
                                   task_name(info.task));
  return info.precision == Precision::f32 ? eval_impl<float>(cfg, ckpt, info, out)
                                          : eval_impl<double>(cfg, ckpt, info, out);
}

template <typename T>
void forecast_impl(const Container& ckpt, const CheckpointInfo& info, const SeriesDataset& input,
                   const fs::path& out_csv) {
  const ForecastConfig fc = forecast_config_from_json(info.model);
  if (input.channels != fc.channels)
    throw DataError("input has " + std::to_string(input.channels) + " channels, model expects " +
                    std::to_string(fc.channels));
  if (input.length < fc.lookback)
    throw DataError("input has " + std::to_string(input.length) + " rows, model needs a lookback of " +
                    std::to_string(fc.lookback));
  if (info.mean.size() != fc.channels) throw FormatError("checkpoint lacks standardization statistics");
  Rng rng(0);
  auto model = ForecastModel<T>::init(fc, rng);
  load_parameters(ckpt, model.parameters());
  const std::size_t l = fc.lookback, c = fc.channels, first = input.length - l;
  std::vector<T> x(l * c);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t ch = 0; ch < c; ++ch)
      x[t * c + ch] = static_cast<T>((input.at(first + t, ch) - info.mean[ch]) / info.stddev[ch]);
  const Tensor<T> pred = model.forward(Tensor<T>({1, l, c}, std::move(x)), {});
  std::ostringstream csv;
  const auto& names = info.channel_names.size() == c ? info.channel_names : input.names;
  for (std::size_t ch = 0; ch < c; ++ch) csv << (ch ? "," : "") << names[ch];
  csv << '\n';
  for (std::size_t t = 0; t < fc.horizon; ++t)
    for (std::size_t ch = 0; ch < c; ++ch)
      csv << format_double(double(pred.data()[t * c + ch]) * info.stddev[ch] + info.mean[ch])
          << (ch + 1 == c ? "\n" : ",");
  write_file_atomic(out_csv, csv.str());
}

int cmd_forecast(const Options& o, std::ostream& out) {
  bool date_column = true;
  if (!o.config.empty()) {
    const RunConfig cfg = load_config(o);
    if (cfg.task != Task::forecast) throw ConfigError("/task", "forecast needs a forecast config");
    date_column = cfg.data.date_column;
  }
  const Container ckpt = read_container(o.checkpoint);
  const CheckpointInfo info = read_checkpoint_info(ckpt);
  if (info.task != Task::forecast) throw FormatError("checkpoint is not a forecast model");
  if (!fs::exists(o.input)) throw DataError("input " + o.input.string() + " does not exist");
  const SeriesDataset input = load_csv_series(o.input, date_column);
  if (info.precision == Precision::f32) forecast_impl<float>(ckpt, info, input, o.out);
  else forecast_impl<double>(ckpt, info, input, o.out);
  if (!o.quiet) out << "wrote " << o.out.string() << '\n';
  return 0;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  GenDataSpec spec = parse_gen_data_spec(read_text_file(o.config));
  if (o.seed_set) spec.seed = o.seed;
  if (o.out.empty()) throw ConfigError("", "gen-data needs --out");
  if (spec.images) {
    const ImageDataset ds = gen_synthetic_images(spec.seed, spec.image);
    save_images(o.out, ds);
    double sum = 0;
    for (float p : ds.pixels) sum += p;
    out << "images " << ds.count << " (" << ds.classes << " classes, " << ds.channels << "x"
        << ds.size << "x" << ds.size << ")\n";
    out << "pixel mean " << format_double(sum / double(ds.pixels.size())) << '\n';
    out << "nearest-centroid accuracy " << format_double(ds.centroid_accuracy) << '\n';
  } else {
    const SeriesDataset ds = gen_synthetic_series(spec.seed, spec.series);
    save_series(o.out, ds);
    out << "series " << ds.length << " x " << ds.channels << '\n';
    for (std::size_t c = 0; c < ds.channels; ++c) {
      double m = 0, v = 0;
      for (std::size_t r = 0; r < ds.length; ++r) m += ds.at(r, c);
      m /= double(ds.length);
      for (std::size_t r = 0; r < ds.length; ++r) v += (ds.at(r, c) - m) * (ds.at(r, c) - m);
      out << ds.names[c] << " mean " << format_double(m) << " std "
          << format_double(std::sqrt(v / double(ds.length))) << '\n';
    }
  }
  return 0;
}

void apply_thread_cap() {
  const char* env = std::getenv("SIMBA_THREADS");
  if (!env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1)
    throw ConfigError("", std::string("SIMBA_THREADS must be a positive integer, got '") + env + "'");
  Eigen::setNbThreads(static_cast<int>(n));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SiMBA: selective state-space sequence mixing with spectral channel mixing"};
  app.require_subcommand(1);
  Options o;
  std::string scope = "all", suite;
  std::vector<std::size_t> sizes;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { o.seed = s, o.seed_set = true; },
        "override the configured seed");
    sub->add_flag("--quiet", o.quiet, "only print results");
  };
  auto* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", o.config, "run config (JSON)")->required();
  train->add_option("--out", o.out, "output directory (overrides the config)");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--config", o.config, "run config (JSON)")->required();
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  add_common(eval);
  auto* forecast = app.add_subcommand("forecast", "forecast the horizon after a CSV lookback");
  forecast->add_option("--config", o.config, "run config (JSON), for CSV layout");
  forecast->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
  forecast->add_option("--input", o.input, "input CSV; the last lookback rows are used")->required();
  forecast->add_option("--out", o.out, "prediction CSV (horizon x channels)")->required();
  add_common(forecast);
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit (real64)");
  gradcheck->add_option("--scope", scope, "op name, group (spectral, ssm, ops) or block, model, all");
  add_common(gradcheck);
  auto* bench = app.add_subcommand("bench", "timing tables for the scan and EMM paths");
  bench->add_option("--suite", suite, "ssm-kernel or einfft")->required();
  bench->add_option("--sizes", sizes, "sequence lengths or channel counts")->delimiter(',');
  bench->add_option("--out", o.out, "CSV path (stdout when omitted)");
  add_common(bench);
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen->add_option("--config", o.config, "dataset spec (JSON)")->required();
  gen->add_option("--out", o.out, "dataset directory")->required();
  add_common(gen);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    apply_thread_cap();
    if (train->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out);
    if (forecast->parsed()) return cmd_forecast(o, out);
    if (gradcheck->parsed()) return cmd_gradcheck(scope, o.seed, out);
    if (bench->parsed()) return cmd_bench(suite, sizes, o.out, out);
    if (gen->parsed()) return cmd_gen_data(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const InvariantError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace simba
