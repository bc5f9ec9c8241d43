#include <set>

#include "simba/cli.hpp"
#include "simba/error.hpp"

namespace simba {

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& params,
                     const CheckpointInfo& info) {
  Container c;
  c.kind = "checkpoint";
  c.meta = {{"task", task_name(info.task)},
            {"precision", info.precision == Precision::f32 ? "f32" : "f64"},
            {"step", info.step},
            {"rng_state", info.rng_state},
            {"model", info.model},
            {"channel_names", info.channel_names}};
  for (const auto& p : params)
    c.entries.push_back(ContainerEntry::from<T>(p.name, p.tensor.shape(), p.tensor.data()));
  if (!info.mean.empty()) {
    c.entries.push_back(ContainerEntry::from<double>("data.mean", {info.mean.size()}, info.mean));
    c.entries.push_back(
        ContainerEntry::from<double>("data.stddev", {info.stddev.size()}, info.stddev));
  }
  write_container(path, c);
}

CheckpointInfo read_checkpoint_info(const Container& c) {
  if (c.kind != "checkpoint") throw FormatError("container holds '" + c.kind + "', not a checkpoint");
  CheckpointInfo info;
  try {
    const std::string task = c.meta.at("task");
    if (task == "vision") info.task = Task::vision;
    else if (task == "forecast") info.task = Task::forecast;
    else throw FormatError("checkpoint task '" + task + "' is unknown");
    const std::string precision = c.meta.at("precision");
    if (precision != "f32" && precision != "f64")
      throw FormatError("checkpoint precision '" + precision + "' is unknown");
    info.precision = precision == "f32" ? Precision::f32 : Precision::f64;
    info.step = c.meta.at("step");
    info.rng_state = c.meta.at("rng_state");
    info.model = c.meta.at("model");
    info.channel_names = c.meta.at("channel_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  if (c.has("data.mean")) {
    info.mean = c.get("data.mean").values<double>();
    info.stddev = c.get("data.stddev").values<double>();
  }
  return info;
}

template <typename T>
void load_parameters(const Container& c, const ParamList<T>& params) {
  std::set<std::string> expected;
  for (const auto& p : params) {
    expected.insert(p.name);
    const ContainerEntry& e = c.get(p.name);
    if (e.shape != p.tensor.shape())
      throw FormatError("checkpoint parameter '" + p.name + "' has shape " + shape_str(e.shape) +
                        ", model expects " + shape_str(p.tensor.shape()));
    const std::vector<T> values = e.values<T>();
    Tensor<T> t = p.tensor;
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }
  for (const auto& e : c.entries)
    if (e.name.rfind("data.", 0) != 0 && !expected.count(e.name))
      throw FormatError("checkpoint parameter '" + e.name + "' is not part of the model");
}

template void save_checkpoint(const std::filesystem::path&, const ParamList<float>&,
                              const CheckpointInfo&);
template void save_checkpoint(const std::filesystem::path&, const ParamList<double>&,
                              const CheckpointInfo&);
template void load_parameters(const Container&, const ParamList<float>&);
template void load_parameters(const Container&, const ParamList<double>&);

}  // namespace simba
