#pragma once

// Directory container shared by checkpoints and persisted datasets:
//   manifest.json  format version, kind, free-form metadata, tensor index
//   data.bin       little-endian tensor payloads, concatenated in index order
// Both files are written to a temporary name and renamed into place, blob
// first, so a manifest never refers to a partially written blob.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "simba/error.hpp"
#include "simba/tensor.hpp"

namespace simba {

inline constexpr int kContainerVersion = 1;

enum class ElementType { f32, f64, i64 };

const char* element_type_name(ElementType type);
std::size_t element_size(ElementType type);

template <typename T>
constexpr ElementType element_type_of();
template <>
constexpr ElementType element_type_of<float>() { return ElementType::f32; }
template <>
constexpr ElementType element_type_of<double>() { return ElementType::f64; }
template <>
constexpr ElementType element_type_of<std::int64_t>() { return ElementType::i64; }

struct ContainerEntry {
  std::string name;
  ElementType type = ElementType::f64;
  Shape shape;
  std::vector<unsigned char> bytes;  // host order in memory

  template <typename T>
  static ContainerEntry from(std::string name, Shape shape, std::span<const T> values) {
    if (shape_numel(shape) != values.size())
      throw DimensionError("container entry '" + name + "': shape " + shape_str(shape) +
                           " does not hold " + std::to_string(values.size()) + " values");
    ContainerEntry e{std::move(name), element_type_of<T>(), std::move(shape), {}};
    e.bytes.resize(values.size() * sizeof(T));
    if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
    return e;
  }

  template <typename T>
  std::vector<T> values() const {
    if (type != element_type_of<T>())
      throw FormatError("container entry '" + name + "' holds " + element_type_name(type) +
                        ", requested " + element_type_name(element_type_of<T>()));
    std::vector<T> out(bytes.size() / sizeof(T));
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
  }
};

struct Container {
  std::string kind;       // "checkpoint", "series", "images"
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ContainerEntry> entries;

  // FormatError when absent.
  const ContainerEntry& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_container(const std::filesystem::path& dir, const Container& container);
// FormatError for missing files, bad manifests, or blob size mismatches.
Container read_container(const std::filesystem::path& dir);

// Writes text to path through a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace simba
