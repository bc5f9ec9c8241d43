#include "simba/container.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace simba {

namespace {

namespace fs = std::filesystem;

// Payloads are little-endian on disk; swap element bytes on big-endian hosts.
void to_little_endian(std::vector<unsigned char>& bytes, std::size_t width) {
  if constexpr (std::endian::native == std::endian::little) return;
  for (std::size_t i = 0; i + width <= bytes.size(); i += width)
    std::reverse(bytes.begin() + static_cast<std::ptrdiff_t>(i),
                 bytes.begin() + static_cast<std::ptrdiff_t>(i + width));
}

ElementType parse_type(const std::string& name) {
  if (name == "f32") return ElementType::f32;
  if (name == "f64") return ElementType::f64;
  if (name == "i64") return ElementType::i64;
  throw FormatError("unknown element type '" + name + "'");
}

fs::path temp_name(const fs::path& path) {
  return path.string() + ".tmp" + std::to_string(::getpid());
}

void write_bytes_atomic(const fs::path& path, const char* data, std::size_t size) {
  const fs::path tmp = temp_name(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

const char* element_type_name(ElementType type) {
  switch (type) {
    case ElementType::f32: return "f32";
    case ElementType::f64: return "f64";
    case ElementType::i64: return "i64";
  }
  return "?";
}

std::size_t element_size(ElementType type) { return type == ElementType::f32 ? 4 : 8; }

const ContainerEntry& Container::get(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw FormatError("container has no entry '" + name + "'");
}

bool Container::has(const std::string& name) const {
  return std::any_of(entries.begin(), entries.end(),
                     [&](const ContainerEntry& e) { return e.name == name; });
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  write_bytes_atomic(path, text.data(), text.size());
}

void write_container(const fs::path& dir, const Container& container) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json index = nlohmann::json::array();
  std::vector<unsigned char> blob;
  for (const auto& e : container.entries) {
    if (e.bytes.size() != shape_numel(e.shape) * element_size(e.type))
      throw FormatError("container entry '" + e.name + "' has " + std::to_string(e.bytes.size()) +
                        " bytes for shape " + shape_str(e.shape));
    std::vector<unsigned char> le = e.bytes;
    to_little_endian(le, element_size(e.type));
    index.push_back({{"name", e.name},
                     {"dtype", element_type_name(e.type)},
                     {"shape", e.shape},
                     {"offset", blob.size()},
                     {"bytes", le.size()}});
    blob.insert(blob.end(), le.begin(), le.end());
  }
  nlohmann::json manifest = {{"format", "simba-container"},
                             {"format_version", kContainerVersion},
                             {"kind", container.kind},
                             {"meta", container.meta},
                             {"tensors", index},
                             {"blob", "data.bin"},
                             {"blob_bytes", blob.size()}};
  write_bytes_atomic(dir / "data.bin", reinterpret_cast<const char*>(blob.data()), blob.size());
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Container read_container(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  try {
    if (manifest.at("format") != "simba-container")
      throw FormatError(manifest_path.string() + " is not a simba container");
    const int version = manifest.at("format_version");
    if (version != kContainerVersion)
      throw FormatError("unsupported container version " + std::to_string(version));

    const fs::path blob_path = dir / manifest.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw FormatError("cannot open " + blob_path.string());
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)),
                                    std::istreambuf_iterator<char>());
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>())
      throw FormatError(blob_path.string() + " has " + std::to_string(blob.size()) +
                        " bytes, manifest expects " +
                        std::to_string(manifest.at("blob_bytes").get<std::size_t>()));

    Container c;
    c.kind = manifest.at("kind").get<std::string>();
    c.meta = manifest.at("meta");
    for (const auto& t : manifest.at("tensors")) {
      ContainerEntry e;
      e.name = t.at("name").get<std::string>();
      e.type = parse_type(t.at("dtype").get<std::string>());
      e.shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto bytes = t.at("bytes").get<std::size_t>();
      if (bytes != shape_numel(e.shape) * element_size(e.type) || offset + bytes > blob.size())
        throw FormatError("tensor '" + e.name + "' does not fit the blob");
      if (c.has(e.name)) throw FormatError("tensor '" + e.name + "' appears twice");
      e.bytes.assign(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                     blob.begin() + static_cast<std::ptrdiff_t>(offset + bytes));
      to_little_endian(e.bytes, element_size(e.type));
      c.entries.push_back(std::move(e));
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
}

}  // namespace simba
