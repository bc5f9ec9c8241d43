#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "simba/data.hpp"

namespace simba {

struct GenDataSpec {
  bool images = false;
  std::uint64_t seed = 0;
  SyntheticSeriesSpec series;
  SyntheticImageSpec image;
};

// {"kind": "series" | "images", "seed": u64, "series" | "images": {...}}
GenDataSpec parse_gen_data_spec(std::string_view text);

// ConfigError when the file cannot be read.
std::string read_text_file(const std::filesystem::path& path);

// Prints one line per checked tensor; 0 iff every check passes.
int cmd_gradcheck(const std::string& scope, std::uint64_t seed, std::ostream& out);
std::vector<std::string> gradcheck_scopes();

// Timing table as CSV (to csv_path, or to out when empty).
int cmd_bench(const std::string& suite, const std::vector<std::size_t>& sizes,
              const std::filesystem::path& csv_path, std::ostream& out);

}  // namespace simba
