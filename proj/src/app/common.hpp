#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "pft/app.hpp"

namespace pft::app::detail {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kConfigEcho = "config.toml";

// "# config_digest = <hex>" and "# seed = <n>" header lines, then the canonical dump.
void write_config_echo(const Config& config, const fs::path& dir);

// Streams one JSON object per line; every line carries the config digest and seed.
class LogWriter {
 public:
  LogWriter(const Config& config, const fs::path& path);
  void write(const LogRow& row);

 private:
  std::string digest_;
  std::uint64_t seed_;
  fs::path path_;
  std::ofstream out_;
};

json breakdown_json(const loss::LossBreakdown& b);

}  // namespace pft::app::detail
