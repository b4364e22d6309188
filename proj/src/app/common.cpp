#include "common.hpp"

namespace pft::app::detail {

void write_config_echo(const Config& config, const fs::path& dir) {
  std::string text = "# config_digest = " + nn::hex64(config.digest()) + "\n# seed = " +
                     std::to_string(config.seed()) + "\n" + config.dump();
  eval::write_file((dir / kConfigEcho).string(), text);
}

LogWriter::LogWriter(const Config& config, const fs::path& path)
    : digest_(nn::hex64(config.digest())), seed_(config.seed()), path_(path) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) fail(ErrorKind::io, "cannot write log '" + path_.string() + "'");
}

json breakdown_json(const loss::LossBreakdown& b) {
  return json{{"l_f", b.l_f}, {"l_u", b.l_u}, {"l_jac", b.l_jac}, {"l_cls", b.l_cls},
              {"l_x", b.l_x}, {"l_z", b.l_z}, {"total", b.total}};
}

void LogWriter::write(const LogRow& row) {
  json j = breakdown_json(row.losses);
  j["step"] = row.step;
  j["config_digest"] = digest_;
  j["seed"] = seed_;
  for (const auto& [k, v] : row.extra) j[k] = v;
  out_ << j.dump() << '\n';
  out_.flush();
  if (!out_) fail(ErrorKind::io, "write failed for log '" + path_.string() + "'");
}

}  // namespace pft::app::detail
