#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "pft/eval.hpp"

namespace pft::eval {

void write_file(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory '" + parent.string() + "': " + ec.message());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
      fail(ErrorKind::io, "cannot write '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

void emit_grid(const Tensor& images, int rows, int cols, const std::string& path) {
  if (images.shape.size() != 4) fail(ErrorKind::shape, "emit_grid: images must be [n, C, H, W]");
  if (rows < 1 || cols < 1 || static_cast<std::int64_t>(rows) * cols != images.shape[0])
    fail(ErrorKind::usage, "emit_grid: " + std::to_string(rows) + " x " + std::to_string(cols) + " grid for " +
                               std::to_string(images.shape[0]) + " images");
  const std::int64_t C = images.shape[1], H = images.shape[2], W = images.shape[3];
  if (C != 1 && C != 3) fail(ErrorKind::shape, "emit_grid: images must have 1 or 3 channels");
  const std::int64_t GW = W * cols, GH = H * rows;
  std::string out = "P6\n" + std::to_string(GW) + " " + std::to_string(GH) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + static_cast<std::size_t>(3 * GW * GH));
  for (std::int64_t n = 0; n < images.shape[0]; ++n) {
    const std::int64_t gr = n / cols, gc = n % cols;
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x)
        for (std::int64_t ch = 0; ch < 3; ++ch) {
          const std::int64_t src = ((n * C + (C == 3 ? ch : 0)) * H + y) * W + x;
          const double v = std::clamp(images.data[static_cast<std::size_t>(src)], 0.0, 1.0);
          const std::int64_t dst = ((gr * H + y) * GW + gc * W + x) * 3 + ch;
          out[header + static_cast<std::size_t>(dst)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
        }
  }
  write_file(path, out);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") fail(ErrorKind::format, "'" + path + "' is not a binary PPM");
  std::int64_t W = 0, H = 0, maxval = 0;
  try {
    W = std::stoll(token());
    H = std::stoll(token());
    maxval = std::stoll(token());
  } catch (const std::exception&) {
    fail(ErrorKind::format, "'" + path + "': malformed PPM header");
  }
  if (W < 1 || H < 1 || maxval != 255) fail(ErrorKind::format, "'" + path + "': unsupported PPM header");
  ++pos;  // single whitespace after maxval
  const auto need = static_cast<std::size_t>(3 * W * H);
  if (bytes.size() - pos != need)
    fail(ErrorKind::format, "'" + path + "': expected " + std::to_string(need) + " payload bytes, got " +
                                std::to_string(bytes.size() - pos));
  Tensor out = Tensor::zeros({3, H, W});
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      for (std::int64_t ch = 0; ch < 3; ++ch)
        out.data[static_cast<std::size_t>((ch * H + y) * W + x)] =
            static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>((y * W + x) * 3 + ch)]) / 255.0;
  return out;
}

namespace {

std::string number(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_json(const MetricsReport& report) {
  std::map<std::string, std::string> fields;
  for (const auto& [k, v] : report.scalars) fields[k] = number(v);
  for (const auto& [k, v] : report.strings) fields[k] = nlohmann::json(v).dump();
  fields["config_digest"] = nlohmann::json(nn::hex64(report.config_digest)).dump();
  fields["seed"] = std::to_string(report.seed);
  std::string out = "{";
  bool first = true;
  for (const auto& [k, v] : fields) {
    if (!first) out += ",";
    first = false;
    out += nlohmann::json(k).dump() + ":" + v;
  }
  return out + "}\n";
}

void write_metrics(const MetricsReport& report, const std::string& path) { write_file(path, metrics_json(report)); }

}  // namespace pft::eval
