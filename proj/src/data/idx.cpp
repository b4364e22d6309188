#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "pft/data.hpp"

namespace pft::data {

namespace {

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

[[noreturn]] void truncated(const std::string& path, std::size_t expected, std::size_t actual) {
  fail(ErrorKind::format, "IDX file '" + path + "' truncated: expected " + std::to_string(expected) +
                              " bytes, got " + std::to_string(actual));
}

}  // namespace

IdxData load_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open IDX file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4) truncated(path, 4, bytes.size());
  IdxData out;
  out.magic = be32(p);
  if (out.magic != kIdxImages && out.magic != kIdxLabels)
    fail(ErrorKind::format, "IDX file '" + path + "': unexpected magic " + hex(out.magic) + " (want " +
                                hex(kIdxImages) + " or " + hex(kIdxLabels) + ")");
  const std::size_t ndims = out.magic & 0xff;
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) truncated(path, header, bytes.size());
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    out.dims.push_back(be32(p + 4 + 4 * i));
    count *= static_cast<std::size_t>(out.dims.back());
  }
  if (bytes.size() < header + count) truncated(path, header + count, bytes.size());
  if (bytes.size() > header + count)
    fail(ErrorKind::format, "IDX file '" + path + "' has " + std::to_string(bytes.size() - header - count) +
                                " trailing bytes");
  out.values = Tensor::zeros(out.dims);
  const double s = out.magic == kIdxImages ? 255.0 : 1.0;
  for (std::size_t i = 0; i < count; ++i) out.values.data[i] = p[header + i] / s;
  return out;
}

void write_idx(const std::string& path, std::uint32_t magic, const std::vector<std::int64_t>& dims,
               const std::vector<std::uint8_t>& bytes) {
  if ((magic & 0xff) != dims.size()) fail(ErrorKind::usage, "write_idx: magic dimension count disagrees with dims");
  std::size_t count = 1;
  for (auto d : dims) {
    if (d < 0) fail(ErrorKind::usage, "write_idx: negative dimension");
    count *= static_cast<std::size_t>(d);
  }
  if (count != bytes.size()) fail(ErrorKind::usage, "write_idx: payload size disagrees with dims");
  std::string out;
  put_be32(out, magic);
  for (auto d : dims) put_be32(out, static_cast<std::uint32_t>(d));
  out.append(bytes.begin(), bytes.end());
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f.write(out.data(), static_cast<std::streamsize>(out.size())))
    fail(ErrorKind::io, "cannot write IDX file '" + path + "'");
}

}  // namespace pft::data
