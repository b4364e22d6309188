#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "pft/nn.hpp"

namespace pft::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host byte order");

using json = nlohmann::json;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::uint64_t parse_hex64(std::string_view s) {
  if (s.size() != 16) fail(ErrorKind::format, "expected 16 hex digits, got '" + std::string(s) + "'");
  std::uint64_t v = 0;
  for (char c : s) {
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else fail(ErrorKind::format, "bad hex digit in '" + std::string(s) + "'");
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string payload;
  json entries = json::array();
  for (const auto& t : ckpt.tensors) {
    if (static_cast<std::int64_t>(t.tensor.data.size()) != ad::numel(t.tensor.shape))
      fail(ErrorKind::shape, "checkpoint: tensor '" + t.name + "' data does not match its shape");
    entries.push_back(json{{"name", t.name}, {"shape", t.tensor.shape}, {"offset", payload.size()},
                           {"trainable", t.trainable}});
    payload.append(reinterpret_cast<const char*>(t.tensor.data.data()), t.tensor.data.size() * sizeof(double));
  }
  json manifest{{"format", "pfckpt"},
                {"version", 1},
                {"kind", ckpt.kind},
                {"config_digest", hex64(ckpt.config_digest)},
                {"config_text", ckpt.config_text},
                {"meta", ckpt.meta},
                {"payload_bytes", payload.size()},
                {"payload_digest", hex64(fnv1a(payload))},
                {"tensors", entries}};
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write checkpoint '" + path + "'");
    const std::string head = manifest.dump();
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.put('\n');
    out.put('\0');
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) fail(ErrorKind::io, "short write to '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path, const std::uint64_t* expected_digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open checkpoint '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  const auto sep = bytes.find('\0');
  if (sep == std::string::npos) fail(ErrorKind::format, path + ": missing manifest separator");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(0, sep));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path + ": malformed manifest: " + e.what());
  }
  Checkpoint ckpt;
  std::size_t payload_bytes = 0;
  std::string payload_digest;
  json entries;
  try {
    if (manifest.at("format") != "pfckpt" || manifest.at("version") != 1)
      fail(ErrorKind::format, path + ": not a version 1 checkpoint");
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.config_digest = parse_hex64(manifest.at("config_digest").get<std::string>());
    ckpt.config_text = manifest.at("config_text").get<std::string>();
    ckpt.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
    payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    payload_digest = manifest.at("payload_digest").get<std::string>();
    entries = manifest.at("tensors");
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path + ": manifest field error: " + e.what());
  }
  const std::size_t have = bytes.size() - sep - 1;
  if (have != payload_bytes)
    fail(ErrorKind::format, path + ": truncated payload, expected " + std::to_string(payload_bytes) + " bytes, found " +
                                std::to_string(have));
  const std::string_view payload(bytes.data() + sep + 1, have);
  std::size_t expect_offset = 0;
  for (const auto& e : entries) {
    NamedTensor t;
    std::size_t offset = 0;
    try {
      t.name = e.at("name").get<std::string>();
      t.tensor.shape = e.at("shape").get<ad::Shape>();
      offset = e.at("offset").get<std::size_t>();
      t.trainable = e.at("trainable").get<bool>();
    } catch (const json::exception& ex) {
      fail(ErrorKind::format, path + ": tensor entry error: " + ex.what());
    }
    for (auto d : t.tensor.shape)
      if (d < 0) fail(ErrorKind::shape, path + ": tensor '" + t.name + "' has negative dimension");
    const auto count = static_cast<std::size_t>(ad::numel(t.tensor.shape));
    if (offset != expect_offset || offset + count * sizeof(double) > payload.size())
      fail(ErrorKind::shape, path + ": tensor '" + t.name + "' with shape " + ad::to_string(t.tensor.shape) +
                                 " does not fit the payload layout at offset " + std::to_string(offset));
    t.tensor.data.resize(count);
    std::memcpy(t.tensor.data.data(), payload.data() + offset, count * sizeof(double));
    expect_offset = offset + count * sizeof(double);
    ckpt.tensors.push_back(std::move(t));
  }
  if (expect_offset != payload.size())
    fail(ErrorKind::shape, path + ": manifest shapes cover " + std::to_string(expect_offset) + " of " +
                               std::to_string(payload.size()) + " payload bytes");
  if (hex64(fnv1a(payload)) != payload_digest) fail(ErrorKind::digest, path + ": payload digest mismatch");
  if (fnv1a(ckpt.config_text) != ckpt.config_digest)
    fail(ErrorKind::digest, path + ": embedded configuration does not match its digest");
  if (expected_digest && *expected_digest != ckpt.config_digest)
    fail(ErrorKind::digest, path + ": configuration digest " + hex64(ckpt.config_digest) + " differs from expected " +
                                hex64(*expected_digest));
  return ckpt;
}

void pack_params(Checkpoint& ckpt, const ParamStore& store, const AdamState* adam) {
  for (const auto& e : store.entries()) ckpt.tensors.push_back({"param/" + e.name, e.tensor, e.trainable});
  if (!adam) return;
  ckpt.meta["adam.step"] = std::to_string(adam->step);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    if (i >= adam->m.size() || adam->m[i].empty()) continue;
    ckpt.tensors.push_back({"adam.m/" + e.name, Tensor(e.tensor.shape, adam->m[i]), false});
    ckpt.tensors.push_back({"adam.v/" + e.name, Tensor(e.tensor.shape, adam->v[i]), false});
  }
}

void unpack_params(const Checkpoint& ckpt, ParamStore& store, AdamState* adam, std::string_view prefix) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    if (!e.name.starts_with(prefix)) continue;
    const NamedTensor* t = ckpt.find("param/" + e.name);
    if (!t) fail(ErrorKind::format, "checkpoint lacks parameter '" + e.name + "'");
    if (t->tensor.shape != e.tensor.shape)
      fail(ErrorKind::shape, "checkpoint parameter '" + e.name + "' has shape " + ad::to_string(t->tensor.shape) +
                                 ", model expects " + ad::to_string(e.tensor.shape));
    e.tensor.data = t->tensor.data;
  }
  if (!adam) return;
  auto it = ckpt.meta.find("adam.step");
  if (it == ckpt.meta.end()) fail(ErrorKind::format, "checkpoint carries no optimizer state");
  adam->step = std::stoll(it->second);
  adam->m.assign(store.size(), {});
  adam->v.assign(store.size(), {});
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    if (!e.name.starts_with(prefix)) continue;
    const NamedTensor* m = ckpt.find("adam.m/" + e.name);
    const NamedTensor* v = ckpt.find("adam.v/" + e.name);
    if (!m || !v) continue;
    if (m->tensor.shape != e.tensor.shape || v->tensor.shape != e.tensor.shape)
      fail(ErrorKind::shape, "checkpoint optimizer moments for '" + e.name + "' have the wrong shape");
    adam->m[i] = m->tensor.data;
    adam->v[i] = v->tensor.data;
  }
}

}  // namespace pft::nn
