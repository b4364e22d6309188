#pragma once

// Parameters, layers, optimizer and checkpoint files.

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pft/autodiff.hpp"
#include "pft/taylor.hpp"

namespace pft::nn {

using ad::Shape;
using ad::Taylor2;
using ad::Tensor;
using ad::Value;

struct ParamEntry {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Ordered, uniquely named parameters. Entries with trainable == false are
// buffers or frozen weights; they never receive optimizer updates.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor tensor, bool trainable = true);
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  ParamEntry& entry(std::size_t i) { return entries_.at(i); }
  const ParamEntry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor& at(std::string_view name) { return entries_[index_of(name)].tensor; }
  const Tensor& at(std::string_view name) const { return entries_[index_of(name)].tensor; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  // Marks every entry whose name starts with prefix.
  void set_trainable(std::string_view prefix, bool trainable);

  // FNV-1a 64 over names, shapes and raw bytes of entries under prefix.
  std::uint64_t digest(std::string_view prefix = {}) const;

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Tape view of a ParamStore: trainable entries become variables, the rest
// constants. The store stays writable for buffers updated during forward.
class Binding {
 public:
  Binding(ad::Tape& tape, ParamStore& store, bool update_buffers = true);

  const Value& operator[](std::size_t i) const { return values_.at(i); }
  ad::Tape& tape() const { return *tape_; }
  ParamStore& store() const { return *store_; }
  // False for secondary shards: training-mode layers leave buffers alone.
  bool update_buffers() const { return update_buffers_; }

  // Adjoints of every entry after tape().backward(); empty for frozen ones.
  std::vector<std::vector<double>> gradients() const;

 private:
  ad::Tape* tape_;
  ParamStore* store_;
  bool update_buffers_ = true;
  std::vector<Value> values_;
};

enum class Init { uniform_fan_in, zero };

// y = x W^T + b with W [out, in], b [out].
struct Linear {
  std::size_t w = 0, b = 0;
  std::int64_t in = 0, out = 0;

  static Linear create(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                       std::mt19937_64& rng, Init init = Init::uniform_fan_in);
  Value operator()(const Binding& p, const Value& x) const;
  Taylor2 operator()(const Binding& p, const Taylor2& x) const;
};

// 2-D convolution, square kernel, NCHW.
struct Conv2d {
  std::size_t w = 0, b = 0;
  std::int64_t in = 0, out = 0, kernel = 3;
  ad::ConvGeometry geom;

  static Conv2d create(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                       std::int64_t kernel, ad::ConvGeometry geom, std::mt19937_64& rng);
  Value operator()(const Binding& p, const Value& x) const;
  Taylor2 operator()(const Binding& p, const Taylor2& x) const;
  std::int64_t out_size(std::int64_t size) const { return (size + 2 * geom.pad - kernel) / geom.stride + 1; }
};

// Transposed 2-D convolution (adjoint of Conv2d), weight [in, out, k, k].
struct ConvTranspose2d {
  std::size_t w = 0, b = 0;
  std::int64_t in = 0, out = 0, kernel = 4;
  ad::ConvGeometry geom;

  static ConvTranspose2d create(ParamStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                                std::int64_t kernel, ad::ConvGeometry geom, std::mt19937_64& rng);
  Value operator()(const Binding& p, const Value& x) const;
  Taylor2 operator()(const Binding& p, const Taylor2& x) const;
  std::int64_t out_size(std::int64_t size) const { return (size - 1) * geom.stride - 2 * geom.pad + kernel; }
};

// Per-channel batch normalization over (N, H, W). Running statistics live in
// the store as frozen entries and are refreshed by training-mode calls.
struct BatchNorm2d {
  std::size_t gamma = 0, beta = 0, running_mean = 0, running_var = 0;
  std::int64_t channels = 0;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm2d create(ParamStore& store, const std::string& name, std::int64_t channels);
  Value operator()(const Binding& p, const Value& x, bool training) const;
};

class SinusoidalEmbedding {
 public:
  explicit SinusoidalEmbedding(std::int64_t dim = 16, double base = 10000.0);

  std::int64_t dim() const { return dim_; }
  double base() const { return base_; }

  // Interleaved [sin(t w_0), cos(t w_0), sin(t w_1), ...], w_i = base^(-2i/dim).
  std::vector<double> embed(std::int64_t t) const;
  std::vector<double> embed(double t) const;
  // t [n, 1] -> [n, dim], differentiable in t.
  Value operator()(const Value& t) const;
  Taylor2 operator()(const Taylor2& t) const;

 private:
  std::int64_t dim_;
  double base_;
  std::vector<double> freq_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;  // aligned with store entries
};

AdamState make_adam(const ParamStore& store, AdamConfig config);

// One bias-corrected Adam update of the trainable entries. grads[i] may be
// empty for entries without a gradient. Non-finite gradients raise an error
// naming the parameter before anything is modified.
void adam_step(ParamStore& store, const std::vector<std::vector<double>>& grads, AdamState& state);

// Rescales all gradients so their joint norm is at most max_norm. Returns
// the norm before clipping. max_norm <= 0 disables clipping.
double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm);

// ---- checkpoints ------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Self-describing parameter file: one JSON manifest line, a '\0', then the
// little-endian f64 payloads at the offsets listed in the manifest.
struct Checkpoint {
  std::string kind;
  std::uint64_t config_digest = 0;
  std::string config_text;
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// Reads and validates a checkpoint; with expected_digest set, a different
// stored config digest is an error.
Checkpoint load_checkpoint(const std::string& path, const std::uint64_t* expected_digest = nullptr);

// Store (and optionally Adam moments) into checkpoint tensors under
// "param/", "adam.m/", "adam.v/"; the Adam step goes into meta.
void pack_params(Checkpoint& ckpt, const ParamStore& store, const AdamState* adam = nullptr);
// Restores entries of `store` whose names start with `prefix` from a
// checkpoint. Names and shapes must match exactly; a missing entry is an error.
void unpack_params(const Checkpoint& ckpt, ParamStore& store, AdamState* adam = nullptr,
                   std::string_view prefix = {});

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(std::string_view s);

}  // namespace pft::nn
