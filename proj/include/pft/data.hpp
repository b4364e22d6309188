#pragma once

// Procedural shape images with known factors, transformation sequences,
// IDX file I/O and the image-pair dataset behind the VP score.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pft/dynamics.hpp"
#include "pft/models.hpp"

namespace pft::data {

using ad::Tensor;
using ad::Value;

enum class ShapeKind { square, ellipse, triangle };
enum class Factor { x_pos, y_pos, scale, rotation, shape, hue };

const char* to_string(Factor f);
Factor parse_factor(const std::string& name);

struct FactorSpec {
  double x_pos = 0.5;     // [0, 1]
  double y_pos = 0.5;     // [0, 1]
  double scale = 0.6;     // [0.3, 1]
  double rotation = 0.0;  // [0, 2 pi)
  ShapeKind shape = ShapeKind::square;
  double hue = 0.0;  // [0, 1], used by 3-channel renders
};

void validate(const FactorSpec& spec);
double get(const FactorSpec& spec, Factor f);
void set(FactorSpec& spec, Factor f, double v);
// Rotation advanced by `angle`, wrapped into [0, 2 pi).
FactorSpec rotated(FactorSpec spec, double angle);

// [channels, size, size] in [0, 1]. The shape centre sits at
// size/4 + pos * size/2 pixels, its half-extent is scale * size / 4, and each
// pixel is the mean of a 2x2 grid of point samples. Three channels colour
// the shape with the fully saturated hue.
Tensor render(const FactorSpec& spec, int size, int channels = 1);

struct TransformSequence {
  Factor factor = Factor::x_pos;
  std::vector<FactorSpec> specs;
  Tensor images;  // [T_seq, C, size, size]
};

// T_seq states with the factor moving linearly from base to end_value
// (rotation steps by end_value - base around the circle).
TransformSequence make_sequence(const FactorSpec& base, Factor factor, double end_value, int T_seq, int size,
                                int channels = 1);

// Distance each factor moves over a sampled sequence.
double factor_delta(Factor f);
// Random base with the other factors drawn uniformly and the varying one
// placed so the whole sequence stays in range.
TransformSequence random_sequence(std::mt19937_64& rng, Factor factor, int T_seq, int size, int channels,
                                  ShapeKind shape = ShapeKind::square);
FactorSpec random_spec(std::mt19937_64& rng, int channels);

// Rows `rows` of a [N, ...] tensor, in order.
Tensor take_rows(const Tensor& t, const std::vector<std::int64_t>& rows);

// Stack of random renders [n, C, size, size].
Tensor random_images(std::mt19937_64& rng, std::int64_t n, int size, int channels);

// ---- IDX -----------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImages = 0x00000803;
inline constexpr std::uint32_t kIdxLabels = 0x00000801;

struct IdxData {
  std::uint32_t magic = 0;
  std::vector<std::int64_t> dims;
  Tensor values;  // images scaled to [0, 1]; labels as raw integers
};

IdxData load_idx(const std::string& path);
void write_idx(const std::string& path, std::uint32_t magic, const std::vector<std::int64_t>& dims,
               const std::vector<std::uint8_t>& bytes);

// ---- VP pair dataset ---------------------------------------------------------------

struct VpPairDataset {
  Tensor x0;  // [n, C, H, W]
  Tensor xT;  // [n, C, H, W]
  std::vector<int> labels;
  std::vector<int> signs;
  std::vector<std::int64_t> train, test;  // disjoint, covering 0..n-1
  std::int64_t skipped = 0;               // divergent rollouts replaced
  int K = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
};

struct VpBuildOptions {
  std::int64_t n_pairs = 2000;
  int steps = 10;
  double train_fraction = 0.1;
  std::int64_t chunk = 64;  // rollouts batched per (k, sign)
};

// Labels are balanced (pair i gets i mod K before shuffling); each pair draws
// z0 from the prior and a random sign, rolls out `steps` steps and decodes
// both endpoints. Divergent rollouts are redrawn; more than 1% is an error.
VpPairDataset build_vp_dataset(const pot::PotentialBank& bank, nn::ParamStore& store,
                               const models::GeneratorHandle& generator, const VpBuildOptions& options,
                               std::mt19937_64& rng);

// Splits `n` indices into a shuffled train part of ceil(fraction * n) and the rest.
void split_indices(std::int64_t n, double train_fraction, std::mt19937_64& rng, std::vector<std::int64_t>& train,
                   std::vector<std::int64_t>& test);

}  // namespace pft::data
