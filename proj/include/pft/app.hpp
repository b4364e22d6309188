#pragma once

// Experiment orchestration: run configuration, model assembly and the
// train-vae / train-potentials / traverse / eval / verify commands.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pft/data.hpp"
#include "pft/eval.hpp"
#include "pft/losses.hpp"

namespace pft::app {

using ad::Tensor;
using ad::Value;

// Sectioned key = value configuration. Every key has a declared type and a
// default; unknown sections or keys are rejected. Keys are addressed as
// "section.key".
class Config {
 public:
  Config();  // all defaults

  static Config parse(std::string_view text);
  static Config load(const std::string& path);

  void set(std::string_view key, std::string_view value);
  const std::string& raw(std::string_view key) const;
  std::int64_t integer(std::string_view key) const;
  double real(std::string_view key) const;
  bool flag(std::string_view key) const;
  const std::string& text(std::string_view key) const { return raw(key); }

  // run.seed <- $PFT_SEED when set.
  void apply_environment();
  // Cross-field checks; errors name the offending key.
  void validate() const;

  // Canonical text: fixed section and key order, normalized values.
  std::string dump() const;
  std::uint64_t digest() const;
  // Digest of the sections that determine a trained VAE (models, data, train_vae).
  std::uint64_t generator_digest() const;
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("run.seed")); }

  // Every key in canonical order.
  static std::vector<std::string> keys();

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

// Independent RNG streams from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

loss::Mode run_mode(const Config& c);
pot::PotentialConfig potential_config(const Config& c);
models::VaeConfig vae_config(const Config& c);
models::ClassifierConfig classifier_config(const Config& c);
// Configured weights with disabled terms set to 0.
loss::LossWeights loss_weights(const Config& c);
std::vector<data::Factor> factor_list(const Config& c);

// Parameters and modules of one checkpoint kind: "vae" (encoder/decoder) or
// "potentials" (VAE, bank and, in frozen mode, the pair classifier).
struct Model {
  Config config;
  std::string kind;
  nn::ParamStore store;
  std::unique_ptr<models::Vae> vae;
  std::unique_ptr<pot::PotentialBank> bank;
  std::unique_ptr<models::IndexClassifier> classifier;
  std::map<std::string, std::string> meta;
};

// Fresh initialization from the config's seeds.
std::unique_ptr<Model> build_model(const Config& config, const std::string& kind);
std::unique_ptr<Model> load_model(const std::string& path);
nn::Checkpoint make_checkpoint(const Model& model, const nn::AdamState* adam);

// Row of a training log.
struct LogRow {
  std::int64_t step = 0;  // 1-based count of completed iterations
  loss::LossBreakdown losses;
  std::map<std::string, double> extra;
};

struct CommandResult {
  std::string summary;               // one line for the console
  std::vector<std::string> outputs;  // files written
  std::vector<LogRow> log;           // logged rows of training commands
};

using StepObserver = std::function<void(const LogRow&)>;

// Trains the VAE baseline on the configured dataset; writes vae.pfckpt,
// train_vae.jsonl and config.toml into run.output_dir.
CommandResult train_vae(const Config& config, const StepObserver& observer = {});

// Trains the potential bank. Frozen mode needs a generator checkpoint whose
// generator digest matches the config; supervised mode trains the VAE
// jointly and uses the generator checkpoint, when given, as its start.
// Writes potentials.pfckpt, train_potentials.jsonl and config.toml.
CommandResult train_potentials(const Config& config, const std::string& generator_path,
                               const StepObserver& observer = {});

struct TraverseOptions {
  int k = 0;
  std::uint64_t seed = 0;
  int steps = 10;
  int sign = 1;
  std::string out_dir;  // defaults to the checkpoint's directory
};

// 1 x (steps + 1) PPM grid plus a JSON dump of states, velocities and
// potential values along the path.
CommandResult traverse(Model& model, const std::string& checkpoint_path, const TraverseOptions& options);

struct EvalOptions {
  std::string which;  // vp | equivariance | loglik | residuals | classifier
  std::optional<std::uint64_t> seed;
  std::string out_path;  // defaults to metrics_<which>.json next to the checkpoint
};

CommandResult evaluate(Model& model, const std::string& checkpoint_path, const EvalOptions& options);
eval::MetricsReport compute_metrics(Model& model, const std::string& which, std::uint64_t seed);

// Recomputes the digests embedded in checkpoints, logs, configs, metrics and
// trajectory dumps (directories are scanned); any mismatch is an error.
CommandResult verify(const std::vector<std::string>& paths);

// Render-time datasets shared by training and evaluation.
Tensor vae_training_images(const Config& config);
std::vector<data::TransformSequence> training_sequences(const Config& config);
std::vector<data::TransformSequence> heldout_sequences(const Config& config, std::int64_t n, std::uint64_t seed);

}  // namespace pft::app
