// Command-line front end over the C interface.
//
//   pft train-vae        --config FILE [--set section.key=value]... [--threads N] [--output-dir DIR]
//   pft train-potentials --config FILE [--generator CKPT] [--set ...] [--threads N] [--output-dir DIR]
//   pft traverse         --checkpoint CKPT --k K [--seed S] [--steps N] [--sign +1|-1] [--out-dir DIR]
//   pft eval             --checkpoint CKPT --metric vp|equivariance|loglik|residuals|classifier [--seed S] [--out FILE]
//   pft verify           PATH...
//   pft config           [--config FILE] [--set ...]   (prints the canonical dump and digest)
//
// Exit status: 0 success, 1 usage or data error, 2 numerical failure.

#include <CLI11.hpp>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "pft/pft.h"

namespace {

int exit_code(pft_status s) {
  if (s == PFT_OK) return 0;
  return s == PFT_ERR_NUMERIC ? 2 : 1;
}

int report(pft_status s) {
  if (s != PFT_OK) {
    std::fprintf(stderr, "pft: %s error: %s\n", pft_status_name(s), pft_last_error());
  } else if (*pft_last_output()) {
    std::printf("%s\n", pft_last_output());
  }
  return exit_code(s);
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
  int threads = 0;
  std::string output_dir;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.path, "Configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.sets, "Override, section.key=value (repeatable)");
  cmd->add_option("--threads", a.threads, "Worker shards (1 = bitwise deterministic path)")->check(CLI::PositiveNumber);
  cmd->add_option("--output-dir", a.output_dir, "Overrides run.output_dir");
}

// Builds the run configuration; PFT_SEED overrides the file, --set overrides both.
pft_status make_config(const ConfigArgs& a, pft_config** out) {
  pft_status s = a.path.empty() ? pft_config_new(out) : pft_config_load(a.path.c_str(), out);
  if (s != PFT_OK) return s;
  if ((s = pft_config_apply_env(*out)) != PFT_OK) return s;
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "pft: --set expects section.key=value, got '%s'\n", kv.c_str());
      return PFT_ERR_USAGE;
    }
    if ((s = pft_config_set(*out, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str())) != PFT_OK) return s;
  }
  if (a.threads > 0 && (s = pft_config_set_threads(*out, a.threads)) != PFT_OK) return s;
  if (!a.output_dir.empty() && (s = pft_config_set(*out, "run.output_dir", a.output_dir.c_str())) != PFT_OK) return s;
  return pft_config_validate(*out);
}

void print_row(void*, const pft_loss_row* r) {
  std::fprintf(stderr, "step %" PRId64 " total=%.6g l_f=%.4g l_u=%.4g l_jac=%.4g l_cls=%.4g l_x=%.4g l_z=%.4g\n",
               r->step, r->total, r->l_f, r->l_u, r->l_jac, r->l_cls, r->l_x, r->l_z);
}

std::optional<std::uint64_t> env_seed() {
  const char* e = std::getenv("PFT_SEED");
  if (!e || !*e) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(e, &end, 10);
  if (*end) return std::nullopt;
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Potential-flow latent traversals: training, traversal and evaluation"};
  app.require_subcommand(1);

  ConfigArgs vae_args, pot_args, show_args;
  auto* train_vae = app.add_subcommand("train-vae", "Train the VAE baseline / generator");
  add_config_options(train_vae, vae_args);

  auto* train_pot = app.add_subcommand("train-potentials", "Train the potential bank");
  add_config_options(train_pot, pot_args);
  std::string generator;
  train_pot->add_option("--generator", generator, "Generator (VAE) checkpoint")->check(CLI::ExistingFile);

  auto* trav = app.add_subcommand("traverse", "Roll out one potential and render the path");
  std::string trav_ckpt, trav_out;
  int trav_k = 0, trav_steps = 10, trav_sign = 1;
  std::optional<std::uint64_t> trav_seed;
  trav->add_option("--checkpoint", trav_ckpt, "Potentials checkpoint")->required()->check(CLI::ExistingFile);
  trav->add_option("--k", trav_k, "Potential index")->required();
  trav->add_option("--seed", trav_seed, "Seed of z0 (default: PFT_SEED or the config seed)");
  trav->add_option("--steps", trav_steps, "Number of steps")->check(CLI::NonNegativeNumber);
  trav->add_option("--sign", trav_sign, "+1 or -1")->check(CLI::IsMember({1, -1}));
  trav->add_option("--out-dir", trav_out, "Output directory (default: beside the checkpoint)");

  auto* ev = app.add_subcommand("eval", "Compute a metric and write its JSON report");
  std::string ev_ckpt, ev_metric, ev_out;
  std::optional<std::uint64_t> ev_seed;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--metric", ev_metric, "Metric")
      ->required()
      ->check(CLI::IsMember({"vp", "equivariance", "loglik", "residuals", "classifier"}));
  ev->add_option("--seed", ev_seed, "Evaluation seed (default: PFT_SEED or the config seed)");
  ev->add_option("--out", ev_out, "Metrics file (default: metrics_<metric>.json beside the checkpoint)");

  auto* ver = app.add_subcommand("verify", "Recompute embedded digests; fails on mismatch");
  std::vector<std::string> ver_paths;
  ver->add_option("paths", ver_paths, "Files or run directories")->required();

  auto* show = app.add_subcommand("config", "Print the canonical configuration and its digest");
  add_config_options(show, show_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*train_vae || *train_pot || *show) {
    const ConfigArgs& a = *train_vae ? vae_args : *train_pot ? pot_args : show_args;
    pft_config* cfg = nullptr;
    pft_status s = make_config(a, &cfg);
    if (s == PFT_OK) {
      if (*train_vae) {
        s = pft_train_vae(cfg, print_row, nullptr);
      } else if (*train_pot) {
        s = pft_train_potentials(cfg, generator.empty() ? nullptr : generator.c_str(), print_row, nullptr);
      } else {
        const char* text = nullptr;
        std::uint64_t digest = 0;
        if ((s = pft_config_dump(cfg, &text)) == PFT_OK && (s = pft_config_digest(cfg, &digest)) == PFT_OK)
          std::printf("# config_digest = %016" PRIx64 "\n%s", digest, text);
      }
    }
    pft_config_free(cfg);
    return report(s);
  }

  if (*ver) {
    std::vector<const char*> ptrs;
    for (const auto& p : ver_paths) ptrs.push_back(p.c_str());
    return report(pft_verify(ptrs.data(), ptrs.size()));
  }

  const std::string& ckpt = *trav ? trav_ckpt : ev_ckpt;
  pft_model* model = nullptr;
  pft_status s = pft_model_load(ckpt.c_str(), &model);
  if (s == PFT_OK) {
    pft_model_info info{};
    s = pft_model_info_get(model, &info);
    if (s == PFT_OK && *trav) {
      const std::uint64_t seed = trav_seed ? *trav_seed : env_seed().value_or(info.seed);
      s = pft_traverse(model, trav_k, seed, trav_steps, trav_sign, trav_out.empty() ? nullptr : trav_out.c_str());
    } else if (s == PFT_OK) {
      const std::optional<std::uint64_t> seed = ev_seed ? ev_seed : env_seed();
      s = pft_eval(model, ev_metric.c_str(), seed ? &*seed : nullptr, ev_out.empty() ? nullptr : ev_out.c_str());
    }
  }
  pft_model_free(model);
  return report(s);
}
