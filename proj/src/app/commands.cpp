#include <algorithm>
#include <cmath>
#include <sstream>

#include "common.hpp"

namespace pft::app {

namespace fs = std::filesystem;
using detail::json;

namespace {

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path sibling_dir(const std::string& path) {
  fs::path dir = fs::path(path).parent_path();
  return dir.empty() ? fs::path(".") : dir;
}

void need_potentials(const Model& m, const std::string& what) {
  if (m.kind != "potentials" || !m.bank)
    fail(ErrorKind::usage, what + " needs a potentials checkpoint, got a '" + m.kind + "' checkpoint");
}

// Held-out images of the configured dataset kind.
Tensor heldout_images(const Config& c, std::int64_t n, std::uint64_t seed) {
  const int size = static_cast<int>(c.integer("models.size"));
  const int channels = static_cast<int>(c.integer("models.channels"));
  if (c.text("data.source") == "shapes") {
    std::mt19937_64 rng(derive_seed(seed, "loglik-images"));
    return data::random_images(rng, n, size, channels);
  }
  const std::int64_t T = c.integer("data.T_seq");
  const auto seqs = heldout_sequences(c, (n + T - 1) / T, derive_seed(seed, "loglik-sequences"));
  const std::int64_t per = static_cast<std::int64_t>(channels) * size * size;
  Tensor out = Tensor::zeros({n, channels, size, size});
  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor& img = seqs[static_cast<std::size_t>(i / T)].images;
    std::copy_n(img.data.begin() + (i % T) * per, per, out.data.begin() + i * per);
  }
  return out;
}

}  // namespace

CommandResult traverse(Model& model, const std::string& checkpoint_path, const TraverseOptions& o) {
  need_potentials(model, "traverse");
  const auto& bank = *model.bank;
  if (o.k < 0 || o.k >= bank.K())
    fail(ErrorKind::range, "traverse: k = " + std::to_string(o.k) + " outside 0.." + std::to_string(bank.K() - 1));
  if (o.sign != 1 && o.sign != -1) fail(ErrorKind::usage, "traverse: sign must be +1 or -1");
  if (o.steps < 0) fail(ErrorKind::usage, "traverse: steps must be non-negative");

  std::mt19937_64 rng(derive_seed(o.seed, "traverse-z0"));
  const Tensor z0 = dyn::sample_prior(rng, 1, bank.d());
  ad::Tape tape;
  nn::Binding p(tape, model.store);
  dyn::RolloutOptions ro;
  ro.steps = o.steps;
  ro.sign = o.sign;
  ro.track_gradients = false;
  ro.divergence_limit = model.config.real("dynamics.divergence_limit");
  const auto traj = dyn::rollout(bank, p, o.k, tape.constant(z0), ro, o.seed);

  Value images = model.vae->decode(p, concat(traj.states, 0));
  json states = json::array(), velocities = json::array(), u = json::array();
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    states.push_back(traj.states[i].tensor().data);
    Value t = tape.constant(Tensor::filled({1, 1}, static_cast<double>(i)));
    u.push_back(bank.value(p, o.k, traj.states[i], t).item());
  }
  for (const auto& v : traj.velocities) velocities.push_back(v.tensor().data);

  const fs::path dir = o.out_dir.empty() ? sibling_dir(checkpoint_path) : fs::path(o.out_dir);
  const std::string stem = "traverse_k" + std::to_string(o.k) + "_seed" + std::to_string(o.seed) +
                           (o.sign > 0 ? "_pos" : "_neg");
  const fs::path grid = dir / (stem + ".ppm"), dump = dir / (stem + ".json");
  eval::emit_grid(images.tensor(), 1, o.steps + 1, grid.string());
  json j{{"checkpoint", fs::path(checkpoint_path).filename().string()},
         {"config_digest", nn::hex64(model.config.digest())},
         {"config_seed", model.config.seed()},
         {"seed", o.seed},
         {"k", o.k},
         {"sign", o.sign},
         {"steps", o.steps},
         {"states", states},
         {"velocities", velocities},
         {"u", u},
         {"grid", grid.filename().string()},
         {"grid_digest", nn::hex64(nn::fnv1a(read_bytes(grid)))}};
  eval::write_file(dump.string(), j.dump(1) + "\n");

  CommandResult r;
  r.outputs = {grid.string(), dump.string()};
  std::ostringstream s;
  s << "traverse: k=" << o.k << " sign=" << o.sign << " steps=" << o.steps << " seed=" << o.seed << " -> "
    << grid.string();
  r.summary = s.str();
  return r;
}

eval::MetricsReport compute_metrics(Model& model, const std::string& which, std::uint64_t seed) {
  const Config& c = model.config;
  eval::MetricsReport rep;
  rep.config_digest = c.digest();
  rep.seed = seed;
  rep.strings["metric"] = which;
  rep.strings["mode"] = c.text("run.mode");
  const int T = static_cast<int>(c.integer("dynamics.T"));
  if (which == "vp") {
    need_potentials(model, "eval vp");
    const auto gen = models::GeneratorHandle::vae_decoder(*model.vae);
    data::VpBuildOptions bo;
    bo.n_pairs = c.integer("eval.vp_pairs");
    bo.steps = T;
    bo.train_fraction = c.real("eval.vp_train_fraction");
    std::mt19937_64 rng(derive_seed(seed, "vp-dataset"));
    const auto ds = data::build_vp_dataset(*model.bank, model.store, gen, bo, rng);
    eval::VpProtocol proto;
    proto.epochs = static_cast<int>(c.integer("eval.vp_epochs"));
    proto.lr = c.real("eval.vp_lr");
    proto.batch = c.integer("eval.vp_batch");
    proto.seed = derive_seed(seed, "vp-probe");
    proto.widths = classifier_config(c).widths;
    rep.scalars["vp_score_pct"] = eval::vp_score(ds, proto);
    rep.scalars["vp_pairs"] = static_cast<double>(ds.size());
    rep.scalars["vp_train_pairs"] = static_cast<double>(ds.train.size());
    rep.scalars["vp_skipped"] = static_cast<double>(ds.skipped);
    rep.scalars["vp_epochs"] = proto.epochs;
    rep.scalars["chance_pct"] = 100.0 / ds.K;
    rep.strings["scale_note"] = "probe epochs " + std::to_string(proto.epochs) + " (full-scale 300), pairs " +
                                std::to_string(bo.n_pairs) + " (full-scale 10000)";
  } else if (which == "equivariance") {
    need_potentials(model, "eval equivariance");
    if (run_mode(c) != loss::Mode::supervised)
      fail(ErrorKind::usage, "eval equivariance needs a supervised checkpoint (run.mode = supervised)");
    const auto factors = factor_list(c);
    std::map<data::Factor, int> to_k;
    for (std::size_t i = 0; i < factors.size(); ++i) to_k[factors[i]] = static_cast<int>(i);
    const auto seqs = heldout_sequences(c, c.integer("eval.equivariance_sequences"), derive_seed(seed, "equivariance"));
    eval::EquivarianceOptions learned, vanilla;
    learned.cumulative = c.flag("eval.cumulative");
    vanilla.mode = eval::EquivarianceMode::vanilla;
    const auto a = eval::equivariance_error(*model.vae, *model.bank, model.store, seqs, to_k, learned);
    const auto b = eval::equivariance_error(*model.vae, *model.bank, model.store, seqs, to_k, vanilla);
    rep.scalars["equivariance_err"] = a.mean;
    rep.scalars["equivariance_vanilla"] = b.mean;
    rep.scalars["equivariance_ratio"] = b.mean > 0 ? a.mean / b.mean : 0.0;
    rep.scalars["sequences"] = static_cast<double>(seqs.size());
    for (const auto& [f, v] : a.per_factor) rep.scalars["equivariance_err/" + f] = v;
    for (const auto& [f, v] : b.per_factor) rep.scalars["equivariance_vanilla/" + f] = v;
    rep.strings["rollout"] = learned.cumulative ? "cumulative" : "state-dependent";
  } else if (which == "loglik") {
    const std::int64_t n = c.integer("eval.loglik_images");
    const int samples = static_cast<int>(c.integer("eval.iwae_samples"));
    const Tensor images = heldout_images(c, n, seed);
    rep.scalars["loglik_estimate"] =
        eval::estimate_loglik(*model.vae, model.store, images, samples, derive_seed(seed, "iwae"));
    rep.scalars["iwae_samples"] = samples;
    rep.scalars["loglik_images"] = static_cast<double>(n);
  } else if (which == "residuals") {
    need_potentials(model, "eval residuals");
    std::mt19937_64 rng(derive_seed(seed, "residuals"));
    const auto s = eval::residual_diagnostics(*model.bank, model.store, c.integer("eval.residual_probes"), T, rng);
    rep.scalars["mean_residual"] = s.mean_abs_residual;
    rep.scalars["mean_velocity0"] = s.mean_velocity0;
    rep.scalars["median_velocity0"] = s.median_velocity0;
    rep.scalars["probes"] = static_cast<double>(s.probes);
    rep.scalars["divergent"] = static_cast<double>(s.divergent);
    for (std::size_t i = 0; i < s.norm_profile.size(); ++i) {
      char key[32];
      std::snprintf(key, sizeof key, "norm_profile/%02zu", i);
      rep.scalars[key] = s.norm_profile[i];
    }
  } else if (which == "classifier") {
    need_potentials(model, "eval classifier");
    if (!model.classifier) fail(ErrorKind::usage, "eval classifier needs a frozen-mode checkpoint");
    const auto gen = models::GeneratorHandle::vae_decoder(*model.vae);
    std::mt19937_64 rng(derive_seed(seed, "classifier-pairs"));
    rep.scalars["classifier_accuracy_pct"] = eval::classifier_accuracy(
        *model.bank, *model.classifier, gen, model.store, c.integer("eval.classifier_pairs"), T, rng);
    rep.scalars["classifier_pairs"] = static_cast<double>(c.integer("eval.classifier_pairs"));
  } else {
    fail(ErrorKind::usage, "eval: unknown metric '" + which + "' (vp, equivariance, loglik, residuals, classifier)");
  }
  return rep;
}

CommandResult evaluate(Model& model, const std::string& checkpoint_path, const EvalOptions& o) {
  const std::uint64_t seed = o.seed ? *o.seed : model.config.seed();
  eval::MetricsReport rep = compute_metrics(model, o.which, seed);
  rep.strings["checkpoint"] = fs::path(checkpoint_path).filename().string();
  const std::string out =
      o.out_path.empty() ? (sibling_dir(checkpoint_path) / ("metrics_" + o.which + ".json")).string() : o.out_path;
  eval::write_metrics(rep, out);
  CommandResult r;
  r.outputs = {out};
  std::ostringstream s;
  s.precision(6);
  s << "eval " << o.which << ":";
  for (const auto& [k, v] : rep.scalars)
    if (k.find('/') == std::string::npos) s << " " << k << "=" << v;
  s << "; config " << nn::hex64(rep.config_digest) << " seed " << seed;
  r.summary = s.str();
  return r;
}

namespace {

// Digest stated by a config echo's header; 0 when absent.
std::uint64_t echo_header_digest(const std::string& text) {
  const std::string tag = "# config_digest = ";
  const auto pos = text.find(tag);
  if (pos == std::string::npos) return 0;
  return nn::parse_hex64(std::string_view(text).substr(pos + tag.size(), 16));
}

// Digest of the run whose outputs live in `dir`, from its config echo.
std::optional<std::uint64_t> echo_digest(const fs::path& dir) {
  const fs::path p = dir / detail::kConfigEcho;
  if (!fs::exists(p)) return std::nullopt;
  return Config::parse(read_bytes(p)).digest();
}

void check_digest(const std::string& file, const std::string& what, std::uint64_t stated, std::uint64_t actual) {
  if (stated != actual)
    fail(ErrorKind::digest, file + ": " + what + " digest " + nn::hex64(stated) + " != recomputed " + nn::hex64(actual));
}

std::uint64_t json_digest(const std::string& file, const json& j) {
  if (!j.is_object() || !j.contains("config_digest") || !j.contains("seed"))
    fail(ErrorKind::format, file + ": missing config_digest or seed");
  return nn::parse_hex64(j.at("config_digest").get<std::string>());
}

std::string verify_file(const fs::path& path) {
  const std::string file = path.string();
  const std::string ext = path.extension().string();
  const auto echo = echo_digest(sibling_dir(file));
  if (ext == ".pfckpt") {
    nn::Checkpoint ck = nn::load_checkpoint(file);
    check_digest(file, "config", ck.config_digest, Config::parse(ck.config_text).digest());
    if (echo) check_digest(file, "config echo", ck.config_digest, *echo);
    return "checkpoint " + nn::hex64(ck.config_digest);
  }
  if (ext == ".toml") {
    const std::string text = read_bytes(path);
    const std::uint64_t stated = echo_header_digest(text);
    if (stated == 0) fail(ErrorKind::format, file + ": no config_digest header");
    check_digest(file, "config", stated, Config::parse(text).digest());
    return "config " + nn::hex64(stated);
  }
  if (ext == ".jsonl") {
    std::istringstream in(read_bytes(path));
    std::string line;
    std::optional<std::uint64_t> first;
    std::int64_t lines = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        fail(ErrorKind::format, file + ": line " + std::to_string(lines + 1) + " is not JSON");
      }
      const std::uint64_t d = json_digest(file, j);
      if (first) check_digest(file, "line " + std::to_string(lines + 1), d, *first);
      first = d;
      ++lines;
    }
    if (first && echo) check_digest(file, "log", *first, *echo);
    return "log " + std::to_string(lines) + " lines";
  }
  if (ext == ".json") {
    json j;
    try {
      j = json::parse(read_bytes(path));
    } catch (const json::exception& e) {
      fail(ErrorKind::format, file + ": not JSON");
    }
    const std::uint64_t d = json_digest(file, j);
    if (echo) check_digest(file, "config echo", d, *echo);
    if (j.contains("checkpoint")) {
      const fs::path ck = sibling_dir(file) / j.at("checkpoint").get<std::string>();
      if (fs::exists(ck)) check_digest(file, "checkpoint", d, nn::load_checkpoint(ck.string()).config_digest);
    }
    if (j.contains("grid")) {
      const fs::path grid = sibling_dir(file) / j.at("grid").get<std::string>();
      check_digest(file, "grid", nn::parse_hex64(j.at("grid_digest").get<std::string>()),
                   nn::fnv1a(read_bytes(grid)));
    }
    return "output " + nn::hex64(d);
  }
  fail(ErrorKind::usage, file + ": no embedded digest to verify (trajectory JSON files cover their grids)");
}

}  // namespace

CommandResult verify(const std::vector<std::string>& paths) {
  if (paths.empty()) fail(ErrorKind::usage, "verify: no paths given");
  CommandResult r;
  std::int64_t checked = 0;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(p)) {
        const std::string ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".pfckpt" || ext == ".toml" || ext == ".jsonl" || ext == ".json"))
          files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        r.outputs.push_back(f.string() + ": " + verify_file(f));
        ++checked;
      }
    } else {
      if (!fs::exists(p)) fail(ErrorKind::io, "verify: '" + p + "' does not exist");
      r.outputs.push_back(p + ": " + verify_file(p));
      ++checked;
    }
  }
  r.summary = "verify: " + std::to_string(checked) + " file(s) ok";
  return r;
}

}  // namespace pft::app
