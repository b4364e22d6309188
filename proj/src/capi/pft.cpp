#include "pft/pft.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "pft/app.hpp"

struct pft_config {
  pft::app::Config config;
  std::string scratch;  // backing store for returned strings
};

struct pft_model {
  std::unique_ptr<pft::app::Model> model;
  std::string path;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_output;

pft_status to_status(pft::ErrorKind kind) {
  switch (kind) {
    case pft::ErrorKind::usage: return PFT_ERR_USAGE;
    case pft::ErrorKind::shape: return PFT_ERR_SHAPE;
    case pft::ErrorKind::range: return PFT_ERR_RANGE;
    case pft::ErrorKind::numeric: return PFT_ERR_NUMERIC;
    case pft::ErrorKind::io: return PFT_ERR_IO;
    case pft::ErrorKind::format: return PFT_ERR_FORMAT;
    case pft::ErrorKind::digest: return PFT_ERR_DIGEST;
  }
  return PFT_ERR_INTERNAL;
}

template <class F>
pft_status guarded(F&& f) {
  g_error.clear();
  try {
    f();
    return PFT_OK;
  } catch (const pft::Error& e) {
    g_error = e.what();
    return to_status(e.kind());
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
  } catch (const std::exception& e) {
    g_error = std::string("internal error: ") + e.what();
  } catch (...) {
    g_error = "internal error";
  }
  return PFT_ERR_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p) pft::fail(pft::ErrorKind::usage, std::string(what) + " must not be NULL");
}

void emit(pft_log_fn log, void* user, const pft::app::LogRow& row) {
  if (!log) return;
  const auto& b = row.losses;
  pft_loss_row r{row.step, b.l_f, b.l_u, b.l_jac, b.l_cls, b.l_x, b.l_z, b.total};
  log(user, &r);
}

pft::app::Model& potentials_model(pft_model* m) {
  need(m, "model");
  if (!m->model->bank) pft::fail(pft::ErrorKind::usage, "field queries need a potentials checkpoint");
  return *m->model;
}

std::span<const double> latent(const pft::app::Model& m, const double* z, size_t d) {
  need(z, "z");
  if (d != static_cast<size_t>(m.bank->d()))
    pft::fail(pft::ErrorKind::shape,
              "z has " + std::to_string(d) + " entries, model latent dimension is " + std::to_string(m.bank->d()));
  return {z, d};
}

}  // namespace

extern "C" {

const char* pft_version(void) { return "1.0.0"; }

const char* pft_status_name(pft_status s) {
  switch (s) {
    case PFT_OK: return "ok";
    case PFT_ERR_USAGE: return "usage";
    case PFT_ERR_SHAPE: return "shape";
    case PFT_ERR_RANGE: return "range";
    case PFT_ERR_NUMERIC: return "numeric";
    case PFT_ERR_IO: return "io";
    case PFT_ERR_FORMAT: return "format";
    case PFT_ERR_DIGEST: return "digest";
    case PFT_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* pft_last_error(void) { return g_error.c_str(); }
const char* pft_last_output(void) { return g_output.c_str(); }

pft_status pft_config_new(pft_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new pft_config{};
  });
}

pft_status pft_config_parse(const char* text, pft_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new pft_config{pft::app::Config::parse(text), {}};
  });
}

pft_status pft_config_load(const char* path, pft_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new pft_config{pft::app::Config::load(path), {}};
  });
}

void pft_config_free(pft_config* config) { delete config; }

pft_status pft_config_set(pft_config* config, const char* key, const char* value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    config->config.set(key, value);
  });
}

pft_status pft_config_get(const pft_config* config, const char* key, const char** value) {
  return guarded([&] {
    need(config, "config");
    need(key, "key");
    need(value, "value");
    *value = config->config.raw(key).c_str();
  });
}

pft_status pft_config_apply_env(pft_config* config) {
  return guarded([&] {
    need(config, "config");
    config->config.apply_environment();
  });
}

pft_status pft_config_set_threads(pft_config* config, int threads) {
  return guarded([&] {
    need(config, "config");
    if (threads < 1) pft::fail(pft::ErrorKind::usage, "threads must be at least 1");
    config->config.set("run.threads", std::to_string(threads));
  });
}

pft_status pft_config_validate(const pft_config* config) {
  return guarded([&] {
    need(config, "config");
    config->config.validate();
  });
}

pft_status pft_config_digest(const pft_config* config, uint64_t* digest) {
  return guarded([&] {
    need(config, "config");
    need(digest, "digest");
    *digest = config->config.digest();
  });
}

pft_status pft_config_dump(const pft_config* config, const char** text) {
  return guarded([&] {
    need(config, "config");
    need(text, "text");
    auto* c = const_cast<pft_config*>(config);
    c->scratch = c->config.dump();
    *text = c->scratch.c_str();
  });
}

pft_status pft_train_vae(const pft_config* config, pft_log_fn log, void* user) {
  return guarded([&] {
    need(config, "config");
    auto r = pft::app::train_vae(config->config, [&](const pft::app::LogRow& row) { emit(log, user, row); });
    g_output = r.summary;
  });
}

pft_status pft_train_potentials(const pft_config* config, const char* generator_path, pft_log_fn log, void* user) {
  return guarded([&] {
    need(config, "config");
    auto r = pft::app::train_potentials(config->config, generator_path ? generator_path : "",
                                        [&](const pft::app::LogRow& row) { emit(log, user, row); });
    g_output = r.summary;
  });
}

pft_status pft_model_load(const char* path, pft_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto m = std::make_unique<pft_model>();
    m->model = pft::app::load_model(path);
    m->path = path;
    *out = m.release();
  });
}

void pft_model_free(pft_model* model) { delete model; }

pft_status pft_model_info_get(const pft_model* model, pft_model_info* info) {
  return guarded([&] {
    need(model, "model");
    need(info, "info");
    const auto& m = *model->model;
    *info = pft_model_info{};
    std::strncpy(info->kind, m.kind.c_str(), sizeof info->kind - 1);
    info->supervised = pft::app::run_mode(m.config) == pft::loss::Mode::supervised;
    info->has_classifier = m.classifier != nullptr;
    info->K = m.bank ? m.bank->K() : 0;
    info->d = m.vae->d();
    info->image_size = m.vae->config().size;
    info->channels = m.vae->config().channels;
    info->T = static_cast<int>(m.config.integer("dynamics.T"));
    info->config_digest = m.config.digest();
    info->seed = m.config.seed();
  });
}

pft_status pft_traverse(pft_model* model, int k, uint64_t seed, int steps, int sign, const char* out_dir) {
  return guarded([&] {
    need(model, "model");
    pft::app::TraverseOptions o;
    o.k = k;
    o.seed = seed;
    o.steps = steps;
    o.sign = sign;
    if (out_dir) o.out_dir = out_dir;
    g_output = pft::app::traverse(*model->model, model->path, o).summary;
  });
}

pft_status pft_eval(pft_model* model, const char* which, const uint64_t* seed, const char* out_path) {
  return guarded([&] {
    need(model, "model");
    need(which, "which");
    pft::app::EvalOptions o;
    o.which = which;
    if (seed) o.seed = *seed;
    if (out_path) o.out_path = out_path;
    g_output = pft::app::evaluate(*model->model, model->path, o).summary;
  });
}

pft_status pft_verify(const char* const* paths, size_t count) {
  return guarded([&] {
    if (count > 0) need(paths, "paths");
    std::vector<std::string> list;
    for (size_t i = 0; i < count; ++i) {
      need(paths[i], "path");
      list.emplace_back(paths[i]);
    }
    auto r = pft::app::verify(list);
    g_output.clear();
    for (const auto& line : r.outputs) g_output += line + "\n";
    g_output += r.summary;
  });
}

pft_status pft_potential(pft_model* model, int k, const double* z, size_t d, double t, double* u) {
  return guarded([&] {
    auto& m = potentials_model(model);
    need(u, "u");
    *u = pft::pot::evaluate(*m.bank, m.store, k, latent(m, z, d), t);
  });
}

pft_status pft_velocity(pft_model* model, int k, const double* z, size_t d, double t, double* v) {
  return guarded([&] {
    auto& m = potentials_model(model);
    need(v, "v");
    const auto g = pft::pot::velocity(*m.bank, m.store, k, latent(m, z, d), t);
    std::copy(g.begin(), g.end(), v);
  });
}

pft_status pft_wave_residual(pft_model* model, int k, const double* z, size_t d, double t, double* f) {
  return guarded([&] {
    auto& m = potentials_model(model);
    need(f, "f");
    *f = pft::pot::wave_residual(*m.bank, m.store, k, latent(m, z, d), t);
  });
}

}  // extern "C"
