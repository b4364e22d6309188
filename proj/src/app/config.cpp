#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pft/app.hpp"

namespace pft::app {

namespace {

enum class Type { integer, real, boolean, text, choice };

struct KeySpec {
  const char* section;
  const char* key;
  Type type;
  const char* fallback;
  const char* choices = "";     // '|' separated, for Type::choice
  const char* full_scale = "";  // value at full experimental scale, echoed in the dump
};

// Canonical order of the dump.
const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s = {
      {"run", "mode", Type::choice, "frozen", "frozen|supervised"},
      {"run", "seed", Type::integer, "1"},
      {"run", "output_dir", Type::text, "runs/default"},
      {"run", "threads", Type::integer, "1"},
      {"run", "log_interval", Type::integer, "100"},

      {"nn", "lr", Type::real, "0.001"},
      {"nn", "beta1", Type::real, "0.9"},
      {"nn", "beta2", Type::real, "0.999"},
      {"nn", "clip", Type::real, "5"},

      {"potentials", "K", Type::integer, "4"},
      {"potentials", "hidden", Type::integer, "64"},
      {"potentials", "time_dim", Type::integer, "16"},
      {"potentials", "time_base", Type::real, "10000"},
      {"potentials", "kind", Type::choice, "mlp", "mlp|linear|plane_wave"},
      {"potentials", "head_init", Type::choice, "zero", "zero|uniform"},
      {"potentials", "per_potential_c", Type::boolean, "false"},
      {"potentials", "c_init", Type::real, "1"},
      {"potentials", "fd_fallback", Type::boolean, "false"},
      {"potentials", "fd_h", Type::real, "0.001"},

      {"dynamics", "T", Type::integer, "10"},
      {"dynamics", "truncate", Type::boolean, "false"},
      {"dynamics", "divergence_limit", Type::real, "1000"},

      {"losses", "w_f", Type::real, "1"},
      {"losses", "w_u", Type::real, "1"},
      {"losses", "w_jac", Type::real, "1"},
      {"losses", "w_cls", Type::real, "1"},
      {"losses", "w_x", Type::real, "1"},
      {"losses", "w_z", Type::real, "1"},
      {"losses", "disable_f", Type::boolean, "false"},
      {"losses", "disable_u", Type::boolean, "false"},
      {"losses", "disable_jac", Type::boolean, "false"},
      {"losses", "disable_cls", Type::boolean, "false"},
      {"losses", "velocity_penalty", Type::boolean, "false"},
      {"losses", "penalty_lambda", Type::real, "1"},

      {"models", "d", Type::integer, "8"},
      {"models", "size", Type::integer, "32"},
      {"models", "channels", Type::integer, "1"},
      {"models", "vae_width1", Type::integer, "16"},
      {"models", "vae_width2", Type::integer, "32"},
      {"models", "classifier_widths", Type::text, "8,16,16,32"},
      {"models", "reuse_encoder", Type::boolean, "false"},

      {"data", "source", Type::choice, "shapes", "shapes|sequences"},
      {"data", "seed", Type::integer, "1"},
      {"data", "train_images", Type::integer, "4000"},
      {"data", "shape", Type::choice, "square", "square|ellipse|triangle"},
      {"data", "factors", Type::text, "x_pos,y_pos,scale,hue"},
      {"data", "T_seq", Type::integer, "8"},
      {"data", "train_sequences", Type::integer, "256"},

      {"train_vae", "seed", Type::integer, "1"},
      {"train_vae", "iterations", Type::integer, "20000", "", "100000"},
      {"train_vae", "batch", Type::integer, "16"},
      {"train_vae", "lr", Type::real, "0.0005"},

      {"train", "iterations", Type::integer, "20000", "", "100000"},
      {"train", "batch", Type::integer, "16"},

      {"eval", "vp_pairs", Type::integer, "2000", "", "10000"},
      {"eval", "vp_epochs", Type::integer, "60", "", "300"},
      {"eval", "vp_lr", Type::real, "0.005"},
      {"eval", "vp_batch", Type::integer, "32"},
      {"eval", "vp_train_fraction", Type::real, "0.1"},
      {"eval", "iwae_samples", Type::integer, "64"},
      {"eval", "loglik_images", Type::integer, "256"},
      {"eval", "residual_probes", Type::integer, "256"},
      {"eval", "equivariance_sequences", Type::integer, "64"},
      {"eval", "cumulative", Type::boolean, "false"},
      {"eval", "classifier_pairs", Type::integer, "1000"},
  };
  return s;
}

const std::array<const char*, 10> kSections = {"run",    "nn",     "potentials", "dynamics",  "losses",
                                               "models", "data",   "train_vae",  "train",     "eval"};

const KeySpec* find_spec(std::string_view key) {
  for (const auto& s : schema())
    if (key == std::string(s.section) + "." + s.key) return &s;
  return nullptr;
}

std::string full_key(const KeySpec& s) { return std::string(s.section) + "." + s.key; }

std::string trim(std::string_view v) {
  const auto b = v.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = v.find_last_not_of(" \t\r");
  return std::string(v.substr(b, e - b + 1));
}

std::string format_real(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Validates `value` against the key's type and returns its canonical text.
std::string normalize(const KeySpec& s, std::string_view value) {
  const std::string name = full_key(s);
  std::string v = trim(value);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  switch (s.type) {
    case Type::integer: {
      std::int64_t x = 0;
      auto r = std::from_chars(v.data(), v.data() + v.size(), x);
      if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
        fail(ErrorKind::usage, "config: " + name + " expects an integer, got '" + v + "'");
      return std::to_string(x);
    }
    case Type::real: {
      double x = 0;
      auto r = std::from_chars(v.data(), v.data() + v.size(), x);
      if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(x))
        fail(ErrorKind::usage, "config: " + name + " expects a finite number, got '" + v + "'");
      return format_real(x);
    }
    case Type::boolean:
      if (v == "true" || v == "1") return "true";
      if (v == "false" || v == "0") return "false";
      fail(ErrorKind::usage, "config: " + name + " expects true or false, got '" + v + "'");
    case Type::choice: {
      std::string_view all = s.choices;
      while (!all.empty()) {
        const auto bar = all.find('|');
        if (all.substr(0, bar) == v) return v;
        if (bar == std::string_view::npos) break;
        all.remove_prefix(bar + 1);
      }
      fail(ErrorKind::usage, "config: " + name + " must be one of " + s.choices + ", got '" + v + "'");
    }
    case Type::text:
      if (v.find_first_of("\n\"#") != std::string::npos)
        fail(ErrorKind::usage, "config: " + name + " may not contain newlines, quotes or '#'");
      return v;
  }
  return v;
}

}  // namespace

Config::Config() {
  for (const auto& s : schema()) values_[full_key(s)] = normalize(s, s.fallback);
}

Config Config::parse(std::string_view text) {
  Config c;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (body.front() == '[') {
      if (body.back() != ']') fail(ErrorKind::usage, where + "malformed section header '" + body + "'");
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      bool known = false;
      for (const char* s : kSections) known = known || section == s;
      if (!known) fail(ErrorKind::usage, where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) fail(ErrorKind::usage, where + "expected key = value, got '" + body + "'");
    if (section.empty()) fail(ErrorKind::usage, where + "key outside of any section");
    const std::string key = section + "." + trim(std::string_view(body).substr(0, eq));
    if (!find_spec(key)) fail(ErrorKind::usage, where + "unknown key " + key);
    c.set(key, std::string_view(body).substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot read config '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void Config::set(std::string_view key, std::string_view value) {
  const KeySpec* s = find_spec(key);
  if (!s) fail(ErrorKind::usage, "config: unknown key " + std::string(key));
  values_[std::string(key)] = normalize(*s, value);
}

const std::string& Config::raw(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorKind::usage, "config: unknown key " + std::string(key));
  return it->second;
}

std::int64_t Config::integer(std::string_view key) const {
  const KeySpec* s = find_spec(key);
  if (!s || s->type != Type::integer) fail(ErrorKind::usage, "config: " + std::string(key) + " is not an integer key");
  return std::stoll(raw(key));
}

double Config::real(std::string_view key) const {
  const KeySpec* s = find_spec(key);
  if (!s || s->type != Type::real) fail(ErrorKind::usage, "config: " + std::string(key) + " is not a real key");
  return std::strtod(raw(key).c_str(), nullptr);
}

bool Config::flag(std::string_view key) const {
  const KeySpec* s = find_spec(key);
  if (!s || s->type != Type::boolean) fail(ErrorKind::usage, "config: " + std::string(key) + " is not a boolean key");
  return raw(key) == "true";
}

void Config::apply_environment() {
  if (const char* env = std::getenv("PFT_SEED"); env && *env) {
    try {
      set("run.seed", env);
    } catch (const Error& e) {
      fail(ErrorKind::usage, std::string("PFT_SEED: ") + e.what());
    }
  }
}

void Config::validate() const {
  auto at_least = [&](std::string_view key, std::int64_t lo) {
    if (integer(key) < lo)
      fail(ErrorKind::usage, "config: " + std::string(key) + " must be at least " + std::to_string(lo));
  };
  auto positive = [&](std::string_view key) {
    if (!(real(key) > 0)) fail(ErrorKind::usage, "config: " + std::string(key) + " must be positive");
  };
  auto non_negative = [&](std::string_view key) {
    if (real(key) < 0) fail(ErrorKind::usage, "config: " + std::string(key) + " must be non-negative");
  };
  at_least("run.seed", 0);
  at_least("run.threads", 1);
  at_least("run.log_interval", 1);
  positive("nn.lr");
  non_negative("nn.clip");
  for (const char* b : {"nn.beta1", "nn.beta2"})
    if (real(b) < 0 || real(b) >= 1) fail(ErrorKind::usage, std::string("config: ") + b + " must lie in [0, 1)");
  at_least("potentials.K", 1);
  at_least("potentials.hidden", 1);
  at_least("potentials.time_dim", 2);
  if (integer("potentials.time_dim") % 2 != 0) fail(ErrorKind::usage, "config: potentials.time_dim must be even");
  positive("potentials.time_base");
  positive("potentials.fd_h");
  at_least("dynamics.T", 2);
  positive("dynamics.divergence_limit");
  for (const char* w : {"losses.w_f", "losses.w_u", "losses.w_jac", "losses.w_cls", "losses.w_x", "losses.w_z",
                        "losses.penalty_lambda"})
    non_negative(w);
  at_least("models.d", 1);
  at_least("models.size", 16);
  if (integer("models.size") % 16 != 0) fail(ErrorKind::usage, "config: models.size must be a multiple of 16");
  if (integer("models.channels") != 1 && integer("models.channels") != 3)
    fail(ErrorKind::usage, "config: models.channels must be 1 or 3");
  at_least("models.vae_width1", 1);
  at_least("models.vae_width2", 1);
  (void)classifier_config(*this);
  at_least("data.seed", 0);
  at_least("data.train_images", 1);
  at_least("data.T_seq", 2);
  at_least("data.train_sequences", 1);
  const auto factors = factor_list(*this);
  if (factors.empty()) fail(ErrorKind::usage, "config: data.factors is empty");
  at_least("train_vae.seed", 0);
  at_least("train_vae.iterations", 0);
  at_least("train_vae.batch", 1);
  positive("train_vae.lr");
  at_least("train.iterations", 0);
  at_least("train.batch", 1);
  at_least("eval.vp_pairs", 1);
  at_least("eval.vp_epochs", 1);
  positive("eval.vp_lr");
  at_least("eval.vp_batch", 1);
  if (!(real("eval.vp_train_fraction") > 0 && real("eval.vp_train_fraction") < 1))
    fail(ErrorKind::usage, "config: eval.vp_train_fraction must lie in (0, 1)");
  at_least("eval.iwae_samples", 1);
  at_least("eval.loglik_images", 1);
  at_least("eval.residual_probes", 1);
  at_least("eval.equivariance_sequences", 1);
  at_least("eval.classifier_pairs", 1);
  if (run_mode(*this) == loss::Mode::supervised) {
    if (integer("potentials.K") != static_cast<std::int64_t>(factors.size()))
      fail(ErrorKind::usage, "config: potentials.K must equal the number of data.factors in supervised mode");
    if (text("data.source") != "sequences")
      fail(ErrorKind::usage, "config: data.source must be sequences in supervised mode");
  }
  if (flag("losses.velocity_penalty") && flag("losses.disable_f"))
    fail(ErrorKind::usage, "config: losses.velocity_penalty replaces L_f and conflicts with losses.disable_f");
}

std::string Config::dump() const {
  std::string out;
  std::string section;
  for (const auto& s : schema()) {
    if (section != s.section) {
      if (!section.empty()) out += "\n";
      section = s.section;
      out += "[" + section + "]\n";
    }
    out += std::string(s.key) + " = " + raw(full_key(s));
    if (*s.full_scale) out += "  # full-scale value: " + std::string(s.full_scale);
    out += "\n";
  }
  return out;
}

std::uint64_t Config::digest() const { return nn::fnv1a(dump()); }

std::uint64_t Config::generator_digest() const {
  std::string text;
  for (const auto& s : schema()) {
    const std::string_view sec = s.section;
    if (sec == "models" || sec == "data" || sec == "train_vae") text += full_key(s) + "=" + raw(full_key(s)) + "\n";
  }
  return nn::fnv1a(text);
}

std::vector<std::string> Config::keys() {
  std::vector<std::string> out;
  for (const auto& s : schema()) out.push_back(full_key(s));
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return nn::fnv1a(stream, z);
}

loss::Mode run_mode(const Config& c) {
  return c.text("run.mode") == "supervised" ? loss::Mode::supervised : loss::Mode::frozen;
}

pot::PotentialConfig potential_config(const Config& c) {
  pot::PotentialConfig p;
  p.K = static_cast<int>(c.integer("potentials.K"));
  p.d = static_cast<int>(c.integer("models.d"));
  p.hidden = static_cast<int>(c.integer("potentials.hidden"));
  p.time_dim = static_cast<int>(c.integer("potentials.time_dim"));
  p.time_base = c.real("potentials.time_base");
  const auto& kind = c.text("potentials.kind");
  p.kind = kind == "linear" ? pot::PotentialKind::linear
           : kind == "plane_wave" ? pot::PotentialKind::plane_wave
                                  : pot::PotentialKind::mlp;
  p.head_init = c.text("potentials.head_init") == "uniform" ? pot::HeadInit::uniform : pot::HeadInit::zero;
  p.per_potential_c = c.flag("potentials.per_potential_c");
  p.c_init = c.real("potentials.c_init");
  p.fd_fallback = c.flag("potentials.fd_fallback");
  p.fd_h = c.real("potentials.fd_h");
  return p;
}

models::VaeConfig vae_config(const Config& c) {
  models::VaeConfig v;
  v.d = static_cast<int>(c.integer("models.d"));
  v.size = static_cast<int>(c.integer("models.size"));
  v.channels = static_cast<int>(c.integer("models.channels"));
  v.width1 = static_cast<int>(c.integer("models.vae_width1"));
  v.width2 = static_cast<int>(c.integer("models.vae_width2"));
  return v;
}

models::ClassifierConfig classifier_config(const Config& c) {
  models::ClassifierConfig m;
  m.K = static_cast<int>(c.integer("potentials.K"));
  m.channels = static_cast<int>(c.integer("models.channels"));
  m.size = static_cast<int>(c.integer("models.size"));
  m.reuse_encoder = c.flag("models.reuse_encoder");
  m.widths.clear();
  std::stringstream ss(c.text("models.classifier_widths"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    int w = 0;
    auto r = std::from_chars(t.data(), t.data() + t.size(), w);
    if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size() || w < 1)
      fail(ErrorKind::usage, "config: models.classifier_widths must list positive integers, got '" +
                                 c.text("models.classifier_widths") + "'");
    m.widths.push_back(w);
  }
  if (m.widths.size() != 4) fail(ErrorKind::usage, "config: models.classifier_widths must list four widths");
  return m;
}

loss::LossWeights loss_weights(const Config& c) {
  loss::LossWeights w;
  w.w_f = c.flag("losses.disable_f") ? 0.0 : c.real("losses.w_f");
  w.w_u = c.flag("losses.disable_u") ? 0.0 : c.real("losses.w_u");
  w.w_jac = c.flag("losses.disable_jac") ? 0.0 : c.real("losses.w_jac");
  w.w_cls = c.flag("losses.disable_cls") ? 0.0 : c.real("losses.w_cls");
  w.w_x = c.real("losses.w_x");
  w.w_z = c.real("losses.w_z");
  return w;
}

std::vector<data::Factor> factor_list(const Config& c) {
  std::vector<data::Factor> out;
  std::stringstream ss(c.text("data.factors"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (t.empty()) continue;
    data::Factor f;
    try {
      f = data::parse_factor(t);
    } catch (const Error&) {
      fail(ErrorKind::usage, "config: data.factors has unknown factor '" + t + "'");
    }
    if (f == data::Factor::shape) fail(ErrorKind::usage, "config: data.factors cannot vary the shape");
    for (auto g : out)
      if (g == f) fail(ErrorKind::usage, "config: data.factors lists '" + t + "' twice");
    out.push_back(f);
  }
  return out;
}

}  // namespace pft::app
