#pragma once

// Bank of K scalar potentials u^k(z, t) with a learnable wave coefficient c,
// and the differential quantities the training losses need.

#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pft/nn.hpp"

namespace pft::pot {

using ad::Taylor2;
using ad::Value;

enum class PotentialKind {
  mlp,         // learned network
  linear,      // u = a_k . z with per-potential slope a_k
  plane_wave,  // u = sin(z_1 - c t), an exact wave solution
};

enum class HeadInit { zero, uniform };

struct PotentialConfig {
  int K = 4;
  int d = 8;
  int hidden = 64;
  int time_dim = 16;
  double time_base = 10000.0;
  PotentialKind kind = PotentialKind::mlp;
  HeadInit head_init = HeadInit::zero;
  bool per_potential_c = false;
  double c_init = 1.0;
  bool fd_fallback = false;  // central differences instead of Taylor mode
  double fd_h = 1e-3;
};

// Derivatives of one potential at rows (z, t); all [n, 1] except grad [n, d].
struct FieldDerivatives {
  Value u;
  Value u_t;
  Value u_tt;
  Value grad;
  Value laplacian;
};

// The PDE whose residual is penalized. The wave operator is the only one
// shipped; others plug in here.
class ResidualOperator {
 public:
  virtual ~ResidualOperator() = default;
  virtual const char* name() const = 0;
  virtual Value apply(const FieldDerivatives& d, const Value& c) const = 0;
};

// f = u_tt - c^2 lap_z u
class WaveOperator final : public ResidualOperator {
 public:
  const char* name() const override { return "wave"; }
  Value apply(const FieldDerivatives& d, const Value& c) const override;
};

class PotentialBank {
 public:
  PotentialBank(const PotentialConfig& config, nn::ParamStore& store, std::mt19937_64& rng,
                const std::string& prefix = "potentials/");

  const PotentialConfig& config() const { return config_; }
  int K() const { return config_.K; }
  int d() const { return config_.d; }
  const std::string& prefix() const { return prefix_; }

  void set_operator(std::shared_ptr<const ResidualOperator> op);
  const ResidualOperator& residual_operator() const { return *op_; }

  // z [n, d], t [n, 1].
  Taylor2 field(const nn::Binding& p, int k, const Taylor2& z, const Taylor2& t) const;
  Value value(const nn::Binding& p, int k, const Value& z, const Value& t) const;
  // velocity only (cheaper first-order pass)
  Value velocity(const nn::Binding& p, int k, const Value& z, const Value& t) const;
  // All derivatives in one pass over d + 1 stacked directions.
  FieldDerivatives derivatives(const nn::Binding& p, int k, const Value& z, const Value& t) const;
  Value residual(const nn::Binding& p, int k, const FieldDerivatives& d) const;
  Value wave_coefficient(const nn::Binding& p, int k) const;  // shape [1]

 private:
  void check(int k, const Value& z, const Value& t) const;
  FieldDerivatives fd_derivatives(const nn::Binding& p, int k, const Value& z, const Value& t) const;

  struct Net {
    nn::Linear z1, z2, fusion, head;
  };

  PotentialConfig config_;
  std::string prefix_;
  nn::SinusoidalEmbedding embedding_;
  std::vector<Net> nets_;
  std::vector<std::size_t> slopes_;
  std::size_t c_ = 0;
  std::shared_ptr<const ResidualOperator> op_;
};

// Single-point helpers on a scratch tape.
double evaluate(const PotentialBank& bank, nn::ParamStore& store, int k, std::span<const double> z, double t);
std::vector<double> velocity(const PotentialBank& bank, nn::ParamStore& store, int k, std::span<const double> z,
                             double t);
double wave_residual(const PotentialBank& bank, nn::ParamStore& store, int k, std::span<const double> z, double t);

}  // namespace pft::pot
