#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace evdet::optim {

enum class Kind : std::uint8_t {
  kGd,
  kMomentum,
  kAdagrad,
  kAdadelta,
  kRmsProp,
  kAdam,
  kFtrl,
  kProximalGd,
  kProximalAdagrad,
};

inline constexpr std::array<Kind, 9> kAllKinds = {
    Kind::kGd,     Kind::kMomentum, Kind::kAdagrad,    Kind::kAdadelta,        Kind::kRmsProp,
    Kind::kAdam,   Kind::kFtrl,     Kind::kProximalGd, Kind::kProximalAdagrad,
};

std::string_view to_string(Kind kind) noexcept;
std::optional<Kind> parse_kind(std::string_view name) noexcept;

struct OptimizerConfig {
  Kind kind = Kind::kAdam;
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double rho = 0.9;  // RMSProp / Adadelta decay
  double l1 = 0.0;
  double l2_shrink = 0.0;
  double ftrl_initial_accumulator = 0.1;
  double rmsprop_initial_accumulator = 1.0;
  double l2_weight_decay = 0.0;  // added as lambda * theta to the gradient

  void validate() const;
};

/// Per-parameter slots; which ones are used depends on the kind:
///   Momentum: first = velocity
///   Adagrad / ProximalAdagrad: first = squared-gradient sum
///   RMSProp: first = squared-gradient average
///   Adadelta: first = squared-gradient average, second = squared-update average
///   Adam: first = m, second = v
///   FTRL: first = z, second = n
struct OptimizerState {
  Kind kind = Kind::kAdam;
  std::uint64_t step = 0;
  std::vector<double> first;
  std::vector<double> second;
  bool operator==(const OptimizerState&) const = default;
};

OptimizerState make_state(const OptimizerConfig& config, std::size_t n_params);

/// Applies one update in place. Throws Error(kKindMismatch) when the state
/// belongs to another kind, Error(kNonFiniteGradient) on NaN/Inf gradients
/// and Error(kShapeMismatch) on size mismatch.
void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                    const OptimizerConfig& config);

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, std::size_t n_params)
      : config_(config), state_(make_state(config, n_params)) {}

  void step(std::span<double> params, std::span<const double> grads) {
    optimizer_step(params, grads, state_, config_);
  }
  const OptimizerConfig& config() const { return config_; }
  const OptimizerState& state() const { return state_; }

 private:
  OptimizerConfig config_;
  OptimizerState state_;
};

struct ProbeResult {
  std::uint64_t iterations = 0;
  bool converged = false;
  double final_distance = 0.0;
};

/// Minimizes 0.5*||theta - target||^2 in `dim` dimensions from theta = 0,
/// with target drawn uniformly from [-1, 1] using `seed`. Counts iterations
/// until ||theta - target|| < tolerance, capped at max_iterations.
ProbeResult quadratic_convergence_probe(const OptimizerConfig& config, std::uint64_t seed = 0, int dim = 10,
                                        double tolerance = 1e-3, std::uint64_t max_iterations = 100000);

}  // namespace evdet::optim
