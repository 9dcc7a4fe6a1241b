#include "evdet/optimizers.hpp"

#include <cctype>
#include <cmath>
#include <string>

#include "evdet/error.hpp"
#include "evdet/random.hpp"

namespace evdet::optim {
namespace {

constexpr std::array<std::string_view, 9> kNames = {
    "gd", "momentum", "adagrad", "adadelta", "rmsprop", "adam", "ftrl", "proximal_gd", "proximal_adagrad",
};

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Soft-threshold then shrink, shared by both proximal rules.
double proximal(double prox, double lr, double l1, double l2) {
  return sign(prox) * std::max(std::abs(prox) - lr * l1, 0.0) / (1.0 + lr * l2);
}

double ftrl_weight(double z, double n, const OptimizerConfig& c) {
  if (std::abs(z) <= c.l1) return 0.0;
  return -(z - sign(z) * c.l1) / (std::sqrt(n) / c.lr + 2.0 * c.l2_shrink);
}

// z that reproduces theta under ftrl_weight with accumulator n.
double ftrl_z_for(double theta, double n, const OptimizerConfig& c) {
  if (theta == 0.0) return 0.0;
  return -theta * (std::sqrt(n) / c.lr + 2.0 * c.l2_shrink) - sign(theta) * c.l1;
}

}  // namespace

std::string_view to_string(Kind kind) noexcept { return kNames[static_cast<std::size_t>(kind)]; }

std::optional<Kind> parse_kind(std::string_view name) noexcept {
  std::string lowered;
  for (char ch : name) lowered.push_back(ch == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (lowered == "rms") lowered = "rmsprop";
  if (lowered == "gradientdescent" || lowered == "sgd") lowered = "gd";
  for (Kind k : kAllKinds)
    if (kNames[static_cast<std::size_t>(k)] == lowered) return k;
  return std::nullopt;
}

void OptimizerConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(epsilon >= 0.0)) fail("epsilon must be >= 0");
  if (!(rho > 0.0 && rho < 1.0)) fail("rho must be in (0, 1)");
  if (!(l1 >= 0.0) || !(l2_shrink >= 0.0)) fail("l1 and l2_shrink must be >= 0");
  if (!(ftrl_initial_accumulator > 0.0)) fail("ftrl_initial_accumulator must be > 0");
  if (!(rmsprop_initial_accumulator >= 0.0)) fail("rmsprop_initial_accumulator must be >= 0");
  if (!(l2_weight_decay >= 0.0)) fail("l2_weight_decay must be >= 0");
}

OptimizerState make_state(const OptimizerConfig& config, std::size_t n) {
  OptimizerState s;
  s.kind = config.kind;
  switch (config.kind) {
    case Kind::kGd:
    case Kind::kProximalGd:
      break;
    case Kind::kMomentum:
      s.first.assign(n, 0.0);
      break;
    case Kind::kRmsProp:
      s.first.assign(n, config.rmsprop_initial_accumulator);
      break;
    case Kind::kAdagrad:
    case Kind::kProximalAdagrad:
      s.first.assign(n, 0.0);
      break;
    case Kind::kAdadelta:
    case Kind::kAdam:
      s.first.assign(n, 0.0);
      s.second.assign(n, 0.0);
      break;
    case Kind::kFtrl:
      // z is seeded from the parameters on the first step.
      s.first.assign(n, 0.0);
      s.second.assign(n, config.ftrl_initial_accumulator);
      break;
  }
  return s;
}

void optimizer_step(std::span<double> params, std::span<const double> grads, OptimizerState& state,
                    const OptimizerConfig& c) {
  if (state.kind != c.kind) {
    throw Error(ErrorCode::kKindMismatch, std::string("state is for ") + std::string(to_string(state.kind)) +
                                              ", config is " + std::string(to_string(c.kind)));
  }
  if (params.size() != grads.size()) throw Error(ErrorCode::kShapeMismatch, "params and grads differ in size");
  const std::size_t n = params.size();
  const bool needs_first = c.kind != Kind::kGd && c.kind != Kind::kProximalGd;
  const bool needs_second = c.kind == Kind::kAdadelta || c.kind == Kind::kAdam || c.kind == Kind::kFtrl;
  if ((needs_first && state.first.size() != n) || (needs_second && state.second.size() != n)) {
    throw Error(ErrorCode::kShapeMismatch, "optimizer state does not match parameter count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grads[i])) {
      throw Error(ErrorCode::kNonFiniteGradient, "gradient entry " + std::to_string(i) + " is not finite");
    }
  }

  const bool first_step = state.step == 0;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i] + c.l2_weight_decay * params[i];
    double& theta = params[i];
    switch (c.kind) {
      case Kind::kGd:
        theta -= c.lr * g;
        break;
      case Kind::kMomentum: {
        double& v = state.first[i];
        v = c.momentum * v + g;
        theta -= c.lr * v;
        break;
      }
      case Kind::kAdagrad: {
        double& a = state.first[i];
        a += g * g;
        if (g != 0.0) theta -= c.lr * g / std::sqrt(a + c.epsilon);
        break;
      }
      case Kind::kAdadelta: {
        double& eg = state.first[i];
        double& edx = state.second[i];
        eg = c.rho * eg + (1.0 - c.rho) * g * g;
        const double dx = g == 0.0 ? 0.0 : -(std::sqrt(edx + c.epsilon) / std::sqrt(eg + c.epsilon)) * g;
        edx = c.rho * edx + (1.0 - c.rho) * dx * dx;
        theta += dx;
        break;
      }
      case Kind::kRmsProp: {
        double& eg = state.first[i];
        eg = c.rho * eg + (1.0 - c.rho) * g * g;
        if (g != 0.0) theta -= c.lr * g / std::sqrt(eg + c.epsilon);
        break;
      }
      case Kind::kAdam: {
        double& m = state.first[i];
        double& v = state.second[i];
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g * g;
        const double m_hat = m / bias1;
        const double v_hat = v / bias2;
        theta -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
        break;
      }
      case Kind::kFtrl: {
        double& z = state.first[i];
        double& acc = state.second[i];
        if (first_step) z = ftrl_z_for(theta, acc, c);
        if (g == 0.0) break;
        const double acc_new = acc + g * g;
        const double sigma = (std::sqrt(acc_new) - std::sqrt(acc)) / c.lr;
        z += g - sigma * theta;
        acc = acc_new;
        theta = ftrl_weight(z, acc, c);
        break;
      }
      case Kind::kProximalGd:
        theta = proximal(theta - c.lr * g, c.lr, c.l1, c.l2_shrink);
        break;
      case Kind::kProximalAdagrad: {
        double& a = state.first[i];
        a += g * g;
        if (g == 0.0 && c.l1 == 0.0 && c.l2_shrink == 0.0) break;
        const double step_lr = c.lr / std::sqrt(a + c.epsilon);
        theta = proximal(theta - step_lr * g, step_lr, c.l1, c.l2_shrink);
        break;
      }
    }
  }
}

ProbeResult quadratic_convergence_probe(const OptimizerConfig& config, std::uint64_t seed, int dim, double tolerance,
                                        std::uint64_t max_iterations) {
  config.validate();
  Rng rng(seed);
  std::vector<double> target(static_cast<std::size_t>(dim));
  for (double& v : target) v = rng.uniform(-1.0, 1.0);
  std::vector<double> theta(target.size(), 0.0);
  std::vector<double> grad(target.size(), 0.0);
  OptimizerState state = make_state(config, theta.size());

  auto distance = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) s += (theta[i] - target[i]) * (theta[i] - target[i]);
    return std::sqrt(s);
  };

  ProbeResult result;
  while (result.iterations < max_iterations) {
    if (distance() < tolerance) {
      result.converged = true;
      break;
    }
    for (std::size_t i = 0; i < theta.size(); ++i) grad[i] = theta[i] - target[i];
    optimizer_step(theta, grad, state, config);
    ++result.iterations;
  }
  result.final_distance = distance();
  if (!result.converged && result.final_distance < tolerance) result.converged = true;
  return result;
}

}  // namespace evdet::optim
