#include "urbanflow/optim.hpp"

#include <cmath>

#include "urbanflow/errors.hpp"

namespace urbanflow {

void adam_update(std::span<float> param, std::span<const float> grad,
                 std::vector<float>& m, std::vector<float>& v, std::int64_t step,
                 const AdamConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw ValidationError("adam: parameter, gradient and state sizes differ");
  if (step < 1) throw ValidationError("adam: step count starts at 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double lr_t = cfg.lr * std::sqrt(c2) / c1;
  const double eps_t = cfg.eps * std::sqrt(c2);
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    m[i] = b1 * m[i] + (1.0f - b1) * g;
    v[i] = b2 * v[i] + (1.0f - b2) * g * g;
    // Equivalent to lr * mhat / (sqrt(vhat) + eps).
    param[i] -= static_cast<float>(lr_t * m[i] / (std::sqrt(static_cast<double>(v[i])) + eps_t));
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg) {
  if (cfg.lr <= 0 || cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1 ||
      cfg.eps <= 0)
    throw ValidationError("adam: invalid hyperparameters");
  if (state.m.empty()) {
    for (auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
      state.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0f);
    }
  }
  if (state.m.size() != params.size())
    throw ValidationError("adam: state holds " + std::to_string(state.m.size()) +
                          " parameters, got " + std::to_string(params.size()));
  ++state.step;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (state.m[k].size() != static_cast<std::size_t>(p.numel()))
      throw ValidationError("adam: state shape mismatch for parameter " + std::to_string(k));
    if (p.has_grad()) {
      adam_update(p.values(), p.grad_span(), state.m[k], state.v[k], state.step, cfg);
    } else {
      const std::vector<float> zero(static_cast<std::size_t>(p.numel()), 0.0f);
      adam_update(p.values(), zero, state.m[k], state.v[k], state.step, cfg);
    }
  }
}

}  // namespace urbanflow
