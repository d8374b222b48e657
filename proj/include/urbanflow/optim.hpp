#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "urbanflow/tensor.hpp"

namespace urbanflow {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, one pair per parameter.
struct AdamState {
  std::vector<std::vector<float>> m, v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of every parameter from its current grad.
/// Parameters without a grad are treated as having zero gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg);

/// Same update on raw arrays; the tensor overload forwards here.
void adam_update(std::span<float> param, std::span<const float> grad,
                 std::vector<float>& m, std::vector<float>& v, std::int64_t step,
                 const AdamConfig& cfg);

}  // namespace urbanflow
