#pragma once

#include "dmsr/params.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dmsr::testing {

struct GradOptions {
  double eps = 1e-4;
  int samples_per_tensor = 24;  // entries probed per input tensor
  std::uint64_t seed = 1;
};

struct GradReport {
  double max_rel_error = 0.0;
  std::string worst;  // input with the largest error
  int probed = 0;
};

/// loss = sum(out * R) for a fixed random R; compares tape gradients with
/// central differences on sampled entries of every input.
/// rel = |a - n| / max(|a|, |n|, 1e-8) over the sampled vector of each input.
using BuildFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;
GradReport check_gradients(const std::vector<Tensor<double>>& inputs, const BuildFn& build, GradOptions options = {});

/// Same check over the entries of a parameter store.
using ForwardFn = std::function<Var<double>(Binding<double>&)>;
GradReport check_param_gradients(const ParamStore<double>& params, const ForwardFn& forward,
                                 GradOptions options = {});

/// Uniform tensor in [lo, hi].
Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0);

}  // namespace dmsr::testing
