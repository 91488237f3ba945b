#pragma once

#include <functional>
#include <string>
#include <vector>

#include "agsa/autodiff.hpp"

namespace agsa::ad {

struct GradCheckOptions {
  double rtol = 1e-4;
  double atol = 1e-6;
  double h = 1e-5;
};

struct ParamGradError {
  std::string name;
  std::size_t size = 0;
  // Worst |analytic - numeric| / max(|analytic|, |numeric|, atol/rtol).
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  bool passed = true;
  std::string summary() const;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Compares the tape gradient of a scalar function against central differences
// (f(p+h) - f(p-h)) / 2h for every element of every parameter. The function
// must rebuild its graph from the current parameter values on every call.
GradCheckReport check_gradients(const std::function<Tensor()>& f, std::vector<NamedParam> params,
                                const GradCheckOptions& options = {});

}  // namespace agsa::ad
