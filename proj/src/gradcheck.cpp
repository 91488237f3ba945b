#include "agsa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "agsa/error.hpp"

namespace agsa::ad {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  const Tensor y = f();
  if (y.size() != 1) throw ContractError("gradient check target must be scalar, got " + to_string(y.shape()));
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("gradient check oracle: non-finite function value");
  return v;
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " (" << params.size() << " parameters)";
  for (const auto& p : params) {
    os << "\n  " << p.name << " [" << p.size << "] max_rel_err=" << p.max_rel_error;
    if (p.size > 0) os << " at " << p.worst_index << " (analytic " << p.analytic << ", numeric " << p.numeric << ")";
  }
  return os.str();
}

GradCheckReport check_gradients(const std::function<Tensor()>& f, std::vector<NamedParam> params,
                                const GradCheckOptions& options) {
  GradCheckReport report;
  if (params.empty()) return report;

  std::vector<bool> previous_flags;
  for (auto& p : params) {
    previous_flags.push_back(p.tensor.requires_grad());
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  {
    Tape tape;
    const Tensor y = f();
    if (!std::isfinite(y.item())) throw NumericError("gradient check oracle: non-finite function value");
    tape.backward(y);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.push_back(p.tensor.grad());

  const double floor = options.atol / options.rtol;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].tensor.mutable_data();
    ParamGradError err;
    err.name = params[k].name;
    err.size = data.size();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + options.h;
      const double fp = evaluate(f);
      data[i] = saved - options.h;
      const double fm = evaluate(f);
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * options.h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > err.max_rel_error || i == 0) {
        err.max_rel_error = std::max(rel, err.max_rel_error);
        if (rel >= err.max_rel_error) {
          err.worst_index = i;
          err.analytic = a;
          err.numeric = numeric;
        }
      }
    }
    if (err.max_rel_error > options.rtol) report.passed = false;
    report.params.push_back(std::move(err));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k].tensor.zero_grad();
    params[k].tensor.set_requires_grad(previous_flags[k]);
  }
  return report;
}

}  // namespace agsa::ad
