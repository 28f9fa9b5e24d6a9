#include "mms/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE
namespace {

double evaluate(const GradCheckFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.parameter(t));
  return static_cast<double>(tape.value(fn(tape, vars)).item());
}

}  // namespace

GradCheckReport check_gradients(const GradCheckFn& fn, std::vector<Tensor> inputs,
                                const GradCheckOptions& options) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.parameter(t));
  const Var loss = fn(tape, vars);
  tape.backward(loss);

  GradCheckReport report;
  const Scalar h = static_cast<Scalar>(options.perturbation);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<Scalar>& analytic = tape.grad(vars[k]);
    const std::size_t n = inputs[k].size();
    std::size_t stride = 1;
    if (options.max_entries_per_input != 0 && n > options.max_entries_per_input) {
      stride = (n + options.max_entries_per_input - 1) / options.max_entries_per_input;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const Scalar saved = inputs[k][i];
      inputs[k][i] = saved + h;
      const double plus = evaluate(fn, inputs);
      inputs[k][i] = saved - h;
      const double minus = evaluate(fn, inputs);
      inputs[k][i] = saved;

      const double numeric = (plus - minus) / (2.0 * options.perturbation);
      const double a = analytic.empty() ? 0.0 : static_cast<double>(analytic[i]);
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++report.checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst_input = k;
        report.worst_index = i;
      }
    }
  }
  return report;
}

MMS_END_NAMESPACE
