#include "cwss/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace cwss {

namespace {

double eval(const std::vector<Tensor>& inputs, const LossGraphFn& fn) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  return tape.value(fn(tape, vars)).scalar_value();
}

}  // namespace

GradCheckReport check_gradients(const std::string& op_name,
                                const std::vector<Tensor>& inputs,
                                const LossGraphFn& fn, float tolerance, float step) {
  GradCheckOptions opts;
  opts.tolerance = tolerance;
  opts.step = step;
  return check_gradients(op_name, inputs, fn, opts);
}

GradCheckReport check_gradients(const std::string& op_name,
                                const std::vector<Tensor>& inputs,
                                const LossGraphFn& fn, const GradCheckOptions& opts) {
  GradCheckReport report;
  report.op_name = op_name;
  report.tolerance = opts.tolerance;

  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
  Var loss = fn(tape, vars);
  tape.backward(loss);

  float gmax = 0.0f;
  for (size_t i = 0; i < inputs.size(); ++i)
    for (float g : tape.grad(vars[i]).data) gmax = std::max(gmax, std::fabs(g));
  float floor = std::max(0.1f * gmax, 1e-4f);

  const double step = opts.step;
  float worst = 0.0f;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& analytic = tape.grad(vars[i]);
    for (size_t e = 0; e < inputs[i].data.size(); ++e) {
      std::vector<Tensor> bumped = inputs;
      auto central = [&](double h) {
        bumped[i].data[e] = static_cast<float>(inputs[i].data[e] + h);
        double hi = eval(bumped, fn);
        bumped[i].data[e] = static_cast<float>(inputs[i].data[e] - h);
        double lo = eval(bumped, fn);
        return (hi - lo) / (2.0 * h);
      };
      double numeric = central(step);
      if (opts.kink_filter) {
        double half = central(step / 2.0);
        double scale = std::max({std::fabs(numeric), std::fabs(half),
                                 static_cast<double>(floor)});
        if (std::fabs(numeric - half) > opts.consistency * scale) {
          ++report.skipped;
          continue;
        }
      }
      ++report.checked;
      double a = analytic.data[e];
      double denom = std::max({std::fabs(a), std::fabs(numeric), static_cast<double>(floor)});
      worst = std::max(worst, static_cast<float>(std::fabs(a - numeric) / denom));
    }
  }
  report.max_rel_error = worst;
  int total = report.checked + report.skipped;
  bool skip_ok =
      total == 0 ||
      static_cast<float>(report.skipped) <=
          opts.max_skipped_fraction * static_cast<float>(total);
  report.passed = worst <= opts.tolerance && report.checked > 0 && skip_ok;
  return report;
}

std::string format_report_line(const GradCheckReport& r) {
  char buf[160];
  if (r.skipped > 0)
    std::snprintf(buf, sizeof(buf),
                  "%-28s max_rel_error=%.6f tolerance=%.6f (skipped %d/%d at kinks) %s",
                  r.op_name.c_str(), r.max_rel_error, r.tolerance, r.skipped,
                  r.checked + r.skipped, r.passed ? "ok" : "FAIL");
  else
    std::snprintf(buf, sizeof(buf), "%-28s max_rel_error=%.6f tolerance=%.6f %s",
                  r.op_name.c_str(), r.max_rel_error, r.tolerance,
                  r.passed ? "ok" : "FAIL");
  return buf;
}

}  // namespace cwss
