#pragma once

// Central finite-difference gradient checks. Include only from translation
// units built with VPS_REAL_DOUBLE: at float precision the differences are
// dominated by rounding.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vps/checkpoint.hpp"
#include "vps/tensor.hpp"

namespace gradcheck {

static_assert(sizeof(vps::Real) == sizeof(double), "gradient checks need the double build");

inline constexpr double kStep = 1e-3;
// Denominator floor for entries whose gradient is (numerically) zero.
inline constexpr double kFloor = 1e-4;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kFloor});
}

struct Report {
  double max_error = 0.0;
  std::size_t entries = 0;
  std::string worst;  // "<name>[<index>] analytic=<a> numeric=<n>"
  bool finite = true;
};

// `loss` must rebuild the scalar loss from the current parameter values.
inline Report check(const vps::NamedTensors& params, const std::function<vps::Tensor()>& loss,
                    double step = kStep) {
  vps::Tape tape;
  vps::Tensor value;
  {
    auto recording = tape.record();
    value = loss();
  }
  tape.backward(value);

  Report report;
  for (const auto& [name, param] : params) {
    const std::vector<double> analytic(param.grad().begin(), param.grad().end());
    vps::Tensor handle = param;  // shares storage
    auto data = handle.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      const double up = loss().item();
      data[i] = saved - step;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      if (!std::isfinite(analytic[i]) || !std::isfinite(numeric)) report.finite = false;
      const double err = relative_error(analytic[i], numeric);
      ++report.entries;
      if (err >= report.max_error) {
        report.max_error = err;
        report.worst = name + "[" + std::to_string(i) + "] analytic=" +
                       std::to_string(analytic[i]) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace gradcheck
