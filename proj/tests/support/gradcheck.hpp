#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gph2/tensor.hpp"

namespace testing_support {

struct GradCheck {
  double max_rel_error = 0;
  std::string worst;  // "param[i] entry j"
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of the scalar f() with central differences
// for every entry of every parameter. Entries whose analytic and numeric
// values are both below `floor` in magnitude are compared absolutely.
inline GradCheck check_gradients(std::vector<gph2::Tensor> params, const std::function<gph2::Tensor()>& f,
                                 double h = 1e-6, double floor = 1e-7) {
  for (auto& p : params) p.zero_grad();
  const gph2::Tensor loss = f();
  gph2::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  GradCheck out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = f().item();
      data[i] = saved - h;
      const double down = f().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k][i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double err = scale < floor ? std::abs(a - numeric) : std::abs(a - numeric) / scale;
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = "param[" + std::to_string(k) + "] entry " + std::to_string(i) + " analytic " +
                    std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace testing_support
