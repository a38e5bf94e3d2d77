// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gap {

struct GradcheckOptions {
  std::size_t seeds = 20;
  double step = 1e-5;
  double tolerance = 1e-5;
  std::uint64_t seed = 0;
  /// Negate every analytic gradient; all regular cases must then fail.
  bool corrupt = false;
};

struct GradcheckCase {
  std::string name;
  std::size_t instances = 0;
  std::size_t resampled = 0;  // instances redrawn for sitting too close to a kink
  double max_rel_error = 0.0;
  bool passed = false;
  /// Negative controls pass when the checker reports a mismatch.
  bool expect_failure = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double seconds = 0.0;
  bool passed() const;
  std::string to_text() const;
  std::string to_json() const;
};

/// max |a - n| / max(|a|_inf, |n|_inf, 1e-12).
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Central finite differences in fp64 against every analytic backward pass:
/// each layer, each loss and the composed encoder objectives, on small random
/// instances.
GradcheckReport gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace gap
