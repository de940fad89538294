#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace anyshot {

struct GradientSuiteConfig {
  std::size_t instances = 20;
  std::uint64_t seed = 0;
  double step = 1e-5;
  // Instances with a ReLU/leaky pre-activation or an L1 residual closer than
  // this to zero are redrawn.
  double kink_margin = 1e-4;
};

struct GradientCheckRow {
  std::string term;
  std::size_t instance = 0;
  double max_relative_error = 0.0;
  std::size_t entries = 0;
};

// Central-difference checks of every loss term, the full generator step and
// the discriminator step on small random models.
std::vector<GradientCheckRow> run_gradient_suite(const GradientSuiteConfig& config);

double max_error(const std::vector<GradientCheckRow>& rows);

}  // namespace anyshot
