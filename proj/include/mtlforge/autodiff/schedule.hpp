#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "mtlforge/error.hpp"

namespace mtl {

/// One-cycle learning rate followed by a constant fine-tune rate.
struct LrSchedule {
  double max_lr = 0.01;
  std::uint64_t total_steps = 1;  // length of the one-cycle phase
  double warmup_fraction = 0.25;
  double start_div = 25.0;
  double final_div = 1e4;
  double fine_tune_lr = 1e-4;

  std::uint64_t peak_step() const {
    return static_cast<std::uint64_t>(std::floor(warmup_fraction * static_cast<double>(total_steps)));
  }

  void validate() const {
    require(max_lr > 0.0, "schedule: max_lr must be positive");
    require(total_steps >= 1, "schedule: total_steps must be positive");
    require(warmup_fraction > 0.0 && warmup_fraction < 1.0, "schedule: warmup_fraction must lie in (0,1)");
    require(start_div > 0.0 && final_div > 0.0, "schedule: divisors must be positive");
    require(fine_tune_lr > 0.0, "schedule: fine_tune_lr must be positive");
  }
};

namespace detail {
// Half-cosine from `from` (pct=0) to `to` (pct=1); exact at pct=0.
inline double cosine_interp(double from, double to, double pct) {
  return from + (to - from) * (1.0 - std::cos(std::numbers::pi * pct)) / 2.0;
}
}  // namespace detail

inline double one_cycle_lr(std::uint64_t step, const LrSchedule& s) {
  if (step >= s.total_steps) return s.fine_tune_lr;
  const double low = s.max_lr / s.start_div;
  const double end = s.max_lr / (s.start_div * s.final_div);
  const std::uint64_t peak = s.peak_step();
  if (step < peak)
    return detail::cosine_interp(low, s.max_lr, static_cast<double>(step) / static_cast<double>(peak));
  const std::uint64_t tail = s.total_steps - 1 - peak;
  if (tail == 0) return s.max_lr;
  return detail::cosine_interp(s.max_lr, end,
                               static_cast<double>(step - peak) / static_cast<double>(tail));
}

}  // namespace mtl
