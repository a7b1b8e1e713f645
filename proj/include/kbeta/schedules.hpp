#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kbeta {

struct Breakpoint {
  std::int64_t threshold = 1;
  double lr = 0.0;

  friend bool operator==(const Breakpoint&, const Breakpoint&) = default;
};

/// Piecewise-constant learning rate over an abstract tick (step or epoch).
/// The rate changes AT each threshold and holds until the next one.
struct PiecewiseSchedule {
  std::vector<Breakpoint> breakpoints;  // strictly increasing thresholds

  friend bool operator==(const PiecewiseSchedule&, const PiecewiseSchedule&) = default;
};

/// Grammar: pair (',' pair)*, pair = integer ':' float. Whitespace around
/// tokens is ignored. Example: "1:1e-3,30000:5e-4,40000:1e-4,60000:1e-5".
PiecewiseSchedule parse_schedule(std::string_view spec);
std::string format_schedule(const PiecewiseSchedule& sched);

/// Throws ConfigError for ticks before the first threshold.
double lr_at(const PiecewiseSchedule& sched, std::int64_t step);

/// Cosine decay from init_lr to end_lr over ramp_steps, then constant end_lr.
struct CosineJoinSchedule {
  double init_lr = 1e-2;
  double end_lr = 1e-5;
  std::int64_t ramp_steps = 40000;

  void validate() const;
};

double cosine_lr_at(const CosineJoinSchedule& sched, std::int64_t step);

}  // namespace kbeta
