#include "kbeta/schedules.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "kbeta/error.hpp"

namespace kbeta {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

[[noreturn]] void parse_fail(std::size_t index, std::string_view pair, const std::string& why) {
  std::ostringstream os;
  os << "lr schedule: pair " << index + 1 << " ('" << pair << "'): " << why;
  throw ConfigError(os.str());
}

}  // namespace

PiecewiseSchedule parse_schedule(std::string_view spec) {
  PiecewiseSchedule sched;
  if (trim(spec).empty()) throw ConfigError("lr schedule: empty specification");
  std::size_t index = 0;
  while (true) {
    const std::size_t comma = spec.find(',');
    const std::string_view pair = trim(spec.substr(0, comma));
    const std::size_t colon = pair.find(':');
    if (colon == std::string_view::npos) parse_fail(index, pair, "expected 'threshold:lr'");

    const std::string_view step_text = trim(pair.substr(0, colon));
    const std::string_view lr_text = trim(pair.substr(colon + 1));
    Breakpoint bp;
    auto [sp, sec] = std::from_chars(step_text.data(), step_text.data() + step_text.size(), bp.threshold);
    if (sec != std::errc{} || sp != step_text.data() + step_text.size() || step_text.empty()) {
      parse_fail(index, pair, "threshold is not an integer");
    }
    auto [lp, lec] = std::from_chars(lr_text.data(), lr_text.data() + lr_text.size(), bp.lr);
    if (lec != std::errc{} || lp != lr_text.data() + lr_text.size() || lr_text.empty()) {
      parse_fail(index, pair, "learning rate is not a number");
    }
    if (bp.threshold < 1) parse_fail(index, pair, "threshold must be positive");
    if (!(std::isfinite(bp.lr) && bp.lr > 0.0)) parse_fail(index, pair, "learning rate must be positive");
    if (!sched.breakpoints.empty() && bp.threshold <= sched.breakpoints.back().threshold) {
      parse_fail(index, pair, "thresholds must be strictly increasing");
    }
    sched.breakpoints.push_back(bp);
    ++index;
    if (comma == std::string_view::npos) break;
    spec.remove_prefix(comma + 1);
  }
  return sched;
}

std::string format_schedule(const PiecewiseSchedule& sched) {
  std::string out;
  for (const auto& bp : sched.breakpoints) {
    if (!out.empty()) out += ',';
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, bp.lr);
    out += std::to_string(bp.threshold) + ':' + std::string(buf, res.ptr);
  }
  return out;
}

double lr_at(const PiecewiseSchedule& sched, std::int64_t step) {
  if (sched.breakpoints.empty()) throw ConfigError("lr_at: empty schedule");
  if (step < sched.breakpoints.front().threshold) {
    throw ConfigError("lr_at: tick " + std::to_string(step) + " precedes the first threshold " +
                      std::to_string(sched.breakpoints.front().threshold));
  }
  auto it = std::upper_bound(sched.breakpoints.begin(), sched.breakpoints.end(), step,
                             [](std::int64_t s, const Breakpoint& bp) { return s < bp.threshold; });
  return std::prev(it)->lr;
}

void CosineJoinSchedule::validate() const {
  if (!(end_lr > 0.0 && init_lr >= end_lr)) {
    throw ConfigError("cosine schedule: need init_lr >= end_lr > 0");
  }
  if (ramp_steps < 1) throw ConfigError("cosine schedule: ramp_steps must be >= 1");
}

double cosine_lr_at(const CosineJoinSchedule& sched, std::int64_t step) {
  sched.validate();
  if (step < 0) throw ConfigError("cosine_lr_at: negative step");
  if (step >= sched.ramp_steps) return sched.end_lr;
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(sched.ramp_steps);
  return sched.end_lr + 0.5 * (sched.init_lr - sched.end_lr) * (1.0 + std::cos(phase));
}

}  // namespace kbeta
