#include "kbeta/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kbeta/error.hpp"

namespace kbeta {

namespace {

QuantitySummary summarize(std::vector<double> values, int bins, double lo, double hi) {
  QuantitySummary out;
  out.edges.resize(static_cast<std::size_t>(bins) + 1);
  const double width = (hi - lo) / bins;
  for (int i = 0; i <= bins; ++i) out.edges[i] = lo + width * i;
  out.edges.back() = hi;
  out.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double x : values) {
    int idx = 0;
    if (width > 0.0) idx = static_cast<int>(std::floor((x - lo) / width));
    idx = std::clamp(idx, 0, bins - 1);
    ++out.counts[idx];
  }
  out.median = quantile(values, 0.5);
  out.q1 = quantile(values, 0.25);
  out.q3 = quantile(values, 0.75);
  return out;
}

// Shortest round-trip text for a double.
std::string fmt(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

HistogramSummary summarize_epoch(const std::vector<SunspikeRecord>& records, int bins,
                                 double beta2_min, double beta2_max, std::int64_t epoch) {
  if (records.empty()) throw ConfigError("summarize_epoch: no records");
  if (bins < 1) throw ConfigError("summarize_epoch: bins must be >= 1");
  if (beta2_min > beta2_max) throw ConfigError("summarize_epoch: beta2 range inverted");
  std::vector<double> suns, betas;
  suns.reserve(records.size());
  betas.reserve(records.size());
  for (const auto& rec : records) {
    suns.push_back(rec.sun);
    betas.push_back(rec.beta2);
  }
  HistogramSummary out;
  out.epoch = epoch;
  out.samples = static_cast<std::int64_t>(records.size());
  out.sun = summarize(std::move(suns), bins, 0.0, 1.0);
  out.beta2 = summarize(std::move(betas), bins, beta2_min, beta2_max);
  return out;
}

std::vector<std::vector<SunspikeRecord>> group_by_epoch(
    const std::vector<SunspikeRecord>& records, std::int64_t steps_per_epoch) {
  if (steps_per_epoch < 1) throw ConfigError("group_by_epoch: steps_per_epoch must be >= 1");
  std::vector<std::vector<SunspikeRecord>> epochs;
  for (const auto& rec : records) {
    const auto e = static_cast<std::size_t>(std::max<std::int64_t>(rec.step - 1, 0) / steps_per_epoch);
    if (epochs.size() <= e) epochs.resize(e + 1);
    epochs[e].push_back(rec);
  }
  return epochs;
}

void write_sunspike_csv(std::ostream& os, const std::vector<SunspikeRecord>& records,
                        bool header) {
  if (header) os << "step,bucket,sun,beta2,pooled_norm,r\n";
  for (const auto& rec : records) {
    os << rec.step << ',' << rec.bucket << ',' << fmt(rec.sun) << ',' << fmt(rec.beta2) << ','
       << fmt(rec.pooled_norm) << ',' << fmt(rec.r) << '\n';
  }
}

void write_sunspike_jsonl(std::ostream& os, const std::vector<SunspikeRecord>& records) {
  for (const auto& rec : records) {
    nlohmann::ordered_json row;
    row["step"] = rec.step;
    row["bucket"] = rec.bucket;
    row["sun"] = rec.sun;
    row["beta2"] = rec.beta2;
    row["pooled_norm"] = rec.pooled_norm;
    row["r"] = rec.r;
    os << row.dump() << '\n';
  }
}

std::vector<SunspikeRecord> read_sunspike_csv(std::istream& is) {
  std::vector<SunspikeRecord> out;
  std::string line;
  if (!std::getline(is, line)) return out;
  if (line.rfind("step,", 0) != 0) throw ConfigError("sunspike csv: missing header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    // Bucket keys never contain commas; shape keys are joined with 'x'.
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ConfigError("sunspike csv: expected 6 columns: " + line);
    SunspikeRecord rec;
    rec.step = std::stoll(cells[0]);
    rec.bucket = cells[1];
    rec.sun = std::stod(cells[2]);
    rec.beta2 = std::stod(cells[3]);
    rec.pooled_norm = std::stod(cells[4]);
    rec.r = std::stod(cells[5]);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace kbeta
