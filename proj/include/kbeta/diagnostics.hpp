#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace kbeta {

/// One (step, bucket) sample of the sunspike signal.
struct SunspikeRecord {
  std::int64_t step = 0;
  std::string bucket;
  double sun = 0.0;
  double beta2 = 0.0;
  double pooled_norm = 0.0;
  double r = 0.0;

  friend bool operator==(const SunspikeRecord&, const SunspikeRecord&) = default;
};

struct QuantitySummary {
  std::vector<double> edges;          // bins + 1 ascending edges
  std::vector<std::int64_t> counts;   // one per bin
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

/// Per-epoch distribution of sun and beta2, the data behind violin/heatmap plots.
struct HistogramSummary {
  std::int64_t epoch = 0;
  std::int64_t samples = 0;
  QuantitySummary sun;
  QuantitySummary beta2;
};

/// Equal-width bins over [0, 1) for sun and [beta2_min, beta2_max] for beta2.
/// Quartiles use linear interpolation between order statistics.
HistogramSummary summarize_epoch(const std::vector<SunspikeRecord>& records, int bins,
                                 double beta2_min, double beta2_max,
                                 std::int64_t epoch = 0);

/// Splits records into consecutive epochs of `steps_per_epoch` steps (step 1 starts epoch 0).
std::vector<std::vector<SunspikeRecord>> group_by_epoch(
    const std::vector<SunspikeRecord>& records, std::int64_t steps_per_epoch);

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

// Columns: step,bucket,sun,beta2,pooled_norm,r
void write_sunspike_csv(std::ostream& os, const std::vector<SunspikeRecord>& records,
                        bool header = true);
void write_sunspike_jsonl(std::ostream& os, const std::vector<SunspikeRecord>& records);
std::vector<SunspikeRecord> read_sunspike_csv(std::istream& is);

}  // namespace kbeta
