#include "kbeta/optimizer.hpp"

#include <sstream>

namespace kbeta {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ConfigError(std::string("invalid optimizer config: ") + what);
}

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

std::string to_string(BiasCorrection mode) {
  switch (mode) {
    case BiasCorrection::none:
      return "none";
    case BiasCorrection::beta2max:
      return "beta2max";
    case BiasCorrection::exact:
      return "exact";
  }
  return "none";
}

std::string to_string(BucketMode mode) {
  switch (mode) {
    case BucketMode::global:
      return "global";
    case BucketMode::per_path:
      return "per_path";
    case BucketMode::shape:
      return "shape";
  }
  return "global";
}

BiasCorrection parse_bias_correction(std::string_view text) {
  if (text == "none") return BiasCorrection::none;
  if (text == "beta2max") return BiasCorrection::beta2max;
  if (text == "exact") return BiasCorrection::exact;
  throw ConfigError("unknown bias correction mode '" + std::string(text) + "'");
}

BucketMode parse_bucket_mode(std::string_view text) {
  if (text == "global") return BucketMode::global;
  if (text == "per_path" || text == "per-path" || text == "per-array" ||
      text == "per-parameter" || text == "param_path") {
    return BucketMode::per_path;
  }
  if (text == "shape") return BucketMode::shape;
  throw ConfigError("unknown bucket mode '" + std::string(text) + "'");
}

void KbetaConfig::validate() const {
  require(positive_finite(lr), "lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(beta2_min > 0.0 && beta2_min <= beta2_max && beta2_max < 1.0,
          "need 0 < beta2_min <= beta2_max < 1");
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  require(positive_finite(eps), "eps must be positive");
  require(positive_finite(tiny_spike), "tiny_spike must be positive");
  require(positive_finite(tiny_denom), "tiny_denom must be positive");
  require(!decay || (*decay >= 0.0 && *decay <= 1.0), "decay must lie in [0, 1]");
  require(!max_ratio || positive_finite(*max_ratio), "max_ratio must be positive");
  require(warmup_steps >= 0, "warmup_steps must be non-negative");
}

KbetaConfig adam_equivalent_config(double beta2, bool bias_correction) {
  KbetaConfig cfg;
  cfg.beta2_min = beta2;
  cfg.beta2_max = beta2;
  cfg.decay.reset();
  cfg.max_ratio.reset();
  cfg.adaptive_tiny = false;
  cfg.warmup_steps = 0;
  cfg.bias_correction = bias_correction ? BiasCorrection::beta2max : BiasCorrection::none;
  return cfg;
}

BucketKey bucket_key(std::string_view path, const Shape& shape, BucketMode mode) {
  if (path.empty()) throw ConfigError("bucket_key: empty path");
  switch (mode) {
    case BucketMode::global:
      return "0";
    case BucketMode::per_path:
      return std::string(path);
    case BucketMode::shape: {
      std::ostringstream os;
      os << "shape:";
      for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
      return os.str();
    }
  }
  return "0";
}

BiasFactors bias_factors(BiasCorrection mode, double beta1, double beta2_max,
                         double log_cumprod, std::int64_t t) {
  if (t < 1) throw ConfigError("bias_factors: t must be >= 1");
  const double td = static_cast<double>(t);
  switch (mode) {
    case BiasCorrection::none:
      return {1.0, 1.0};
    case BiasCorrection::beta2max:
      return {1.0 - std::pow(beta1, td), 1.0 - std::pow(beta2_max, td)};
    case BiasCorrection::exact:
      return {1.0 - std::pow(beta1, td), -std::expm1(log_cumprod)};
  }
  return {1.0, 1.0};
}

VmaxMode vmax_mode(std::optional<double> decay, std::optional<double> max_ratio) {
  if (!decay) return max_ratio ? VmaxMode::hard : VmaxMode::off;
  if (*decay == 0.0) return VmaxMode::degenerate;
  if (*decay >= 1.0) return VmaxMode::hard;
  return VmaxMode::leaky;
}

void AdamConfig::validate() const {
  require(positive_finite(lr), "lr must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(beta2 > 0.0 && beta2 < 1.0, "beta2 must lie in (0, 1)");
  require(positive_finite(eps), "eps must be positive");
}

}  // namespace kbeta
