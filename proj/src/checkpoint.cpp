#include "kbeta/checkpoint.hpp"

namespace kbeta {

nlohmann::json config_to_json(const KbetaConfig& cfg) {
  nlohmann::json j{{"lr", cfg.lr},
                   {"beta1", cfg.beta1},
                   {"beta2_min", cfg.beta2_min},
                   {"beta2_max", cfg.beta2_max},
                   {"alpha", cfg.alpha},
                   {"eps", cfg.eps},
                   {"tiny_spike", cfg.tiny_spike},
                   {"tiny_denom", cfg.tiny_denom},
                   {"decay", nullptr},
                   {"max_ratio", nullptr},
                   {"adaptive_tiny", cfg.adaptive_tiny},
                   {"bias_correction", to_string(cfg.bias_correction)},
                   {"warmup_steps", cfg.warmup_steps},
                   {"bucket_mode", to_string(cfg.bucket_mode)},
                   {"diagnostics", cfg.diagnostics}};
  if (cfg.decay) j["decay"] = *cfg.decay;
  if (cfg.max_ratio) j["max_ratio"] = *cfg.max_ratio;
  return j;
}

KbetaConfig config_from_json(const nlohmann::json& j) {
  KbetaConfig cfg;
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2_min = j.value("beta2_min", cfg.beta2_min);
  cfg.beta2_max = j.value("beta2_max", cfg.beta2_max);
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.eps = j.value("eps", cfg.eps);
  cfg.tiny_spike = j.value("tiny_spike", cfg.tiny_spike);
  cfg.tiny_denom = j.value("tiny_denom", cfg.tiny_denom);
  if (j.contains("decay") && !j.at("decay").is_null()) cfg.decay = j.at("decay").get<double>();
  if (j.contains("max_ratio") && !j.at("max_ratio").is_null()) {
    cfg.max_ratio = j.at("max_ratio").get<double>();
  }
  cfg.adaptive_tiny = j.value("adaptive_tiny", cfg.adaptive_tiny);
  if (j.contains("bias_correction")) {
    cfg.bias_correction = parse_bias_correction(j.at("bias_correction").get<std::string>());
  }
  cfg.warmup_steps = j.value("warmup_steps", cfg.warmup_steps);
  if (j.contains("bucket_mode")) {
    cfg.bucket_mode = parse_bucket_mode(j.at("bucket_mode").get<std::string>());
  }
  cfg.diagnostics = j.value("diagnostics", cfg.diagnostics);
  return cfg;
}

nlohmann::json config_to_json(const AdamConfig& cfg) {
  return {{"lr", cfg.lr},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"eps", cfg.eps},
          {"bias_correction", cfg.bias_correction}};
}

AdamConfig adam_config_from_json(const nlohmann::json& j) {
  AdamConfig cfg;
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.eps = j.value("eps", cfg.eps);
  cfg.bias_correction = j.value("bias_correction", cfg.bias_correction);
  return cfg;
}

}  // namespace kbeta
