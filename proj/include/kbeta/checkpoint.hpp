#pragma once

#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "kbeta/optimizer.hpp"

namespace kbeta {

/// Versioned JSON checkpoint of optimizer state. Numbers are written with
/// shortest round-trip formatting, so a reload resumes bit-identically.
inline constexpr int kCheckpointVersion = 1;

nlohmann::json config_to_json(const KbetaConfig& cfg);
KbetaConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const AdamConfig& cfg);
AdamConfig adam_config_from_json(const nlohmann::json& j);

template <class Real>
constexpr const char* precision_tag() {
  return std::is_same_v<Real, float> ? "f32" : "f64";
}

namespace detail {

template <class Real>
nlohmann::json tensor_to_json(const Tensor<Real>& t) {
  return {{"shape", t.shape()}, {"data", t.data()}};
}

template <class Real>
Tensor<Real> tensor_from_json(const nlohmann::json& j) {
  return Tensor<Real>(j.at("shape").get<Shape>(), j.at("data").get<std::vector<Real>>());
}

template <class Real>
nlohmann::json slots_to_json(const std::map<std::string, SlotState<Real>>& slots) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [path, slot] : slots) {
    nlohmann::json s{{"m", tensor_to_json(slot.m)}, {"v", tensor_to_json(slot.v)}};
    if (slot.v_max) s["v_max"] = tensor_to_json(*slot.v_max);
    out[path] = std::move(s);
  }
  return out;
}

template <class Real>
std::map<std::string, SlotState<Real>> slots_from_json(const nlohmann::json& j) {
  std::map<std::string, SlotState<Real>> slots;
  for (const auto& [path, s] : j.items()) {
    SlotState<Real> slot{tensor_from_json<Real>(s.at("m")), tensor_from_json<Real>(s.at("v")),
                         std::nullopt};
    if (s.contains("v_max")) slot.v_max = tensor_from_json<Real>(s.at("v_max"));
    slots.emplace(path, std::move(slot));
  }
  return slots;
}

inline void check_header(const nlohmann::json& j, const char* kind, const char* precision) {
  if (j.value("format", "") != kind) {
    throw ConfigError(std::string("checkpoint: expected format ") + kind);
  }
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported version");
  }
  if (j.value("precision", "") != precision) {
    throw ConfigError(std::string("checkpoint: precision mismatch, expected ") + precision);
  }
}

}  // namespace detail

template <class Real>
nlohmann::json save_state(const OptimizerState<Real>& state) {
  nlohmann::json buckets = nlohmann::json::object();
  for (const auto& [key, b] : state.buckets) {
    buckets[key] = {{"paths", b.paths},
                    {"r", b.r},
                    {"last_sun", b.last_sun},
                    {"last_beta2", b.last_beta2},
                    {"last_norm", b.last_norm},
                    {"log_beta2_cumprod", b.log_beta2_cumprod}};
  }
  return {{"format", "kbeta-state"},
          {"version", kCheckpointVersion},
          {"precision", precision_tag<Real>()},
          {"t", state.t},
          {"config", config_to_json(state.config)},
          {"slots", detail::slots_to_json(state.slots)},
          {"buckets", std::move(buckets)}};
}

template <class Real>
OptimizerState<Real> load_state(const nlohmann::json& j) {
  detail::check_header(j, "kbeta-state", precision_tag<Real>());
  OptimizerState<Real> state;
  state.t = j.at("t").get<std::int64_t>();
  state.config = config_from_json(j.at("config"));
  state.config.validate();
  state.slots = detail::slots_from_json<Real>(j.at("slots"));
  const bool keep_vmax = vmax_mode(state.config.decay, state.config.max_ratio) != VmaxMode::off;
  for (const auto& [path, slot] : state.slots) {
    if (slot.v_max.has_value() != keep_vmax) {
      throw ConfigError("checkpoint: v_max buffer inconsistent with config at " + path);
    }
  }
  std::size_t covered = 0;
  for (const auto& item : j.at("buckets").items()) {
    const std::string& key = item.key();
    const nlohmann::json& b = item.value();
    BucketState bucket;
    bucket.key = key;
    bucket.paths = b.at("paths").get<std::vector<std::string>>();
    if (bucket.paths.empty()) throw ConfigError("checkpoint: bucket '" + key + "' has no tensors");
    for (const auto& p : bucket.paths) {
      if (!state.slots.contains(p)) throw ConfigError("checkpoint: unknown path " + p);
    }
    covered += bucket.paths.size();
    bucket.r = b.at("r").get<double>();
    bucket.last_sun = b.at("last_sun").get<double>();
    bucket.last_beta2 = b.at("last_beta2").get<double>();
    bucket.last_norm = b.at("last_norm").get<double>();
    bucket.log_beta2_cumprod = b.at("log_beta2_cumprod").get<double>();
    state.buckets.emplace(key, std::move(bucket));
  }
  if (covered != state.slots.size()) throw ConfigError("checkpoint: buckets do not cover all slots");
  return state;
}

template <class Real>
nlohmann::json save_state(const AdamState<Real>& state) {
  return {{"format", "adam-state"},
          {"version", kCheckpointVersion},
          {"precision", precision_tag<Real>()},
          {"t", state.t},
          {"config", config_to_json(state.config)},
          {"slots", detail::slots_to_json(state.slots)}};
}

template <class Real>
AdamState<Real> load_adam_state(const nlohmann::json& j) {
  detail::check_header(j, "adam-state", precision_tag<Real>());
  AdamState<Real> state;
  state.t = j.at("t").get<std::int64_t>();
  state.config = adam_config_from_json(j.at("config"));
  state.config.validate();
  state.slots = detail::slots_from_json<Real>(j.at("slots"));
  return state;
}

}  // namespace kbeta
