#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsnerv/codes.hpp"
#include "dsnerv/common.hpp"
#include "dsnerv/decoder.hpp"

namespace dsnerv {

using Json = nlohmann::json;

// Cursor over a JSON document that reports the full path of whatever field
// is missing or mistyped, e.g. "$.decoder.strides[2]: expected integer".
class JsonCursor {
 public:
  JsonCursor(const Json& j, std::string path = "$") : j_(&j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const Json& raw() const { return *j_; }

  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

  JsonCursor at(const std::string& key) const {
    if (!j_->is_object()) throw ConfigError(path_ + ": expected object");
    auto it = j_->find(key);
    if (it == j_->end()) throw ConfigError(path_ + "." + key + ": missing");
    return JsonCursor(*it, path_ + "." + key);
  }

  JsonCursor at(size_t idx) const {
    if (!j_->is_array()) throw ConfigError(path_ + ": expected array");
    if (idx >= j_->size())
      throw ConfigError(path_ + "[" + std::to_string(idx) + "]: missing");
    return JsonCursor((*j_)[idx], path_ + "[" + std::to_string(idx) + "]");
  }

  size_t size() const {
    if (!j_->is_array()) throw ConfigError(path_ + ": expected array");
    return j_->size();
  }

  int64_t get_int() const {
    if (!j_->is_number_integer()) throw ConfigError(path_ + ": expected integer");
    return j_->get<int64_t>();
  }

  double get_double() const {
    if (!j_->is_number()) throw ConfigError(path_ + ": expected number");
    return j_->get<double>();
  }

  bool get_bool() const {
    if (!j_->is_boolean()) throw ConfigError(path_ + ": expected boolean");
    return j_->get<bool>();
  }

  std::string get_string() const {
    if (!j_->is_string()) throw ConfigError(path_ + ": expected string");
    return j_->get<std::string>();
  }

  std::vector<int> get_int_array() const {
    if (!j_->is_array()) throw ConfigError(path_ + ": expected array");
    std::vector<int> out;
    out.reserve(j_->size());
    for (size_t i = 0; i < j_->size(); ++i) out.push_back(static_cast<int>(at(i).get_int()));
    return out;
  }

  int64_t get_int_or(const std::string& key, int64_t fallback) const {
    return has(key) ? at(key).get_int() : fallback;
  }

  double get_double_or(const std::string& key, double fallback) const {
    return has(key) ? at(key).get_double() : fallback;
  }

  std::string get_string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? at(key).get_string() : fallback;
  }

  bool get_bool_or(const std::string& key, bool fallback) const {
    return has(key) ? at(key).get_bool() : fallback;
  }

 private:
  const Json* j_;
  std::string path_;
};

inline Json timeline_to_json(const TimelineConfig& tl) {
  return Json{{"frame_count", tl.frame_count},
              {"static_count", tl.static_count},
              {"dynamic_count", tl.dynamic_count}};
}

inline TimelineConfig timeline_from_json(const JsonCursor& c) {
  TimelineConfig tl;
  tl.frame_count = static_cast<int>(c.at("frame_count").get_int());
  tl.static_count = static_cast<int>(c.at("static_count").get_int());
  tl.dynamic_count = static_cast<int>(c.at("dynamic_count").get_int());
  return tl;
}

inline Json code_shape_to_json(const CodeShape& s) {
  return Json{{"h", s.h}, {"w", s.w}, {"dim", s.dim}};
}

inline CodeShape code_shape_from_json(const JsonCursor& c) {
  CodeShape s;
  s.h = static_cast<int>(c.at("h").get_int());
  s.w = static_cast<int>(c.at("w").get_int());
  s.dim = static_cast<int>(c.at("dim").get_int());
  return s;
}

inline Json decoder_to_json(const FusionDecoderSpec& d) {
  return Json{{"c1", d.c1},
              {"ch_min", d.ch_min},
              {"strides", d.strides},
              {"channel_reduction", d.channel_reduction},
              {"head_kernel", d.head_kernel},
              {"static_shape", code_shape_to_json(d.static_shape)},
              {"dynamic_shape", code_shape_to_json(d.dynamic_shape)},
              {"out_h", d.out_h},
              {"out_w", d.out_w}};
}

inline FusionDecoderSpec decoder_from_json(const JsonCursor& c) {
  FusionDecoderSpec d;
  d.c1 = static_cast<int>(c.at("c1").get_int());
  d.ch_min = static_cast<int>(c.at("ch_min").get_int());
  d.strides = c.at("strides").get_int_array();
  d.channel_reduction = c.get_double_or("channel_reduction", 1.2);
  d.head_kernel = static_cast<int>(c.get_int_or("head_kernel", 1));
  d.static_shape = code_shape_from_json(c.at("static_shape"));
  d.dynamic_shape = code_shape_from_json(c.at("dynamic_shape"));
  d.out_h = static_cast<int>(c.at("out_h").get_int());
  d.out_w = static_cast<int>(c.at("out_w").get_int());
  return d;
}

// The combined model description embedded in checkpoints and bitstreams.
inline Json model_spec_to_json(const TimelineConfig& tl, const FusionDecoderSpec& d) {
  return Json{{"timeline", timeline_to_json(tl)}, {"decoder", decoder_to_json(d)}};
}

inline void model_spec_from_json(const JsonCursor& c, TimelineConfig& tl, FusionDecoderSpec& d) {
  tl = timeline_from_json(c.at("timeline"));
  d = decoder_from_json(c.at("decoder"));
}

}  // namespace dsnerv
