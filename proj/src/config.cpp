#include "b3s/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

namespace b3s {

using nlohmann::json;

namespace {

// One entry per key: how to read it from JSON and write it back.
struct Field {
  std::function<void(RunConfig&, const json&)> read;
  std::function<json(const RunConfig&)> write;
};

template <typename T>
Field field(T RunConfig::*member) {
  return Field{[member](RunConfig& c, const json& v) {
                 if constexpr (std::is_same_v<T, bool>) {
                   if (!v.is_boolean()) throw ConfigError("expected a boolean");
                 } else if constexpr (std::is_same_v<T, std::string>) {
                   if (!v.is_string()) throw ConfigError("expected a string");
                 } else if constexpr (std::is_floating_point_v<T>) {
                   if (!v.is_number()) throw ConfigError("expected a number");
                 } else {
                   if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
                 }
                 c.*member = v.get<T>();
               },
               [member](const RunConfig& c) { return json(c.*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = {
      {"seed", field(&RunConfig::seed)},
      {"max_src_len", field(&RunConfig::max_src_len)},
      {"min_summary_len", field(&RunConfig::min_summary_len)},
      {"vocab_size", field(&RunConfig::vocab_size)},
      {"emb_dim", field(&RunConfig::emb_dim)},
      {"hidden_dim", field(&RunConfig::hidden_dim)},
      {"lr", field(&RunConfig::lr)},
      {"clip_norm", field(&RunConfig::clip_norm)},
      {"coverage_lambda", field(&RunConfig::coverage_lambda)},
      {"coverage_from_step", field(&RunConfig::coverage_from_step)},
      {"batch_size", field(&RunConfig::batch_size)},
      {"pretrain_steps", field(&RunConfig::pretrain_steps)},
      {"finetune_steps", field(&RunConfig::finetune_steps)},
      {"finetune_lr", field(&RunConfig::finetune_lr)},
      {"decode_mode", field(&RunConfig::decode_mode)},
      {"beam_size", field(&RunConfig::beam_size)},
      {"max_decode_len", field(&RunConfig::max_decode_len)},
      {"decode_coverage", field(&RunConfig::decode_coverage)},
      {"cls_emb_dim", field(&RunConfig::cls_emb_dim)},
      {"cls_hidden_dim", field(&RunConfig::cls_hidden_dim)},
      {"cls_lr", field(&RunConfig::cls_lr)},
      {"cls_min_count", field(&RunConfig::cls_min_count)},
      {"cls_epochs", field(&RunConfig::cls_epochs)},
      {"cls_batch_size", field(&RunConfig::cls_batch_size)},
      {"target_precision", field(&RunConfig::target_precision)},
      {"tau", field(&RunConfig::tau)},
  };
  return f;
}

void validate(const RunConfig& c) {
  if (c.decode_mode != "greedy" && c.decode_mode != "beam")
    throw ConfigError("decode_mode must be \"greedy\" or \"beam\", got \"" + c.decode_mode + "\"");
  if (c.emb_dim == 0 || c.hidden_dim == 0 || c.cls_emb_dim == 0 || c.cls_hidden_dim == 0)
    throw ConfigError("model dimensions must be positive");
  if (c.batch_size == 0 || c.cls_batch_size == 0) throw ConfigError("batch sizes must be positive");
  if (c.beam_size == 0 || c.max_decode_len == 0) throw ConfigError("beam_size and max_decode_len must be positive");
  if (!(c.clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (!(c.lr > 0) || !(c.cls_lr > 0) || !(c.finetune_lr > 0)) throw ConfigError("learning rates must be positive");
  if (c.max_src_len == 0) throw ConfigError("max_src_len must be positive");
}

void apply_object(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second.read(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  validate(c);
}

}  // namespace

std::string to_json(const RunConfig& config) {
  json j = json::object();
  for (const auto& [key, f] : fields()) j[key] = f.write(config);
  return j.dump();
}

RunConfig apply_json(RunConfig base, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  apply_object(base, j);
  return base;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return apply_json(base, ss.str());
}

RunConfig apply_overrides(RunConfig base, const std::map<std::string, std::string>& overrides) {
  json j = json::object();
  for (const auto& [key, text] : overrides) {
    try {
      j[key] = json::parse(text);
    } catch (const json::exception&) {
      j[key] = text;
    }
  }
  apply_object(base, j);
  return base;
}

ConfigHash config_hash(const RunConfig& config) { return sha256(to_json(config)); }

PreprocessConfig preprocess_config(const RunConfig& c) { return PreprocessConfig{c.max_src_len, c.min_summary_len}; }

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.lr = c.lr;
  t.clip_norm = c.clip_norm;
  t.coverage_lambda = c.coverage_lambda;
  t.coverage_from_step = c.coverage_from_step;
  t.batch_size = c.batch_size;
  return t;
}

TrainConfig finetune_config(const RunConfig& c) {
  TrainConfig t = train_config(c);
  t.lr = c.finetune_lr;
  return t;
}

DecodeConfig decode_config(const RunConfig& c) {
  DecodeConfig d;
  d.mode = c.decode_mode == "beam" ? DecodeMode::Beam : DecodeMode::Greedy;
  d.beam_size = c.beam_size;
  d.max_decode_len = c.max_decode_len;
  d.use_coverage = c.decode_coverage;
  return d;
}

ClassifierTrainConfig classifier_train_config(const RunConfig& c) {
  ClassifierTrainConfig t;
  t.lr = c.cls_lr;
  t.epochs = c.cls_epochs;
  t.batch_size = c.cls_batch_size;
  t.seed = c.seed;
  return t;
}

}  // namespace b3s
