#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "b3s/checkpoint.hpp"
#include "b3s/classifier.hpp"
#include "b3s/corpus.hpp"
#include "b3s/summarizer.hpp"

namespace b3s {

/// Every tunable of a run, as one flat key space. Classifier keys carry a
/// cls_ prefix where a summarizer key has the same name.
struct RunConfig {
  std::uint64_t seed = 1;

  // corpus
  std::size_t max_src_len = 400;
  std::size_t min_summary_len = 70;
  std::size_t vocab_size = 50000;

  // summarizer
  std::size_t emb_dim = 128;
  std::size_t hidden_dim = 256;
  double lr = 0.15;
  double clip_norm = 2.0;
  double coverage_lambda = 1.0;
  std::size_t coverage_from_step = 1000;
  std::size_t batch_size = 16;
  std::size_t pretrain_steps = 2000;
  std::size_t finetune_steps = 500;
  double finetune_lr = 0.15;

  // decoding
  std::string decode_mode = "beam";
  std::size_t beam_size = 4;
  std::size_t max_decode_len = 120;
  bool decode_coverage = true;

  // classifier
  std::size_t cls_emb_dim = 256;
  std::size_t cls_hidden_dim = 256;
  double cls_lr = 0.01;
  std::size_t cls_min_count = 2;
  std::size_t cls_epochs = 20;
  std::size_t cls_batch_size = 1;
  double target_precision = 0.8;
  double tau = 0.8;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Canonical JSON (sorted keys) of the full resolved config.
std::string to_json(const RunConfig& config);
/// Applies a flat JSON object on top of `base`; unknown keys and wrong
/// types raise ConfigError.
RunConfig apply_json(RunConfig base, const std::string& json_text);
RunConfig load_config(const std::string& path, const RunConfig& base = {});
/// Applies "key=value" style overrides (value parsed as JSON, bare words as strings).
RunConfig apply_overrides(RunConfig base, const std::map<std::string, std::string>& overrides);
ConfigHash config_hash(const RunConfig& config);

// Views onto the module configs.
PreprocessConfig preprocess_config(const RunConfig& c);
TrainConfig train_config(const RunConfig& c);
TrainConfig finetune_config(const RunConfig& c);
DecodeConfig decode_config(const RunConfig& c);
ClassifierTrainConfig classifier_train_config(const RunConfig& c);

}  // namespace b3s
