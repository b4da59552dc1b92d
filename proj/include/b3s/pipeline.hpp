#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "b3s/classifier.hpp"
#include "b3s/config.hpp"
#include "b3s/summarizer.hpp"

namespace b3s {

/// Fresh summarizer with the configured dims, initialized from config.seed.
Summarizer init_summarizer(const RunConfig& config, std::size_t vocab_size);
/// Fresh classifier with the cls_ dims, initialized from config.seed.
Classifier init_classifier(const RunConfig& config, std::size_t vocab_size);

struct StageResult {
  Summarizer model;
  std::size_t steps = 0;  // total steps behind the weights, pretraining included
  std::vector<BatchResult> history;
};

using StepCallback = std::function<void(const TrainProgress&)>;

/// Trains one base model on every pair for config.pretrain_steps.
StageResult pretrain(std::span<const PreparedExample> corpus, std::size_t vocab_size, const RunConfig& config,
                     const StepCallback& on_step = {});

struct AutoLabelResult {
  std::vector<NewsPair> parallel;
  std::vector<NewsPair> sequence;
  std::vector<NewsPair> rest;  // confidence below tau
  std::vector<Classification> scores;  // one per input pair, in order
};

/// Labels each pair by its summary; kept only when the winning probability reaches tau.
AutoLabelResult auto_label_corpus(const Classifier& summary_classifier, const Vocabulary& classifier_vocab,
                                  const std::vector<NewsPair>& pairs, double tau);

struct Provenance {
  std::string base_weights;  // weights_id of the pretrained base
  std::size_t base_steps = 0;
  std::size_t finetune_steps = 0;
  Structure label = Structure::Parallel;
};

struct FinetuneResult {
  StageResult stage;
  Provenance provenance;
};

/// Continues training a copy of `base` on one structure's subset with fresh
/// Adagrad accumulators. Step numbering continues from `base_steps`.
FinetuneResult finetune(const Summarizer& base, std::size_t base_steps, std::span<const PreparedExample> subset,
                        Structure label, const RunConfig& config, const StepCallback& on_step = {});

struct StructureAwareModel {
  Classifier article_classifier;
  Vocabulary classifier_vocab;
  std::size_t max_src_len = 400;
  Vocabulary summarizer_vocab;
  Summarizer parallel_model;
  Summarizer sequence_model;
};

struct RoutedSummary {
  std::array<Tokens, 3> summary;
  Structure chosen = Structure::Parallel;
  Classification scores;
  bool padded = false;
  bool truncated = false;
};

/// Classifies the article, then decodes with the matching sub-model.
RoutedSummary structure_aware_summarize(const StructureAwareModel& model, const Tokens& article,
                                        const DecodeConfig& decode);

/// Resumable record of pipeline stages, kept as JSON.
class Manifest {
 public:
  struct Stage {
    std::string name;
    std::string checkpoint;
    std::string config_hash;
    std::string weights_id;
    std::size_t steps = 0;
    std::optional<std::string> base_weights;
    std::map<std::string, std::size_t> counts;
  };

  void record(const Stage& stage);  // replaces an earlier entry of the same name
  const Stage* find(const std::string& name) const;
  const std::vector<Stage>& stages() const { return stages_; }

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
  void save(const std::string& path) const;
  /// Missing file gives an empty manifest.
  static Manifest load(const std::string& path);

 private:
  std::vector<Stage> stages_;
};

}  // namespace b3s
