#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "b3s/corpus.hpp"
#include "b3s/eval.hpp"
#include "b3s/layers.hpp"
#include "b3s/parameter.hpp"
#include "b3s/tape.hpp"

namespace b3s {

struct ClassifierDims {
  std::size_t vocab = 0;
  std::size_t emb = 256;
  std::size_t hidden = 256;
};

struct Classification {
  double p_parallel = 0.5;
  double p_sequence = 0.5;
  Structure label = Structure::Parallel;

  double confidence() const { return label == Structure::Parallel ? p_parallel : p_sequence; }
};

/// BiLSTM over the text; h = [forward final, backward state at position 1]
/// feeds two linear heads whose outputs share one two-way softmax.
class Classifier {
 public:
  explicit Classifier(const ClassifierDims& dims);
  explicit Classifier(ParameterStore store);
  Classifier(const Classifier& other);
  Classifier& operator=(const Classifier& other);
  Classifier(Classifier&&) noexcept;
  Classifier& operator=(Classifier&&) noexcept;

  void init(std::mt19937_64& rng);
  const ClassifierDims& dims() const { return dims_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  /// 1 x 2h text representation.
  NodeId encode_text(Tape& tape, std::span<const std::size_t> ids) const;
  /// 1 x 2 logits [parallel, sequence].
  NodeId logits(Tape& tape, std::span<const std::size_t> ids) const;
  /// Ties go to parallel.
  Classification classify(std::span<const std::size_t> ids) const;

 private:
  void bind();

  ClassifierDims dims_;
  ParameterStore store_;
  Embedding embedding_;
  BiLstmEncoder encoder_;
  Parameter* w_p_ = nullptr;
  Parameter* b_p_ = nullptr;
  Parameter* w_s_ = nullptr;
  Parameter* b_s_ = nullptr;
};

enum class ClassifierInput { Summary, Article };

/// Summaries join the three sentences with <sb>; articles are cut to max_src_len.
std::vector<std::size_t> classifier_ids(const NewsPair& pair, ClassifierInput kind, const Vocabulary& vocab,
                                        std::size_t max_src_len = 400);

struct LabeledExample {
  std::vector<std::size_t> ids;
  Structure label = Structure::Parallel;
};

/// Every pair must carry a gold label.
std::vector<LabeledExample> labeled_examples(const std::vector<NewsPair>& pairs, ClassifierInput kind,
                                             const Vocabulary& vocab, std::size_t max_src_len = 400);

struct ClassifierTrainConfig {
  double lr = 0.01;
  std::size_t epochs = 20;
  std::size_t batch_size = 1;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 1;
};

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  bool has_heldout = false;
  eval::ClassificationReport heldout;
};

struct ClassifierTrainReport {
  std::vector<EpochReport> epochs;
};

/// Cross-entropy with Adagrad over seeded per-epoch shuffles. Rejects data
/// with fewer than two classes. `heldout` may be empty.
ClassifierTrainReport train_classifier(Classifier& model, std::span<const LabeledExample> train,
                                       std::span<const LabeledExample> heldout, const ClassifierTrainConfig& config,
                                       const std::function<void(const EpochReport&)>& on_epoch = {});

eval::ClassificationReport evaluate_classifier(const Classifier& model, std::span<const LabeledExample> data);

struct UndersampleConfig {
  double target_precision = 0.8;
  std::vector<double> ratios = {1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
  ClassifierTrainConfig train;
};

struct UndersampleTrial {
  double ratio = 1.0;
  std::size_t majority_kept = 0;
  std::size_t minority = 0;
  eval::ClassificationReport heldout;
  bool qualifies = false;
};

struct UndersampleResult {
  double ratio = 1.0;
  bool qualified = false;  // false: no ratio met the target, best max-min precision returned
  Structure majority = Structure::Parallel;
  std::vector<UndersampleTrial> trials;
  Classifier model;
};

/// Keeps `ratio` of the majority class (seeded choice) and retrains from the
/// same initialization per ratio, largest ratio first. Returns the first
/// ratio whose held-out precision exceeds the target for both classes.
UndersampleResult undersample_tune(const ClassifierDims& dims, std::span<const LabeledExample> train,
                                   std::span<const LabeledExample> heldout, const UndersampleConfig& config,
                                   std::uint64_t init_seed,
                                   const std::function<void(const UndersampleTrial&)>& on_trial = {});

}  // namespace b3s
