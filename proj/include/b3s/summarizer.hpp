#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "b3s/corpus.hpp"
#include "b3s/layers.hpp"
#include "b3s/parameter.hpp"
#include "b3s/tape.hpp"

namespace b3s {

/// Base vocabulary plus the current document's out-of-vocabulary tokens.
class ExtendedVocab {
 public:
  ExtendedVocab() = default;
  ExtendedVocab(const Vocabulary& base, const Tokens& source);

  std::size_t size() const { return base_size_ + doc_oovs_.size(); }
  std::size_t base_size() const { return base_size_; }
  const std::vector<std::string>& doc_oovs() const { return doc_oovs_; }
  /// Base id, document-OOV id, or UNK for tokens that are in neither.
  std::size_t id(const std::string& token) const;
  std::string token(std::size_t id) const;
  bool is_oov(std::size_t id) const { return id >= base_size_; }

 private:
  const Vocabulary* base_ = nullptr;
  std::size_t base_size_ = 0;
  std::vector<std::string> doc_oovs_;
};

/// One article/summary pair mapped to ids. The target is
/// s1 <sb> s2 <sb> s3 </s> in extended ids; decoder inputs are <s> followed
/// by the target shifted right, with document OOVs replaced by UNK.
struct PreparedExample {
  std::string id;
  std::vector<std::size_t> source;      // base ids
  std::vector<std::size_t> source_ext;  // extended ids
  std::vector<std::size_t> decoder_input;
  std::vector<std::size_t> target;
  ExtendedVocab ext;
};

PreparedExample prepare_source(const Tokens& article, const Vocabulary& vocab);
PreparedExample prepare_example(const NewsPair& pair, const Vocabulary& vocab);
std::vector<PreparedExample> prepare_examples(const std::vector<NewsPair>& pairs, const Vocabulary& vocab);

struct SummarizerDims {
  std::size_t vocab = 0;
  std::size_t emb = 128;
  std::size_t hidden = 256;
  std::size_t attention() const { return 2 * hidden; }
};

struct DecoderState {
  LstmState lstm;
  NodeId coverage;  // 1 x n, running sum of attention
};

struct Attention {
  NodeId scores;   // e^t, 1 x n
  NodeId weights;  // a^t, 1 x n
  NodeId context;  // h*_t, 1 x 2h
};

struct StepOptions {
  bool use_coverage = false;
  std::optional<double> force_p_gen;  // replaces the learned switch when set
};

struct StepOutput {
  DecoderState next;
  Attention attention;
  NodeId input;       // x_t
  NodeId p_vocab;     // 1 x V
  NodeId p_gen;       // 1 x 1
  NodeId p_final;     // 1 x |ext|
  NodeId coverage;    // c^t used this step (before the update)
};

struct LossOptions {
  bool use_coverage = false;          // coverage feature in attention
  bool coverage_penalty = true;       // adds lambda * sum_i min(a, c) when use_coverage
  double coverage_lambda = 1.0;
  std::optional<double> force_p_gen;
};

struct SequenceLoss {
  NodeId loss;      // nll_mean + lambda * coverage_mean
  NodeId nll_mean;  // (1/T) sum_t -log P(w*_t)
  NodeId coverage_mean;  // (1/T) sum_t sum_i min(a_i, c_i); zero when coverage is off
  std::size_t steps = 0;
};

/// Source side of a document after encoding, reused by every decoder step.
struct EncodedSource {
  EncoderStates encoder;
  NodeId features;  // H W_h^T, n x attention
  std::vector<std::size_t> source_ext;
  std::size_t ext_size = 0;
  LstmState initial;
};

/// Attention encoder-decoder with a pointer-generator switch and coverage.
class Summarizer {
 public:
  explicit Summarizer(const SummarizerDims& dims);
  /// Binds to parameters loaded from a checkpoint; dims come from shapes.
  explicit Summarizer(ParameterStore store);
  Summarizer(const Summarizer& other);
  Summarizer& operator=(const Summarizer& other);
  Summarizer(Summarizer&&) noexcept;
  Summarizer& operator=(Summarizer&&) noexcept;

  void init(std::mt19937_64& rng);
  const SummarizerDims& dims() const { return dims_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  EncodedSource encode(Tape& tape, std::span<const std::size_t> source,
                       std::span<const std::size_t> source_ext, std::size_t ext_size) const;
  Attention attend(Tape& tape, const EncodedSource& src, NodeId decoder_h, NodeId coverage,
                   bool use_coverage) const;
  NodeId vocab_distribution(Tape& tape, NodeId decoder_h, NodeId context) const;
  NodeId generation_prob(Tape& tape, NodeId context, NodeId decoder_h, NodeId input) const;

  DecoderState initial_state(Tape& tape, const EncodedSource& src) const;
  /// One decoder step fed with `prev_token` (extended id; OOVs embed as UNK).
  StepOutput step(Tape& tape, const EncodedSource& src, const DecoderState& state, std::size_t prev_token,
                  const StepOptions& options) const;

  SequenceLoss sequence_loss(Tape& tape, const PreparedExample& ex, const LossOptions& options) const;

  /// Argmax of the final distribution at every target position under teacher forcing.
  std::vector<std::size_t> teacher_forced_argmax(const PreparedExample& ex, const StepOptions& options) const;

 private:
  void bind();

  SummarizerDims dims_;
  ParameterStore store_;
  Embedding embedding_;
  BiLstmEncoder encoder_;
  LstmCell decoder_;
  Linear bridge_h_, bridge_c_;
  Parameter* att_v_ = nullptr;
  Parameter* att_wh_ = nullptr;
  Parameter* att_ws_ = nullptr;
  Parameter* att_b_ = nullptr;
  Parameter* att_wc_ = nullptr;
  Linear proj_v_, proj_vp_;
  Parameter* ptr_wh_ = nullptr;
  Parameter* ptr_ws_ = nullptr;
  Parameter* ptr_wx_ = nullptr;
  Parameter* ptr_b_ = nullptr;
};

/// P(w) = p_gen * P_vocab(w) + (1 - p_gen) * sum_{i: w_i = w} a_i over the
/// extended vocabulary.
NodeId final_distribution(Tape& tape, NodeId p_gen, NodeId p_vocab, NodeId attention,
                          std::span<const std::size_t> source_ext, std::size_t ext_size);
/// c^{t+1} = c^t + a^t
NodeId coverage_update(Tape& tape, NodeId coverage, NodeId attention);
/// -log P(target) [+ lambda * sum_i min(a_i, c_i)]
NodeId step_loss(Tape& tape, NodeId p_final, std::size_t target, NodeId attention, NodeId coverage,
                 double lambda, bool use_coverage);

struct TrainConfig {
  double lr = 0.15;
  double clip_norm = 2.0;
  double coverage_lambda = 1.0;
  std::size_t coverage_from_step = 1000;
  std::size_t batch_size = 16;
};

struct BatchResult {
  double loss = 0.0;
  double nll = 0.0;
  double coverage = 0.0;
  double grad_norm = 0.0;
  double clip_factor = 1.0;
  bool coverage_active = false;
};

/// Mean sequence loss over the batch, one backward pass, global-norm
/// clipping and an Adagrad update. `step` selects the coverage schedule.
BatchResult train_batch(Summarizer& model, std::span<const PreparedExample* const> batch, const TrainConfig& config,
                        std::size_t step);

/// Mean loss without updating anything.
double evaluate_loss(const Summarizer& model, std::span<const PreparedExample> examples, const LossOptions& options);

struct TrainProgress {
  std::size_t step = 0;
  std::size_t epoch = 0;
  BatchResult batch;
};

/// Runs `num_steps` batches drawn from per-epoch seeded shuffles. `step_offset`
/// continues an existing step count (coverage schedule and provenance).
std::vector<BatchResult> train_steps(Summarizer& model, std::span<const PreparedExample> examples,
                                     const TrainConfig& config, std::size_t num_steps, std::uint64_t seed,
                                     std::size_t step_offset = 0,
                                     const std::function<void(const TrainProgress&)>& on_step = {});

enum class DecodeMode { Greedy, Beam };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::Greedy;
  std::size_t beam_size = 4;
  std::size_t max_decode_len = 120;
  bool use_coverage = false;
  std::optional<double> force_p_gen;
  bool record_trace = false;
};

/// Per-step diagnostics of the chosen hypothesis.
struct StepTrace {
  double attention_sum = 0.0;
  double p_vocab_sum = 0.0;
  double p_final_sum = 0.0;
  double coverage_sum = 0.0;  // sum_i c^t_i before the step
  double coverage_penalty = 0.0;
  double p_gen = 0.0;
};

struct DecodeResult {
  std::array<Tokens, 3> sentences;
  std::vector<std::size_t> ext_ids;
  double log_prob = 0.0;
  bool padded = false;     // fewer than three sentences were produced
  bool truncated = false;  // hit max_decode_len
  std::vector<StepTrace> trace;
};

DecodeResult decode(const Summarizer& model, const PreparedExample& source, const DecodeConfig& config);

}  // namespace b3s
