#include "b3s/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "b3s/optim.hpp"

namespace b3s {

Classifier::Classifier(const ClassifierDims& dims) : dims_(dims) {
  if (dims.vocab <= Vocabulary::kNumSpecials || dims.emb == 0 || dims.hidden == 0)
    throw std::invalid_argument("classifier dims must be positive and the vocabulary must exceed the specials");
  store_.add("embedding", {dims.vocab, dims.emb});
  BiLstmEncoder::declare(store_, "encoder", dims.emb, dims.hidden);
  store_.add("head.W_p", {1, 2 * dims.hidden});
  store_.add("head.b_p", {1, 1});
  store_.add("head.W_s", {1, 2 * dims.hidden});
  store_.add("head.b_s", {1, 1});
  bind();
}

Classifier::Classifier(ParameterStore store) : store_(std::move(store)) {
  bind();
  dims_.vocab = embedding_.vocab_size();
  dims_.emb = embedding_.dim();
  dims_.hidden = encoder_.hidden_dim();
  if (encoder_.forward_cell().input_dim() != dims_.emb || w_p_->value.cols() != 2 * dims_.hidden ||
      w_s_->value.cols() != 2 * dims_.hidden)
    throw DimensionError("classifier checkpoint has inconsistent tensor shapes");
}

Classifier::Classifier(const Classifier& other) : dims_(other.dims_), store_(other.store_) { bind(); }

Classifier& Classifier::operator=(const Classifier& other) {
  if (this != &other) {
    dims_ = other.dims_;
    store_ = other.store_;
    bind();
  }
  return *this;
}

Classifier::Classifier(Classifier&&) noexcept = default;
Classifier& Classifier::operator=(Classifier&&) noexcept = default;

void Classifier::bind() {
  embedding_ = Embedding::bind(store_, "embedding");
  encoder_ = BiLstmEncoder::bind(store_, "encoder");
  w_p_ = &store_.get("head.W_p");
  b_p_ = &store_.get("head.b_p");
  w_s_ = &store_.get("head.W_s");
  b_s_ = &store_.get("head.b_s");
}

void Classifier::init(std::mt19937_64& rng) {
  embedding_.init(rng);
  encoder_.init(rng);
  init_uniform(*w_p_, rng, kInitScale);
  init_uniform(*w_s_, rng, kInitScale);
  b_p_->value.fill(0.0f);
  b_s_->value.fill(0.0f);
}

NodeId Classifier::encode_text(Tape& tape, std::span<const std::size_t> ids) const {
  if (ids.empty()) throw std::invalid_argument("classifier: empty token sequence");
  std::vector<NodeId> rows;
  rows.reserve(ids.size());
  for (std::size_t id : ids) rows.push_back(embedding_.lookup(tape, id));
  EncoderStates enc = encoder_.encode(tape, rows);
  return tape.concat({enc.forward_final.h, enc.backward_final.h});
}

NodeId Classifier::logits(Tape& tape, std::span<const std::size_t> ids) const {
  NodeId h = encode_text(tape, ids);
  NodeId lp = tape.add(tape.matmul(h, tape.param(*w_p_), false, true), tape.param(*b_p_));
  NodeId ls = tape.add(tape.matmul(h, tape.param(*w_s_), false, true), tape.param(*b_s_));
  return tape.concat({lp, ls});
}

Classification Classifier::classify(std::span<const std::size_t> ids) const {
  Tape tape;
  const auto& p = tape.value(tape.softmax(logits(tape, ids)));
  Classification c;
  c.p_parallel = p[0];
  c.p_sequence = p[1];
  c.label = c.p_sequence > c.p_parallel ? Structure::Sequence : Structure::Parallel;
  return c;
}

std::vector<std::size_t> classifier_ids(const NewsPair& pair, ClassifierInput kind, const Vocabulary& vocab,
                                        std::size_t max_src_len) {
  std::vector<std::size_t> ids;
  if (kind == ClassifierInput::Summary) {
    for (std::size_t k = 0; k < 3; ++k) {
      if (k > 0) ids.push_back(Vocabulary::kSentenceBreak);
      for (const auto& t : pair.summary[k]) ids.push_back(vocab.id(t));
    }
  } else {
    const std::size_t n = std::min(pair.article.size(), max_src_len);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(vocab.id(pair.article[i]));
  }
  return ids;
}

std::vector<LabeledExample> labeled_examples(const std::vector<NewsPair>& pairs, ClassifierInput kind,
                                             const Vocabulary& vocab, std::size_t max_src_len) {
  std::vector<LabeledExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!p.label) throw std::invalid_argument("pair '" + p.id + "' has no structure label");
    out.push_back({classifier_ids(p, kind, vocab, max_src_len), project(*p.label)});
  }
  return out;
}

eval::ClassificationReport evaluate_classifier(const Classifier& model, std::span<const LabeledExample> data) {
  std::vector<Structure> preds, golds;
  preds.reserve(data.size());
  golds.reserve(data.size());
  for (const auto& ex : data) {
    preds.push_back(model.classify(ex.ids).label);
    golds.push_back(ex.label);
  }
  return eval::classification_report(preds, golds);
}

namespace {

std::array<std::size_t, 2> class_counts(std::span<const LabeledExample> data) {
  std::array<std::size_t, 2> c{0, 0};
  for (const auto& ex : data) ++c[static_cast<std::size_t>(ex.label)];
  return c;
}

}  // namespace

ClassifierTrainReport train_classifier(Classifier& model, std::span<const LabeledExample> train,
                                       std::span<const LabeledExample> heldout, const ClassifierTrainConfig& config,
                                       const std::function<void(const EpochReport&)>& on_epoch) {
  const auto counts = class_counts(train);
  if (counts[0] == 0 || counts[1] == 0)
    throw std::invalid_argument("train_classifier: training data must contain both parallel and sequence examples");
  if (config.batch_size == 0) throw std::invalid_argument("train_classifier: batch_size must be positive");

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  auto params = model.params().all();
  ClassifierTrainReport report;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      std::vector<NodeId> losses;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = train[order[i]];
        losses.push_back(
            tape.neg_log_pick(tape.softmax(model.logits(tape, ex.ids)), static_cast<std::size_t>(ex.label)));
      }
      NodeId loss = tape.scale(tape.reduce_sum(tape.concat(losses)), 1.0 / static_cast<double>(end - start));
      total += tape.scalar_value(loss) * static_cast<double>(end - start);
      tape.backward(loss);
      if (config.clip_norm > 0.0) clip_global_norm(params, config.clip_norm);
      adagrad_step(params, config.lr);
    }
    EpochReport er;
    er.epoch = epoch;
    er.train_loss = total / static_cast<double>(train.size());
    if (!heldout.empty()) {
      er.has_heldout = true;
      er.heldout = evaluate_classifier(model, heldout);
    }
    if (on_epoch) on_epoch(er);
    report.epochs.push_back(std::move(er));
  }
  return report;
}

UndersampleResult undersample_tune(const ClassifierDims& dims, std::span<const LabeledExample> train,
                                   std::span<const LabeledExample> heldout, const UndersampleConfig& config,
                                   std::uint64_t init_seed, const std::function<void(const UndersampleTrial&)>& on_trial) {
  const auto held = class_counts(heldout);
  if (held[0] == 0 || held[1] == 0)
    throw std::invalid_argument("undersample_tune: held-out data must contain both classes");
  const auto counts = class_counts(train);
  if (counts[0] == 0 || counts[1] == 0)
    throw std::invalid_argument("undersample_tune: training data must contain both classes");
  if (config.ratios.empty()) throw std::invalid_argument("undersample_tune: no ratios to try");

  const Structure majority = counts[1] > counts[0] ? Structure::Sequence : Structure::Parallel;
  std::vector<std::size_t> major, minor;
  for (std::size_t i = 0; i < train.size(); ++i) (train[i].label == majority ? major : minor).push_back(i);
  // one fixed order, so smaller ratios keep a subset of what larger ones kept
  std::mt19937_64 pick(init_seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(major.begin(), major.end(), pick);

  Classifier base(dims);
  std::mt19937_64 init_rng(init_seed);
  base.init(init_rng);

  UndersampleResult result{1.0, false, majority, {}, base};
  double best_min_precision = -1.0;
  for (double ratio : config.ratios) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("undersample_tune: ratios must lie in (0, 1]");
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(ratio * double(major.size()) - 1e-9)));
    std::vector<std::size_t> chosen(major.begin(), major.begin() + static_cast<std::ptrdiff_t>(keep));
    chosen.insert(chosen.end(), minor.begin(), minor.end());
    std::sort(chosen.begin(), chosen.end());
    std::vector<LabeledExample> subset;
    subset.reserve(chosen.size());
    for (std::size_t i : chosen) subset.push_back(train[i]);

    Classifier model = base;
    train_classifier(model, subset, {}, config.train);
    UndersampleTrial trial;
    trial.ratio = ratio;
    trial.majority_kept = keep;
    trial.minority = minor.size();
    trial.heldout = evaluate_classifier(model, heldout);
    trial.qualifies = trial.heldout.parallel.precision > config.target_precision &&
                      trial.heldout.sequence.precision > config.target_precision;
    if (on_trial) on_trial(trial);
    result.trials.push_back(trial);
    const double min_precision = std::min(trial.heldout.parallel.precision, trial.heldout.sequence.precision);
    if (trial.qualifies) {
      result.ratio = ratio;
      result.qualified = true;
      result.model = std::move(model);
      return result;
    }
    if (min_precision > best_min_precision) {
      best_min_precision = min_precision;
      result.ratio = ratio;
      result.model = std::move(model);
    }
  }
  return result;
}

}  // namespace b3s
