#include "b3s/summarizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "b3s/optim.hpp"

namespace b3s {

// ---------------------------------------------------------------------------
// Vocabulary mapping

ExtendedVocab::ExtendedVocab(const Vocabulary& base, const Tokens& source)
    : base_(&base), base_size_(base.size()) {
  for (const auto& tok : source) {
    if (base.contains(tok)) continue;
    if (std::find(doc_oovs_.begin(), doc_oovs_.end(), tok) == doc_oovs_.end()) doc_oovs_.push_back(tok);
  }
}

std::size_t ExtendedVocab::id(const std::string& token) const {
  if (base_ && base_->contains(token)) return base_->id(token);
  auto it = std::find(doc_oovs_.begin(), doc_oovs_.end(), token);
  if (it != doc_oovs_.end()) return base_size_ + static_cast<std::size_t>(it - doc_oovs_.begin());
  return Vocabulary::kUnk;
}

std::string ExtendedVocab::token(std::size_t id) const {
  if (id < base_size_) return base_->token(id);
  if (id - base_size_ < doc_oovs_.size()) return doc_oovs_[id - base_size_];
  throw std::out_of_range("extended vocabulary id " + std::to_string(id) + " out of range");
}

PreparedExample prepare_source(const Tokens& article, const Vocabulary& vocab) {
  if (article.empty()) throw std::invalid_argument("prepare_source: empty article");
  PreparedExample ex;
  ex.ext = ExtendedVocab(vocab, article);
  ex.source = vocab.encode(article);
  ex.source_ext.reserve(article.size());
  for (const auto& t : article) ex.source_ext.push_back(ex.ext.id(t));
  return ex;
}

PreparedExample prepare_example(const NewsPair& pair, const Vocabulary& vocab) {
  PreparedExample ex = prepare_source(pair.article, vocab);
  ex.id = pair.id;
  for (std::size_t k = 0; k < 3; ++k) {
    for (const auto& t : pair.summary[k]) ex.target.push_back(ex.ext.id(t));
    ex.target.push_back(k < 2 ? Vocabulary::kSentenceBreak : Vocabulary::kStop);
  }
  ex.decoder_input.push_back(Vocabulary::kStart);
  for (std::size_t t = 0; t + 1 < ex.target.size(); ++t)
    ex.decoder_input.push_back(ex.ext.is_oov(ex.target[t]) ? Vocabulary::kUnk : ex.target[t]);
  return ex;
}

std::vector<PreparedExample> prepare_examples(const std::vector<NewsPair>& pairs, const Vocabulary& vocab) {
  std::vector<PreparedExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(prepare_example(p, vocab));
  return out;
}

// ---------------------------------------------------------------------------
// Model

Summarizer::Summarizer(const SummarizerDims& dims) : dims_(dims) {
  if (dims.vocab <= Vocabulary::kNumSpecials || dims.emb == 0 || dims.hidden == 0)
    throw std::invalid_argument("summarizer dims must be positive and the vocabulary must exceed the specials");
  const std::size_t h = dims.hidden, a = dims.attention();
  store_.add("embedding", {dims.vocab, dims.emb});
  BiLstmEncoder::declare(store_, "encoder", dims.emb, h);
  LstmCell::declare(store_, "decoder", dims.emb, h);
  Linear::declare(store_, "bridge.h", 2 * h, h);
  Linear::declare(store_, "bridge.c", 2 * h, h);
  store_.add("attention.v", {1, a});
  store_.add("attention.W_h", {a, 2 * h});
  store_.add("attention.W_s", {a, h});
  store_.add("attention.b_a", {1, a});
  store_.add("attention.w_c", {1, a});
  Linear::declare(store_, "projection.V", 3 * h, h);
  Linear::declare(store_, "projection.V_out", h, dims.vocab);
  store_.add("pointer.w_hstar", {1, 2 * h});
  store_.add("pointer.w_s", {1, h});
  store_.add("pointer.w_x", {1, dims.emb});
  store_.add("pointer.b_g", {1, 1});
  bind();
}

Summarizer::Summarizer(ParameterStore store) : store_(std::move(store)) {
  bind();
  dims_.vocab = embedding_.vocab_size();
  dims_.emb = embedding_.dim();
  dims_.hidden = decoder_.hidden_dim();
  if (encoder_.hidden_dim() != dims_.hidden || decoder_.input_dim() != dims_.emb ||
      proj_vp_.out_dim() != dims_.vocab || att_wh_->value.rows() != dims_.attention())
    throw DimensionError("summarizer checkpoint has inconsistent tensor shapes");
}

Summarizer::Summarizer(const Summarizer& other) : dims_(other.dims_), store_(other.store_) { bind(); }

Summarizer& Summarizer::operator=(const Summarizer& other) {
  if (this != &other) {
    dims_ = other.dims_;
    store_ = other.store_;
    bind();
  }
  return *this;
}

Summarizer::Summarizer(Summarizer&& other) noexcept = default;
Summarizer& Summarizer::operator=(Summarizer&& other) noexcept = default;

void Summarizer::bind() {
  embedding_ = Embedding::bind(store_, "embedding");
  encoder_ = BiLstmEncoder::bind(store_, "encoder");
  decoder_ = LstmCell::bind(store_, "decoder");
  bridge_h_ = Linear::bind(store_, "bridge.h");
  bridge_c_ = Linear::bind(store_, "bridge.c");
  att_v_ = &store_.get("attention.v");
  att_wh_ = &store_.get("attention.W_h");
  att_ws_ = &store_.get("attention.W_s");
  att_b_ = &store_.get("attention.b_a");
  att_wc_ = &store_.get("attention.w_c");
  proj_v_ = Linear::bind(store_, "projection.V");
  proj_vp_ = Linear::bind(store_, "projection.V_out");
  ptr_wh_ = &store_.get("pointer.w_hstar");
  ptr_ws_ = &store_.get("pointer.w_s");
  ptr_wx_ = &store_.get("pointer.w_x");
  ptr_b_ = &store_.get("pointer.b_g");
}

void Summarizer::init(std::mt19937_64& rng) {
  embedding_.init(rng);
  encoder_.init(rng);
  decoder_.init(rng);
  bridge_h_.init(rng);
  bridge_c_.init(rng);
  for (Parameter* p : {att_v_, att_wh_, att_ws_, att_wc_}) init_uniform(*p, rng, kInitScale);
  att_b_->value.fill(0.0f);
  proj_v_.init(rng);
  proj_vp_.init(rng);
  for (Parameter* p : {ptr_wh_, ptr_ws_, ptr_wx_}) init_uniform(*p, rng, kInitScale);
  ptr_b_->value.fill(0.0f);
}

EncodedSource Summarizer::encode(Tape& tape, std::span<const std::size_t> source,
                                 std::span<const std::size_t> source_ext, std::size_t ext_size) const {
  if (source.empty()) throw std::invalid_argument("encode: empty source");
  if (source.size() != source_ext.size())
    throw DimensionError("encode: source and extended ids differ in length");
  EncodedSource src;
  std::vector<NodeId> rows;
  rows.reserve(source.size());
  for (std::size_t id : source) rows.push_back(embedding_.lookup(tape, id));
  src.encoder = encoder_.encode(tape, rows);
  src.features = tape.matmul(src.encoder.states, tape.param(*att_wh_), false, true);
  src.source_ext.assign(source_ext.begin(), source_ext.end());
  src.ext_size = ext_size;
  const auto& fw = src.encoder.forward_final;
  const auto& bw = src.encoder.backward_final;
  src.initial.h = tape.tanh(bridge_h_.apply(tape, tape.concat({fw.h, bw.h})));
  src.initial.c = tape.tanh(bridge_c_.apply(tape, tape.concat({fw.c, bw.c})));
  return src;
}

Attention Summarizer::attend(Tape& tape, const EncodedSource& src, NodeId decoder_h, NodeId coverage,
                             bool use_coverage) const {
  const std::size_t n = src.encoder.length;
  if (tape.value(coverage).size() != n)
    throw DimensionError("attend: coverage length " + std::to_string(tape.value(coverage).size()) +
                         " vs source length " + std::to_string(n));
  NodeId pre = tape.add(src.features, tape.matmul(decoder_h, tape.param(*att_ws_), false, true));
  if (use_coverage) pre = tape.add(pre, tape.matmul(coverage, tape.param(*att_wc_), true, false));
  pre = tape.add(pre, tape.param(*att_b_));
  Attention out;
  out.scores = tape.matmul(tape.param(*att_v_), tape.tanh(pre), false, true);
  out.weights = tape.softmax(out.scores);
  out.context = tape.matmul(out.weights, src.encoder.states);
  return out;
}

NodeId Summarizer::vocab_distribution(Tape& tape, NodeId decoder_h, NodeId context) const {
  NodeId hidden = proj_v_.apply(tape, tape.concat({decoder_h, context}));
  return tape.softmax(proj_vp_.apply(tape, hidden));
}

NodeId Summarizer::generation_prob(Tape& tape, NodeId context, NodeId decoder_h, NodeId input) const {
  NodeId z = tape.matmul(context, tape.param(*ptr_wh_), false, true);
  z = tape.add(z, tape.matmul(decoder_h, tape.param(*ptr_ws_), false, true));
  z = tape.add(z, tape.matmul(input, tape.param(*ptr_wx_), false, true));
  z = tape.add(z, tape.param(*ptr_b_));
  return tape.sigmoid(z);
}

NodeId final_distribution(Tape& tape, NodeId p_gen, NodeId p_vocab, NodeId attention,
                          std::span<const std::size_t> source_ext, std::size_t ext_size) {
  const auto& pv = tape.value(p_vocab);
  if (tape.value(attention).size() != source_ext.size())
    throw DimensionError("final_distribution: attention length " + std::to_string(tape.value(attention).size()) +
                         " vs " + std::to_string(source_ext.size()) + " source ids");
  if (ext_size < pv.cols()) throw DimensionError("final_distribution: extended vocabulary smaller than base");
  NodeId gen = tape.mul(p_vocab, p_gen);
  if (ext_size > pv.cols()) gen = tape.concat({gen, tape.zeros(1, ext_size - pv.cols())});
  NodeId copy = tape.scatter_add(tape.mul(attention, tape.sub(tape.scalar(1.0), p_gen)), source_ext, ext_size);
  return tape.add(gen, copy);
}

NodeId coverage_update(Tape& tape, NodeId coverage, NodeId attention) {
  if (tape.value(coverage).size() != tape.value(attention).size())
    throw DimensionError("coverage_update: length mismatch");
  return tape.add(coverage, attention);
}

NodeId step_loss(Tape& tape, NodeId p_final, std::size_t target, NodeId attention, NodeId coverage, double lambda,
                 bool use_coverage) {
  NodeId nll = tape.neg_log_pick(p_final, target);
  if (!use_coverage) return nll;
  return tape.add(nll, tape.scale(tape.reduce_sum(tape.minimum(attention, coverage)), lambda));
}

DecoderState Summarizer::initial_state(Tape& tape, const EncodedSource& src) const {
  return DecoderState{src.initial, tape.zeros(1, src.encoder.length)};
}

StepOutput Summarizer::step(Tape& tape, const EncodedSource& src, const DecoderState& state,
                            std::size_t prev_token, const StepOptions& options) const {
  const std::size_t input_id = prev_token < dims_.vocab ? prev_token : Vocabulary::kUnk;
  StepOutput out;
  out.input = embedding_.lookup(tape, input_id);
  out.next.lstm = decoder_.step(tape, decoder_.bind_tape(tape), out.input, state.lstm);
  const NodeId s = out.next.lstm.h;
  out.coverage = state.coverage;
  out.attention = attend(tape, src, s, state.coverage, options.use_coverage);
  out.p_vocab = vocab_distribution(tape, s, out.attention.context);
  out.p_gen = options.force_p_gen ? tape.scalar(*options.force_p_gen)
                                  : generation_prob(tape, out.attention.context, s, out.input);
  out.p_final = final_distribution(tape, out.p_gen, out.p_vocab, out.attention.weights, src.source_ext, src.ext_size);
  out.next.coverage = coverage_update(tape, state.coverage, out.attention.weights);
  return out;
}

SequenceLoss Summarizer::sequence_loss(Tape& tape, const PreparedExample& ex, const LossOptions& options) const {
  if (ex.target.empty() || ex.target.size() != ex.decoder_input.size())
    throw std::invalid_argument("sequence_loss: example has no target");
  EncodedSource src = encode(tape, ex.source, ex.source_ext, ex.ext.size());
  DecoderState state = initial_state(tape, src);
  StepOptions so{options.use_coverage, options.force_p_gen};
  std::vector<NodeId> nll, penalty;
  nll.reserve(ex.target.size());
  for (std::size_t t = 0; t < ex.target.size(); ++t) {
    StepOutput out = step(tape, src, state, ex.decoder_input[t], so);
    nll.push_back(tape.neg_log_pick(out.p_final, ex.target[t]));
    if (options.use_coverage)
      penalty.push_back(tape.reduce_sum(tape.minimum(out.attention.weights, out.coverage)));
    state = out.next;
  }
  SequenceLoss loss;
  loss.steps = ex.target.size();
  const double inv_t = 1.0 / static_cast<double>(loss.steps);
  loss.nll_mean = tape.scale(tape.reduce_sum(tape.concat(nll)), inv_t);
  if (options.use_coverage) {
    loss.coverage_mean = tape.scale(tape.reduce_sum(tape.concat(penalty)), inv_t);
  } else {
    loss.coverage_mean = tape.scalar(0.0);
  }
  if (options.use_coverage && options.coverage_penalty)
    loss.loss = tape.add(loss.nll_mean, tape.scale(loss.coverage_mean, options.coverage_lambda));
  else
    loss.loss = loss.nll_mean;
  return loss;
}

std::vector<std::size_t> Summarizer::teacher_forced_argmax(const PreparedExample& ex,
                                                           const StepOptions& options) const {
  Tape tape;
  EncodedSource src = encode(tape, ex.source, ex.source_ext, ex.ext.size());
  DecoderState state = initial_state(tape, src);
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < ex.target.size(); ++t) {
    StepOutput so = step(tape, src, state, ex.decoder_input[t], options);
    const auto p = tape.value(so.p_final).data();
    out.push_back(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()));
    state = so.next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

BatchResult train_batch(Summarizer& model, std::span<const PreparedExample* const> batch, const TrainConfig& config,
                        std::size_t step) {
  if (batch.empty()) throw std::invalid_argument("train_batch: empty batch");
  BatchResult result;
  result.coverage_active = step >= config.coverage_from_step;
  LossOptions options;
  options.use_coverage = result.coverage_active;
  options.coverage_lambda = config.coverage_lambda;

  Tape tape;
  std::vector<NodeId> losses, nlls, covs;
  for (const PreparedExample* ex : batch) {
    SequenceLoss l = model.sequence_loss(tape, *ex, options);
    losses.push_back(l.loss);
    nlls.push_back(l.nll_mean);
    covs.push_back(l.coverage_mean);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  NodeId loss = tape.scale(tape.reduce_sum(tape.concat(losses)), inv_b);
  result.loss = tape.scalar_value(loss);
  result.nll = tape.scalar_value(tape.scale(tape.reduce_sum(tape.concat(nlls)), inv_b));
  result.coverage = tape.scalar_value(tape.scale(tape.reduce_sum(tape.concat(covs)), inv_b));

  auto params = model.params().all();
  tape.backward(loss);
  result.grad_norm = global_grad_norm(params);
  result.clip_factor = clip_global_norm(params, config.clip_norm);
  adagrad_step(params, config.lr);
  return result;
}

double evaluate_loss(const Summarizer& model, std::span<const PreparedExample> examples, const LossOptions& options) {
  if (examples.empty()) throw std::invalid_argument("evaluate_loss: no examples");
  double total = 0.0;
  for (const auto& ex : examples) {
    Tape tape;
    total += tape.scalar_value(model.sequence_loss(tape, ex, options).loss);
  }
  return total / static_cast<double>(examples.size());
}

std::vector<BatchResult> train_steps(Summarizer& model, std::span<const PreparedExample> examples,
                                     const TrainConfig& config, std::size_t num_steps, std::uint64_t seed,
                                     std::size_t step_offset, const std::function<void(const TrainProgress&)>& on_step) {
  if (examples.empty()) throw std::invalid_argument("train_steps: no training examples");
  if (config.batch_size == 0) throw std::invalid_argument("train_steps: batch_size must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::size_t epoch = 0;
  std::vector<BatchResult> history;
  history.reserve(num_steps);
  for (std::size_t s = 0; s < num_steps; ++s) {
    std::vector<const PreparedExample*> batch;
    while (batch.size() < config.batch_size && batch.size() < examples.size()) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        ++epoch;
      }
      batch.push_back(&examples[order[cursor++]]);
    }
    history.push_back(train_batch(model, batch, config, step_offset + s));
    if (on_step) on_step(TrainProgress{step_offset + s + 1, epoch, history.back()});
  }
  return history;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

struct Hypothesis {
  std::vector<std::size_t> tokens;
  double log_prob = 0.0;
  Tensor64 h, c, coverage;
  std::size_t sentences = 0;
  std::vector<StepTrace> trace;
  bool finished = false;

  double score() const { return tokens.empty() ? log_prob : log_prob / static_cast<double>(tokens.size()); }
};

double sum_of(const Tensor64& t) {
  double s = 0;
  for (double v : t.data()) s += v;
  return s;
}

struct Expansion {
  const Hypothesis* parent = nullptr;
  std::size_t token = 0;
  double log_prob = 0.0;
  std::size_t state_index = 0;
};

struct StepValues {
  Tensor64 h, c, coverage, p;
  StepTrace trace;
};

StepValues run_step(const Summarizer& model, Tape& tape, const EncodedSource& src, const Hypothesis& hyp,
                    const DecodeConfig& config) {
  DecoderState state{{tape.input(hyp.h), tape.input(hyp.c)}, tape.input(hyp.coverage)};
  const std::size_t prev = hyp.tokens.empty() ? Vocabulary::kStart : hyp.tokens.back();
  StepOutput out = model.step(tape, src, state, prev, StepOptions{config.use_coverage, config.force_p_gen});
  StepValues v;
  v.h = tape.value(out.next.lstm.h);
  v.c = tape.value(out.next.lstm.c);
  v.coverage = tape.value(out.next.coverage);
  v.p = tape.value(out.p_final);
  if (config.record_trace) {
    const auto& a = tape.value(out.attention.weights);
    v.trace.attention_sum = sum_of(a);
    v.trace.p_vocab_sum = sum_of(tape.value(out.p_vocab));
    v.trace.p_final_sum = sum_of(v.p);
    v.trace.coverage_sum = sum_of(hyp.coverage);
    double pen = 0;
    for (std::size_t i = 0; i < a.size(); ++i) pen += std::min(a[i], hyp.coverage[i]);
    v.trace.coverage_penalty = pen;
    v.trace.p_gen = tape.value(out.p_gen)[0];
  }
  return v;
}

Hypothesis extend(const Hypothesis& parent, std::size_t token, double log_prob, const StepValues& v,
                  const DecodeConfig& config) {
  Hypothesis h;
  h.tokens = parent.tokens;
  h.tokens.push_back(token);
  h.log_prob = log_prob;
  h.h = v.h;
  h.c = v.c;
  h.coverage = v.coverage;
  h.sentences = parent.sentences;
  if (config.record_trace) {
    h.trace = parent.trace;
    h.trace.push_back(v.trace);
  }
  if (token == Vocabulary::kSentenceBreak) ++h.sentences;
  h.finished = token == Vocabulary::kStop || (token == Vocabulary::kSentenceBreak && h.sentences == 3);
  return h;
}

// Indices of the k largest entries, ties to the lower index.
std::vector<std::size_t> top_k(std::span<const double> p, std::size_t k) {
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
  idx.resize(k);
  return idx;
}

double log_p(double p) { return std::log(p + kLogGuard); }

}  // namespace

DecodeResult decode(const Summarizer& model, const PreparedExample& source, const DecodeConfig& config) {
  if (source.source.empty()) throw std::invalid_argument("decode: empty article");
  if (config.beam_size == 0) throw std::invalid_argument("decode: beam size must be at least 1");
  if (config.max_decode_len == 0) throw std::invalid_argument("decode: max_decode_len must be positive");

  Tape tape;
  EncodedSource src = model.encode(tape, source.source, source.source_ext, source.ext.size());
  Hypothesis init;
  init.h = tape.value(src.initial.h);
  init.c = tape.value(src.initial.c);
  init.coverage = Tensor64({1, src.encoder.length});

  Hypothesis best;
  bool complete = false;
  if (config.mode == DecodeMode::Greedy) {
    Hypothesis hyp = init;
    for (std::size_t t = 0; t < config.max_decode_len; ++t) {
      StepValues v = run_step(model, tape, src, hyp, config);
      const std::size_t token = top_k(v.p.data(), 1)[0];
      hyp = extend(hyp, token, hyp.log_prob + log_p(v.p[token]), v, config);
      if (hyp.finished) break;
    }
    complete = hyp.finished;
    best = std::move(hyp);
  } else {
    std::vector<Hypothesis> live = {init};
    std::vector<Hypothesis> results;
    for (std::size_t t = 0; t < config.max_decode_len && results.size() < config.beam_size && !live.empty(); ++t) {
      std::vector<StepValues> values;
      std::vector<Expansion> cands;
      for (const auto& hyp : live) {
        values.push_back(run_step(model, tape, src, hyp, config));
        const auto& p = values.back().p;
        for (std::size_t token : top_k(p.data(), 2 * config.beam_size))
          cands.push_back({&hyp, token, hyp.log_prob + log_p(p[token]), values.size() - 1});
      }
      std::stable_sort(cands.begin(), cands.end(),
                       [](const Expansion& a, const Expansion& b) { return a.log_prob > b.log_prob; });
      std::vector<Hypothesis> next;
      for (const auto& c : cands) {
        Hypothesis h = extend(*c.parent, c.token, c.log_prob, values[c.state_index], config);
        if (h.finished) results.push_back(std::move(h));
        else next.push_back(std::move(h));
        if (next.size() == config.beam_size || results.size() == config.beam_size) break;
      }
      live = std::move(next);
    }
    complete = !results.empty();
    const auto& pool = results.empty() ? live : results;
    best = *std::max_element(pool.begin(), pool.end(),
                             [](const Hypothesis& a, const Hypothesis& b) { return a.score() < b.score(); });
  }

  DecodeResult r;
  r.ext_ids = best.tokens;
  r.log_prob = best.log_prob;
  r.trace = std::move(best.trace);
  r.truncated = !complete;
  std::vector<Tokens> sents;
  Tokens current;
  for (std::size_t id : best.tokens) {
    if (id == Vocabulary::kStop) break;
    if (id == Vocabulary::kSentenceBreak) {
      sents.push_back(std::move(current));
      current.clear();
      if (sents.size() == 3) break;
      continue;
    }
    current.push_back(source.ext.token(id));
  }
  if (sents.size() < 3 && !current.empty()) sents.push_back(std::move(current));
  r.padded = sents.size() < 3;
  for (std::size_t k = 0; k < 3 && k < sents.size(); ++k) r.sentences[k] = std::move(sents[k]);
  return r;
}

}  // namespace b3s
