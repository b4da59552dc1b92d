#include "b3s/layers.hpp"

#include <stdexcept>

namespace b3s {

namespace {

constexpr const char* kGateNames[4] = {"i", "f", "o", "g"};

}  // namespace

Embedding Embedding::declare(ParameterStore& store, const std::string& name, std::size_t vocab, std::size_t dim) {
  Embedding e;
  e.table_ = &store.add(name, {vocab, dim});
  return e;
}

Embedding Embedding::bind(ParameterStore& store, const std::string& name) {
  Embedding e;
  e.table_ = &store.get(name);
  return e;
}

NodeId Embedding::lookup(Tape& tape, std::span<const std::size_t> ids) const {
  for (std::size_t k = 0; k < ids.size(); ++k)
    if (ids[k] >= vocab_size())
      throw std::out_of_range("embed: id " + std::to_string(ids[k]) + " at position " + std::to_string(k) +
                              " outside vocabulary of " + std::to_string(vocab_size()));
  return tape.gather_rows(tape.param(*table_), ids);
}

Linear Linear::declare(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                       bool with_bias) {
  Linear l;
  l.weight_ = &store.add(prefix + ".w", {out, in});
  if (with_bias) l.bias_ = &store.add(prefix + ".b", {1, out});
  return l;
}

Linear Linear::bind(ParameterStore& store, const std::string& prefix) {
  Linear l;
  l.weight_ = &store.get(prefix + ".w");
  if (store.contains(prefix + ".b")) l.bias_ = &store.get(prefix + ".b");
  return l;
}

NodeId Linear::apply(Tape& tape, NodeId x) const {
  const auto& xv = tape.value(x);
  if (xv.cols() != in_dim())
    throw DimensionError("linear: input " + shape_to_string(xv.dims()) + " vs weight " +
                         shape_to_string(weight_->value.dims()));
  NodeId y = tape.matmul(x, tape.param(*weight_), false, true);
  if (bias_) y = tape.add(y, tape.param(*bias_));
  return y;
}

void Linear::init(std::mt19937_64& rng) const {
  init_uniform(*weight_, rng, kInitScale);
  if (bias_) bias_->value.fill(0.0f);
}

LstmCell LstmCell::declare(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                           std::size_t hidden_dim) {
  LstmCell cell;
  cell.input_dim_ = input_dim;
  cell.hidden_dim_ = hidden_dim;
  for (int g = 0; g < 4; ++g) {
    cell.w_[g] = &store.add(prefix + ".w_" + kGateNames[g], {hidden_dim, input_dim + hidden_dim});
    cell.b_[g] = &store.add(prefix + ".b_" + kGateNames[g], {1, hidden_dim});
  }
  return cell;
}

LstmCell LstmCell::bind(ParameterStore& store, const std::string& prefix) {
  LstmCell cell;
  for (int g = 0; g < 4; ++g) {
    cell.w_[g] = &store.get(prefix + ".w_" + kGateNames[g]);
    cell.b_[g] = &store.get(prefix + ".b_" + kGateNames[g]);
  }
  cell.hidden_dim_ = cell.w_[0]->value.rows();
  cell.input_dim_ = cell.w_[0]->value.cols() - cell.hidden_dim_;
  return cell;
}

LstmCell::Bound LstmCell::bind_tape(Tape& tape) const {
  const NodeId w[4] = {tape.param(*w_[0]), tape.param(*w_[1]), tape.param(*w_[2]), tape.param(*w_[3])};
  const NodeId b[4] = {tape.param(*b_[0]), tape.param(*b_[1]), tape.param(*b_[2]), tape.param(*b_[3])};
  return Bound{tape.concat_rows(w), tape.concat(b), hidden_dim_};
}

LstmState LstmCell::zero_state(Tape& tape) const {
  return LstmState{tape.zeros(1, hidden_dim_), tape.zeros(1, hidden_dim_)};
}

LstmState LstmCell::step(Tape& tape, const Bound& bound, NodeId x, LstmState prev) const {
  const auto& xv = tape.value(x);
  if (xv.rows() != 1 || xv.cols() != input_dim_ || tape.value(prev.h).cols() != hidden_dim_ ||
      tape.value(prev.c).cols() != hidden_dim_)
    throw DimensionError("lstm_step: input " + shape_to_string(xv.dims()) + " / state " +
                         shape_to_string(tape.value(prev.h).dims()) + " vs cell " + std::to_string(input_dim_) +
                         "->" + std::to_string(hidden_dim_));
  const std::size_t h = hidden_dim_;
  NodeId z = tape.concat({x, prev.h});
  NodeId pre = tape.add(tape.matmul(z, bound.weights, false, true), bound.bias);
  NodeId in_gate = tape.sigmoid(tape.slice_cols(pre, 0, h));
  NodeId forget = tape.sigmoid(tape.slice_cols(pre, h, h));
  NodeId out_gate = tape.sigmoid(tape.slice_cols(pre, 2 * h, h));
  NodeId cand = tape.tanh(tape.slice_cols(pre, 3 * h, h));
  NodeId c = tape.add(tape.mul(forget, prev.c), tape.mul(in_gate, cand));
  NodeId hn = tape.mul(out_gate, tape.tanh(c));
  return LstmState{hn, c};
}

void LstmCell::init(std::mt19937_64& rng) const {
  for (int g = 0; g < 4; ++g) {
    init_uniform(*w_[g], rng, kInitScale);
    b_[g]->value.fill(g == 1 ? kForgetBias : 0.0f);
  }
}

std::vector<NodeId> run_lstm(Tape& tape, const LstmCell& cell, std::span<const NodeId> inputs,
                             LstmState* final_state) {
  const auto bound = cell.bind_tape(tape);
  LstmState state = cell.zero_state(tape);
  std::vector<NodeId> hs;
  hs.reserve(inputs.size());
  for (NodeId x : inputs) {
    state = cell.step(tape, bound, x, state);
    hs.push_back(state.h);
  }
  if (final_state) *final_state = state;
  return hs;
}

BiLstmEncoder BiLstmEncoder::declare(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                                     std::size_t hidden_dim) {
  BiLstmEncoder enc;
  enc.forward_ = LstmCell::declare(store, prefix + ".fw", input_dim, hidden_dim);
  enc.backward_ = LstmCell::declare(store, prefix + ".bw", input_dim, hidden_dim);
  return enc;
}

BiLstmEncoder BiLstmEncoder::bind(ParameterStore& store, const std::string& prefix) {
  BiLstmEncoder enc;
  enc.forward_ = LstmCell::bind(store, prefix + ".fw");
  enc.backward_ = LstmCell::bind(store, prefix + ".bw");
  if (enc.forward_.input_dim() != enc.backward_.input_dim() ||
      enc.forward_.hidden_dim() != enc.backward_.hidden_dim())
    throw DimensionError("bilstm: forward and backward cells disagree on dims");
  return enc;
}

EncoderStates BiLstmEncoder::encode(Tape& tape, std::span<const NodeId> inputs) const {
  if (inputs.empty()) throw std::invalid_argument("bilstm_encode: empty input sequence");
  const std::size_t n = inputs.size();
  EncoderStates out;
  out.length = n;
  out.forward = run_lstm(tape, forward_, inputs, &out.forward_final);

  std::vector<NodeId> reversed(inputs.rbegin(), inputs.rend());
  auto back = run_lstm(tape, backward_, reversed, &out.backward_final);
  out.backward.assign(back.rbegin(), back.rend());

  std::vector<NodeId> rows;
  rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) rows.push_back(tape.concat({out.forward[i], out.backward[i]}));
  out.states = tape.concat_rows(rows);
  return out;
}

}  // namespace b3s
