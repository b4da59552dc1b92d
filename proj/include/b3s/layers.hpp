#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "b3s/parameter.hpp"
#include "b3s/tape.hpp"

namespace b3s {

/// Uniform init scale for weight matrices; biases start at zero.
inline constexpr float kInitScale = 0.1f;
inline constexpr float kForgetBias = 1.0f;

class Embedding {
 public:
  Embedding() = default;
  static Embedding declare(ParameterStore& store, const std::string& name, std::size_t vocab, std::size_t dim);
  static Embedding bind(ParameterStore& store, const std::string& name);

  /// Rows of the table, one per id (ids.size() x dim).
  NodeId lookup(Tape& tape, std::span<const std::size_t> ids) const;
  NodeId lookup(Tape& tape, std::size_t id) const { return lookup(tape, std::span<const std::size_t>(&id, 1)); }

  void init(std::mt19937_64& rng) const { init_uniform(*table_, rng, kInitScale); }
  std::size_t vocab_size() const { return table_->value.rows(); }
  std::size_t dim() const { return table_->value.cols(); }
  Parameter& table() const { return *table_; }

 private:
  Parameter* table_ = nullptr;
};

/// y = x W^T + b, with W stored out x in and x a row (or stack of rows).
class Linear {
 public:
  Linear() = default;
  static Linear declare(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                        bool with_bias = true);
  static Linear bind(ParameterStore& store, const std::string& prefix);

  NodeId apply(Tape& tape, NodeId x) const;
  void init(std::mt19937_64& rng) const;

  std::size_t in_dim() const { return weight_->value.cols(); }
  std::size_t out_dim() const { return weight_->value.rows(); }
  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

struct LstmState {
  NodeId h;
  NodeId c;
};

/// Single-layer LSTM cell. Gate matrices are hidden x (input + hidden) and
/// act on [x_t, h_prev].
class LstmCell {
 public:
  LstmCell() = default;
  static LstmCell declare(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                          std::size_t hidden_dim);
  static LstmCell bind(ParameterStore& store, const std::string& prefix);

  /// Gate weights stacked once per tape, reused by every step on that tape.
  struct Bound {
    NodeId weights;  // 4h x (in + h), gate order i, f, o, g
    NodeId bias;     // 1 x 4h
    std::size_t hidden = 0;
  };
  Bound bind_tape(Tape& tape) const;

  LstmState step(Tape& tape, const Bound& bound, NodeId x, LstmState prev) const;
  LstmState step(Tape& tape, NodeId x, LstmState prev) const { return step(tape, bind_tape(tape), x, prev); }
  LstmState zero_state(Tape& tape) const;

  void init(std::mt19937_64& rng) const;
  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

  Parameter& gate_weight(std::size_t gate) const { return *w_[gate]; }
  Parameter& gate_bias(std::size_t gate) const { return *b_[gate]; }

 private:
  std::size_t input_dim_ = 0;
  std::size_t hidden_dim_ = 0;
  Parameter* w_[4] = {};
  Parameter* b_[4] = {};
};

struct EncoderStates {
  NodeId states;  // n x 2h, row i = [forward_i, backward_i]
  std::vector<NodeId> forward;   // h of the forward pass per position
  std::vector<NodeId> backward;  // h of the backward pass per position
  LstmState forward_final;       // after position n
  LstmState backward_final;      // after position 1
  std::size_t length = 0;
};

class BiLstmEncoder {
 public:
  BiLstmEncoder() = default;
  static BiLstmEncoder declare(ParameterStore& store, const std::string& prefix, std::size_t input_dim,
                               std::size_t hidden_dim);
  static BiLstmEncoder bind(ParameterStore& store, const std::string& prefix);

  /// `inputs` holds one 1 x input_dim row per position.
  EncoderStates encode(Tape& tape, std::span<const NodeId> inputs) const;

  void init(std::mt19937_64& rng) const {
    forward_.init(rng);
    backward_.init(rng);
  }
  const LstmCell& forward_cell() const { return forward_; }
  const LstmCell& backward_cell() const { return backward_; }
  std::size_t hidden_dim() const { return forward_.hidden_dim(); }

 private:
  LstmCell forward_;
  LstmCell backward_;
};

/// Runs `cell` left to right over `inputs` and returns the h of every step.
std::vector<NodeId> run_lstm(Tape& tape, const LstmCell& cell, std::span<const NodeId> inputs,
                             LstmState* final_state = nullptr);

}  // namespace b3s
