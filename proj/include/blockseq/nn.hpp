// Copyright 2026 The blockseq Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Network building blocks. Layers are light descriptors holding parameter
// names; the tensors themselves live in a ParameterStore and are resolved
// through Params for each forward pass. Row-vector convention: y = x W + b.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "blockseq/autodiff.hpp"
#include "blockseq/random.hpp"

namespace blockseq::nn {

enum class Activation { identity, tanh, relu, gelu, sigmoid, softplus };

Var activate(Var x, Activation act);

/// Inverted dropout. Identity unless `training`; then needs `rng`.
Var dropout(Var x, double rate, bool training, RandomStream* rng);

struct Linear {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;

  /// Weight and bias drawn uniformly from [-1/sqrt(in), 1/sqrt(in)].
  static Linear create(ParameterStore& store, std::string name, std::size_t in, std::size_t out, RandomStream& rng);
  Var operator()(const Params& p, Var x) const;
};

struct Mlp {
  std::vector<Linear> layers;
  Activation hidden = Activation::tanh;
  Activation output = Activation::identity;

  /// `widths` = {in, hidden..., out}.
  static Mlp create(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths,
                    Activation hidden, Activation output, RandomStream& rng);
  Var operator()(const Params& p, Var x) const;
  std::size_t in() const { return layers.front().in; }
  std::size_t out() const { return layers.back().out; }
};

/// GRU: h' = (1 - z) * h + z * tanh(x Wc + (r * h) Uc + bc) with sigmoid
/// update gate z and reset gate r. Parameters: `<name>.wx` (in x 3H, columns
/// [z | r | c]), `<name>.uzr` (H x 2H), `<name>.uc` (H x H), `<name>.b` (1 x 3H).
struct GruCell {
  std::string name;
  std::size_t input = 0;
  std::size_t hidden = 0;

  static GruCell create(ParameterStore& store, std::string name, std::size_t input, std::size_t hidden,
                        RandomStream& rng);
  /// x is B x input, h is B x hidden.
  Var step(const Params& p, Var x, Var h) const;
  /// x Wx + b for any number of rows; lets a caller batch the input
  /// projection over a whole sequence.
  Var project(const Params& p, Var x) const;
  Var step_projected(const Params& p, Var xg, Var h) const;
};

struct LstmState {
  Var h;
  Var c;
};

/// Standard LSTM with gate columns [i | f | g | o].
struct LstmCell {
  std::string name;
  std::size_t input = 0;
  std::size_t hidden = 0;

  static LstmCell create(ParameterStore& store, std::string name, std::size_t input, std::size_t hidden,
                         RandomStream& rng);
  LstmState step(const Params& p, Var x, LstmState state) const;
  Var project(const Params& p, Var x) const;
  LstmState step_projected(const Params& p, Var xg, LstmState state) const;
};

struct AttentionOutput {
  Var y;                             ///< L x d transformed block
  std::vector<Tensor> weights;       ///< one L x L row-stochastic matrix per head
  std::vector<double> contributions; ///< column sums of the head-averaged weights
};

/// One self-attention block: multi-head attention without positional
/// encoding, then U = LN(drop(MHA(B)) + B), Y = LN(drop(g(U)) + U) with a
/// GELU feed-forward g. Q/K/V/O transforms are d x d without bias.
struct AttentionLayer {
  std::string name;
  std::size_t d = 0;
  std::size_t heads = 1;
  std::size_t ffn_hidden = 0;
  double dropout_rate = 0.1;
  /// When false the residual/norm/feed-forward stack is bypassed: Y = MHA(B).
  bool residual_stack = true;

  static AttentionLayer create(ParameterStore& store, std::string name, std::size_t d, std::size_t heads,
                               std::size_t ffn_hidden, double dropout_rate, RandomStream& rng);
  std::size_t head_dim() const { return d / heads; }
  AttentionOutput forward(const Params& p, Var block, bool training, RandomStream* rng) const;
};

inline AttentionOutput mha_forward(const Params& p, Var block, const AttentionLayer& layer, bool training,
                                   RandomStream* rng) {
  return layer.forward(p, block, training, rng);
}

/// Feeds each layer's output into the next; weights and contributions come
/// from the last layer.
AttentionOutput stack_forward(const Params& p, Var block, std::span<const AttentionLayer> layers, bool training,
                              RandomStream* rng);

enum class Compression { topk, pooling, topk_average, linear, random };

Compression parse_compression(const std::string& s);
std::string to_string(Compression c);

struct Compressed {
  Var vector;                         ///< 1 x (compressed dim)
  std::vector<std::size_t> positions; ///< selected rows, ascending
};

/// The k largest contributions, ties to the lower index, returned ascending.
std::vector<std::size_t> topk_positions(std::span<const double> contributions, std::size_t k);

/// Rows of Y at the top-k positions concatenated in temporal order. The
/// selection itself carries no gradient.
Compressed compress_topk(const AttentionOutput& out, std::size_t k);

/// Alternative compressions. `linear_map` names a (k d / L) x d parameter,
/// needed only for Compression::linear; `rng` only for Compression::random.
Compressed compress_variant(const Params& p, const AttentionOutput& out, Compression variant, std::size_t k,
                            const std::string& linear_map, RandomStream* rng);

/// Output width of a compression for block length L, width d.
std::size_t compressed_dim(Compression variant, std::size_t k, std::size_t d);

/// Applies `fnn` to every row of the block and concatenates the results in
/// temporal order into a 1 x (L * out) row.
Var fnn_block_encode(const Params& p, const Mlp& fnn, Var block);

}  // namespace blockseq::nn
