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

#include "blockseq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blockseq/errors.hpp"

namespace blockseq::nn {

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::identity: return x;
    case Activation::tanh: return ops::tanh(x);
    case Activation::relu: return ops::relu(x);
    case Activation::gelu: return ops::gelu(x);
    case Activation::sigmoid: return ops::sigmoid(x);
    case Activation::softplus: return ops::softplus(x);
  }
  return x;
}

Var dropout(Var x, double rate, bool training, RandomStream* rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  if (rng == nullptr) throw ConfigError("training-mode dropout needs a random stream");
  Tensor mask(x.value().shape());
  const double keep = 1.0 - rate;
  for (double& m : mask.values()) m = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  return ops::dropout_with_mask(x, mask);
}

Linear Linear::create(ParameterStore& store, std::string name, std::size_t in, std::size_t out, RandomStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(name + ".w", rng.uniform_matrix(in, out, -bound, bound));
  store.add(name + ".b", rng.uniform_matrix(1, out, -bound, bound));
  return Linear{std::move(name), in, out};
}

Var Linear::operator()(const Params& p, Var x) const {
  return ops::add(ops::matmul(x, p(name + ".w")), p(name + ".b"));
}

Mlp Mlp::create(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths,
                Activation hidden, Activation output, RandomStream& rng) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  Mlp mlp;
  mlp.hidden = hidden;
  mlp.output = output;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    mlp.layers.push_back(Linear::create(store, name + ".l" + std::to_string(i), widths[i], widths[i + 1], rng));
  }
  return mlp;
}

Var Mlp::operator()(const Params& p, Var x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](p, x);
    x = activate(x, i + 1 < layers.size() ? hidden : output);
  }
  return x;
}

GruCell GruCell::create(ParameterStore& store, std::string name, std::size_t input, std::size_t hidden,
                        RandomStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  store.add(name + ".wx", rng.uniform_matrix(input, 3 * hidden, -bound, bound));
  store.add(name + ".uzr", rng.uniform_matrix(hidden, 2 * hidden, -bound, bound));
  store.add(name + ".uc", rng.uniform_matrix(hidden, hidden, -bound, bound));
  store.add(name + ".b", rng.uniform_matrix(1, 3 * hidden, -bound, bound));
  return GruCell{std::move(name), input, hidden};
}

Var GruCell::project(const Params& p, Var x) const {
  if (x.cols() != input) {
    throw ShapeError("gru_step: expected input width " + std::to_string(input) + ", got " + shape_string(x.shape()));
  }
  return ops::add(ops::matmul(x, p(name + ".wx")), p(name + ".b"));
}

Var GruCell::step(const Params& p, Var x, Var h) const { return step_projected(p, project(p, x), h); }

Var GruCell::step_projected(const Params& p, Var xg, Var h) const {
  if (xg.cols() != 3 * hidden || h.cols() != hidden || xg.rows() != h.rows()) {
    throw ShapeError("gru_step: expected hidden width " + std::to_string(hidden) + ", got " + shape_string(xg.shape()) +
                     " and " + shape_string(h.shape()));
  }
  const std::size_t H = hidden;
  Var hg = ops::matmul(h, p(name + ".uzr"));
  Var z = ops::sigmoid(ops::add(ops::slice_cols(xg, 0, H), ops::slice_cols(hg, 0, H)));
  Var r = ops::sigmoid(ops::add(ops::slice_cols(xg, H, H), ops::slice_cols(hg, H, H)));
  Var c = ops::tanh(ops::add(ops::slice_cols(xg, 2 * H, H), ops::matmul(ops::mul(r, h), p(name + ".uc"))));
  return ops::add(h, ops::mul(z, ops::sub(c, h)));
}

LstmCell LstmCell::create(ParameterStore& store, std::string name, std::size_t input, std::size_t hidden,
                          RandomStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  store.add(name + ".wx", rng.uniform_matrix(input, 4 * hidden, -bound, bound));
  store.add(name + ".wh", rng.uniform_matrix(hidden, 4 * hidden, -bound, bound));
  store.add(name + ".b", rng.uniform_matrix(1, 4 * hidden, -bound, bound));
  return LstmCell{std::move(name), input, hidden};
}

Var LstmCell::project(const Params& p, Var x) const {
  if (x.cols() != input) throw ShapeError("lstm_step: dimension mismatch");
  return ops::add(ops::matmul(x, p(name + ".wx")), p(name + ".b"));
}

LstmState LstmCell::step(const Params& p, Var x, LstmState state) const {
  return step_projected(p, project(p, x), state);
}

LstmState LstmCell::step_projected(const Params& p, Var xg, LstmState state) const {
  if (xg.cols() != 4 * hidden || state.h.cols() != hidden) throw ShapeError("lstm_step: dimension mismatch");
  const std::size_t H = hidden;
  Var g = ops::add(xg, ops::matmul(state.h, p(name + ".wh")));
  Var i = ops::sigmoid(ops::slice_cols(g, 0, H));
  Var f = ops::sigmoid(ops::slice_cols(g, H, H));
  Var cand = ops::tanh(ops::slice_cols(g, 2 * H, H));
  Var o = ops::sigmoid(ops::slice_cols(g, 3 * H, H));
  Var c = ops::add(ops::mul(f, state.c), ops::mul(i, cand));
  return LstmState{ops::mul(o, ops::tanh(c)), c};
}

AttentionLayer AttentionLayer::create(ParameterStore& store, std::string name, std::size_t d, std::size_t heads,
                                      std::size_t ffn_hidden, double dropout_rate, RandomStream& rng) {
  if (heads == 0 || d % heads != 0) throw ConfigError("attention width must be a multiple of the head count");
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* m : {".q", ".k", ".v", ".o"}) store.add(name + m, rng.uniform_matrix(d, d, -bound, bound));
  Linear::create(store, name + ".ffn1", d, ffn_hidden, rng);
  Linear::create(store, name + ".ffn2", ffn_hidden, d, rng);
  for (const char* ln : {".ln1", ".ln2"}) {
    store.add(name + ln + ".gamma", Tensor::matrix(1, d, 1.0));
    store.add(name + ln + ".beta", Tensor::matrix(1, d, 0.0));
  }
  return AttentionLayer{std::move(name), d, heads, ffn_hidden, dropout_rate, true};
}

AttentionOutput AttentionLayer::forward(const Params& p, Var block, bool training, RandomStream* rng) const {
  if (block.value().rank() != 2 || block.cols() != d) {
    throw ShapeError("attention expects a block with " + std::to_string(d) + " columns, got " +
                     shape_string(block.shape()));
  }
  const std::size_t L = block.rows();
  if (L == 0) throw ShapeError("attention over an empty block");
  const std::size_t hd = head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  Var q = ops::matmul(block, p(name + ".q"));
  Var k = ops::matmul(block, p(name + ".k"));
  Var v = ops::matmul(block, p(name + ".v"));

  AttentionOutput out;
  out.contributions.assign(L, 0.0);
  std::vector<Var> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t l = 0; l < heads; ++l) {
    Var ql = ops::slice_cols(q, l * hd, hd);
    Var kl = ops::slice_cols(k, l * hd, hd);
    Var vl = ops::slice_cols(v, l * hd, hd);
    Var w = ops::softmax_rows(ops::scale(ops::matmul(ql, kl, /*transpose_b=*/true), inv_sqrt));
    const Tensor& wv = w.value();
    for (std::size_t r = 0; r < L; ++r)
      for (std::size_t c = 0; c < L; ++c) out.contributions[c] += wv(r, c) / static_cast<double>(heads);
    out.weights.push_back(wv);
    head_outputs.push_back(ops::matmul(w, vl));
  }
  Var mha = ops::matmul(ops::concat_cols(head_outputs), p(name + ".o"));
  if (!residual_stack) {
    out.y = mha;
    return out;
  }
  Var u = ops::layer_norm(ops::add(dropout(mha, dropout_rate, training, rng), block), p(name + ".ln1.gamma"),
                          p(name + ".ln1.beta"));
  Var g = ops::gelu(ops::add(ops::matmul(u, p(name + ".ffn1.w")), p(name + ".ffn1.b")));
  g = ops::add(ops::matmul(g, p(name + ".ffn2.w")), p(name + ".ffn2.b"));
  out.y = ops::layer_norm(ops::add(dropout(g, dropout_rate, training, rng), u), p(name + ".ln2.gamma"),
                          p(name + ".ln2.beta"));
  return out;
}

AttentionOutput stack_forward(const Params& p, Var block, std::span<const AttentionLayer> layers, bool training,
                              RandomStream* rng) {
  if (layers.empty()) throw ConfigError("attention stack needs at least one layer");
  AttentionOutput out;
  Var x = block;
  for (const AttentionLayer& layer : layers) {
    out = layer.forward(p, x, training, rng);
    x = out.y;
  }
  return out;
}

Compression parse_compression(const std::string& s) {
  if (s == "topk") return Compression::topk;
  if (s == "pooling") return Compression::pooling;
  if (s == "topk_average" || s == "topk-average") return Compression::topk_average;
  if (s == "linear") return Compression::linear;
  if (s == "random") return Compression::random;
  throw ConfigError("unknown compression: " + s);
}

std::string to_string(Compression c) {
  switch (c) {
    case Compression::topk: return "topk";
    case Compression::pooling: return "pooling";
    case Compression::topk_average: return "topk_average";
    case Compression::linear: return "linear";
    case Compression::random: return "random";
  }
  return "?";
}

std::vector<std::size_t> topk_positions(std::span<const double> contributions, std::size_t k) {
  const std::size_t L = contributions.size();
  if (k == 0 || k > L) {
    throw BoundsError("top-k selection needs 1 <= k <= L (k=" + std::to_string(k) + ", L=" + std::to_string(L) + ")");
  }
  std::vector<std::size_t> order(L);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return contributions[a] > contributions[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

Compressed compress_topk(const AttentionOutput& out, std::size_t k) {
  Compressed c;
  c.positions = topk_positions(out.contributions, k);
  Var rows = ops::gather_rows(out.y, c.positions);
  c.vector = ops::reshape(rows, 1, rows.value().size());
  return c;
}

std::size_t compressed_dim(Compression variant, std::size_t k, std::size_t d) {
  switch (variant) {
    case Compression::pooling:
    case Compression::topk_average: return d;
    default: return k * d;
  }
}

Compressed compress_variant(const Params& p, const AttentionOutput& out, Compression variant, std::size_t k,
                            const std::string& linear_map, RandomStream* rng) {
  const std::size_t L = out.y.rows();
  const std::size_t d = out.y.cols();
  switch (variant) {
    case Compression::topk: return compress_topk(out, k);
    case Compression::pooling: {
      Compressed c;
      c.vector = ops::col_sum(out.y);
      c.positions.resize(L);
      std::iota(c.positions.begin(), c.positions.end(), std::size_t{0});
      return c;
    }
    case Compression::topk_average: {
      Compressed c;
      c.positions = topk_positions(out.contributions, k);
      double total = 0.0;
      for (std::size_t pos : c.positions) total += out.contributions[pos];
      Tensor w = Tensor::matrix(1, k);
      for (std::size_t i = 0; i < k; ++i) w[i] = out.contributions[c.positions[i]] / total;
      c.vector = ops::matmul(out.y.tape().constant(std::move(w)), ops::gather_rows(out.y, c.positions));
      return c;
    }
    case Compression::linear: {
      if ((k * d) % L != 0) {
        throw ConfigError("linear compression needs k*d divisible by L (k=" + std::to_string(k) +
                          ", d=" + std::to_string(d) + ", L=" + std::to_string(L) + ")");
      }
      Var m = p(linear_map);
      if (m.rows() != k * d / L || m.cols() != d) throw ShapeError("linear compression map has the wrong shape");
      Compressed c;
      Var mapped = ops::matmul(out.y, m, /*transpose_b=*/true);
      c.vector = ops::reshape(mapped, 1, mapped.value().size());
      c.positions.resize(L);
      std::iota(c.positions.begin(), c.positions.end(), std::size_t{0});
      return c;
    }
    case Compression::random: {
      if (rng == nullptr) throw ConfigError("random compression needs a random stream");
      if (k == 0 || k > L) throw BoundsError("random compression needs 1 <= k <= L");
      Compressed c;
      c.positions = rng->choose_sorted(L, k);
      Var rows = ops::gather_rows(out.y, c.positions);
      c.vector = ops::reshape(rows, 1, rows.value().size());
      return c;
    }
  }
  throw ConfigError("unhandled compression");
}

Var fnn_block_encode(const Params& p, const Mlp& fnn, Var block) {
  if (block.cols() != fnn.in()) throw ShapeError("fnn_block_encode: block width does not match the FNN input");
  Var y = fnn(p, block);
  return ops::reshape(y, 1, y.value().size());
}

}  // namespace blockseq::nn
