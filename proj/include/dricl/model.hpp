#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dricl/corpus.hpp"
#include "dricl/mask.hpp"

namespace dricl {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelDims {
  int vocab = 64;
  int width = 64;
  int layers = 2;
  int heads = 2;
  int max_positions = 2048;
  int ff_width = 256;

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

template <typename Scalar>
struct LayerParams {
  Mat<Scalar> ln1_gain, ln1_bias;  // 1 x d
  Mat<Scalar> wq, wk, wv, wo;      // d x d
  Mat<Scalar> ln2_gain, ln2_bias;  // 1 x d
  Mat<Scalar> w1, b1;              // d x f, 1 x f
  Mat<Scalar> w2, b2;              // f x d, 1 x d
};

/// Pre-norm decoder-only transformer with learned positional embeddings.
///
/// Tensor order (used by checkpoints, optimizers and gradient checks):
/// token_embedding, position_embedding, then per layer ln1_gain, ln1_bias,
/// wq, wk, wv, wo, ln2_gain, ln2_bias, w1, b1, w2, b2, then final_gain,
/// final_bias, output.
template <typename Scalar>
struct ModelParams {
  ModelDims dims;
  Mat<Scalar> token_embedding;     // V x d
  Mat<Scalar> position_embedding;  // P x d
  std::vector<LayerParams<Scalar>> layers;
  Mat<Scalar> final_gain, final_bias;  // 1 x d
  Mat<Scalar> output;                  // d x V

  template <typename F>
  void for_each_tensor(F&& f) {
    f("token_embedding", token_embedding);
    f("position_embedding", position_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1_gain", L.ln1_gain);
      f(p + "ln1_bias", L.ln1_bias);
      f(p + "wq", L.wq);
      f(p + "wk", L.wk);
      f(p + "wv", L.wv);
      f(p + "wo", L.wo);
      f(p + "ln2_gain", L.ln2_gain);
      f(p + "ln2_bias", L.ln2_bias);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
    }
    f("final_gain", final_gain);
    f("final_bias", final_bias);
    f("output", output);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const std::string& name, Mat<Scalar>& m) { f(name, static_cast<const Mat<Scalar>&>(m)); });
  }

  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] bool all_finite() const;
};

/// Zero tensors with the shapes implied by dims.
template <typename Scalar>
ModelParams<Scalar> zero_params(const ModelDims& dims);

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelDims& dims, std::uint64_t seed);

/// Element-wise precision conversion.
template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out = zero_params<To>(p.dims);
  std::vector<const Mat<From>*> src;
  p.for_each_tensor([&](const std::string&, const Mat<From>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.for_each_tensor([&](const std::string&, Mat<To>& m) { m = src[i++]->template cast<To>(); });
  return out;
}

/// Flattened view helpers (documented tensor order).
template <typename Scalar>
std::vector<Scalar> flatten(const ModelParams<Scalar>& p);
template <typename Scalar>
void unflatten(ModelParams<Scalar>& p, const std::vector<Scalar>& values);

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LayerCache {
  Mat<Scalar> x_in, xhat1, h1, q, k, v, attn_cat, x_mid, xhat2, h2, u, g;
  std::vector<Scalar> rstd1, rstd2;
  std::vector<Mat<Scalar>> probs;  // per head, n x n
};

/// Activations retained for reverse-mode differentiation.
template <typename Scalar>
struct ForwardPass {
  std::vector<TokenId> tokens;
  MaskSpec mask;
  std::vector<LayerCache<Scalar>> layers;
  Mat<Scalar> x_out, xhat_f, h_f;
  std::vector<Scalar> rstd_f;
  Mat<Scalar> logits;  // n x V
};

/// Head h subtracts slope * (query position - key position) from its
/// attention scores: 2^(-8(h+1)/H).
double alibi_slope(int head, int heads);

/// Throws on out-of-range tokens, a mask of the wrong length, or positions
/// beyond max_positions.
template <typename Scalar>
ForwardPass<Scalar> forward_pass(const ModelParams<Scalar>& params, const std::vector<TokenId>& tokens,
                                 const MaskSpec& mask);

template <typename Scalar>
Mat<Scalar> forward(const ModelParams<Scalar>& params, const std::vector<TokenId>& tokens, const MaskSpec& mask) {
  return forward_pass(params, tokens, mask).logits;
}

/// Exact reverse-mode gradient given dLoss/dlogits. Accumulates into grads.
template <typename Scalar>
void backward(const ModelParams<Scalar>& params, const ForwardPass<Scalar>& pass, const Mat<Scalar>& dlogits,
              ModelParams<Scalar>& grads);

// ---------------------------------------------------------------------------
// Per-demonstration losses
// ---------------------------------------------------------------------------

enum class ContextMode { many_shot, zero_shot };

std::string_view to_string(ContextMode mode);
inline MaskMode mask_mode_for(ContextMode mode) {
  return mode == ContextMode::many_shot ? MaskMode::causal_full : MaskMode::pcw_parallel;
}

/// L[k]: mean NLL (nats) over the label tokens of demonstration k.
struct LossTrace {
  std::size_t sequence_id = 0;
  ContextMode mode = ContextMode::many_shot;
  std::vector<double> losses;

  [[nodiscard]] std::size_t K() const { return losses.size(); }
};

/// Forward pass plus its loss trace, kept together so a loss node built
/// from the trace can be differentiated.
template <typename Scalar>
struct TracedPass {
  ForwardPass<Scalar> pass;
  LossTrace trace;
};

template <typename Scalar>
TracedPass<Scalar> trace_sequence(const ModelParams<Scalar>& params, const PackedSequence& seq, ContextMode mode,
                                  std::size_t sequence_id = 0);

template <typename Scalar>
LossTrace per_demo_nll(const ModelParams<Scalar>& params, const PackedSequence& seq, ContextMode mode,
                       std::size_t sequence_id = 0) {
  return trace_sequence(params, seq, mode, sequence_id).trace;
}

/// A scalar loss that is linear in one sequence's per-demonstration NLLs:
///   value = sum_k many_weights[k] * L_many[k] + sum_k zero_weights[k] * L_zero[k].
/// The weights are plain numbers, so anything folded into them (advantages,
/// the alpha trade-off, 1/K) is a constant under differentiation.
struct LossNode {
  double value = 0.0;
  std::vector<double> many_weights;
  std::vector<double> zero_weights;
};

/// Gradient of node w.r.t. params. Either pass may be null when the node
/// gives it no weight; a node with no non-zero weight throws.
template <typename Scalar>
ModelParams<Scalar> grad(const ModelParams<Scalar>& params, const PackedSequence& seq, const LossNode& node,
                         const TracedPass<Scalar>* many, const TracedPass<Scalar>* zero);

/// Greedy decoding of a label after `prefix` (which must end with SEP_Y).
/// Stops at EOD (or any other special token) or after max_label_len tokens.
/// Argmax ties go to the lowest token id.
template <typename Scalar>
std::vector<TokenId> generate_label(const ModelParams<Scalar>& params, const std::vector<TokenId>& prefix,
                                    std::size_t max_label_len);

/// Greedy decoding restricted to continuations of the candidate labels.
/// Once the decoded tokens form a complete candidate, decoding stops unless
/// a longer candidate extends them and its next token outscores every
/// special token. Argmax ties go to the lowest token id.
template <typename Scalar>
std::vector<TokenId> generate_label_constrained(const ModelParams<Scalar>& params, const std::vector<TokenId>& prefix,
                                                const std::vector<std::vector<TokenId>>& candidates);

template <typename Scalar>
std::string generate_label(const ModelParams<Scalar>& params, const std::vector<TokenId>& prefix,
                           std::size_t max_label_len, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : generate_label(params, prefix, max_label_len)) out.push_back(vocab.symbol_of(id));
  return out;
}

}  // namespace dricl
