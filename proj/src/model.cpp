#include "dricl/model.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace dricl {

void ModelDims::validate() const {
  if (vocab < Vocabulary::kNumSpecial + 1) throw Error("vocab size too small");
  if (width < 1 || layers < 1 || heads < 1 || max_positions < 1 || ff_width < 1) {
    throw Error("model dimensions must be positive");
  }
  if (width % heads != 0) throw Error("width must be divisible by heads");
}

double alibi_slope(int head, int heads) { return std::exp2(-8.0 * (head + 1) / heads); }

std::string_view to_string(ContextMode mode) { return mode == ContextMode::many_shot ? "many-shot" : "zero-shot"; }

template <typename Scalar>
std::size_t ModelParams<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, const Mat<Scalar>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename Scalar>
bool ModelParams<Scalar>::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const std::string&, const Mat<Scalar>& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <typename Scalar>
ModelParams<Scalar> zero_params(const ModelDims& dims) {
  dims.validate();
  const int d = dims.width, f = dims.ff_width;
  ModelParams<Scalar> p;
  p.dims = dims;
  p.token_embedding = Mat<Scalar>::Zero(dims.vocab, d);
  p.position_embedding = Mat<Scalar>::Zero(dims.max_positions, d);
  p.layers.resize(static_cast<std::size_t>(dims.layers));
  for (auto& L : p.layers) {
    L.ln1_gain = Mat<Scalar>::Zero(1, d);
    L.ln1_bias = Mat<Scalar>::Zero(1, d);
    L.wq = Mat<Scalar>::Zero(d, d);
    L.wk = Mat<Scalar>::Zero(d, d);
    L.wv = Mat<Scalar>::Zero(d, d);
    L.wo = Mat<Scalar>::Zero(d, d);
    L.ln2_gain = Mat<Scalar>::Zero(1, d);
    L.ln2_bias = Mat<Scalar>::Zero(1, d);
    L.w1 = Mat<Scalar>::Zero(d, f);
    L.b1 = Mat<Scalar>::Zero(1, f);
    L.w2 = Mat<Scalar>::Zero(f, d);
    L.b2 = Mat<Scalar>::Zero(1, d);
  }
  p.final_gain = Mat<Scalar>::Zero(1, d);
  p.final_bias = Mat<Scalar>::Zero(1, d);
  p.output = Mat<Scalar>::Zero(d, dims.vocab);
  return p;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams<Scalar> p = zero_params<Scalar>(dims);
  std::mt19937_64 rng(derive_seed(seed, "init"));
  auto fill = [&](Mat<Scalar>& m, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(normal(rng));
  };
  const double d = dims.width;
  const double residual_scale = 1.0 / std::sqrt(2.0 * dims.layers);
  fill(p.token_embedding, 0.5);
  fill(p.position_embedding, 0.1);
  for (auto& L : p.layers) {
    L.ln1_gain.setOnes();
    L.ln2_gain.setOnes();
    fill(L.wq, 1.0 / std::sqrt(d));
    fill(L.wk, 1.0 / std::sqrt(d));
    fill(L.wv, 1.0 / std::sqrt(d));
    fill(L.wo, residual_scale / std::sqrt(d));
    fill(L.w1, 1.0 / std::sqrt(d));
    fill(L.w2, residual_scale / std::sqrt(static_cast<double>(dims.ff_width)));
  }
  p.final_gain.setOnes();
  fill(p.output, 1.0 / std::sqrt(d));
  return p;
}

template <typename Scalar>
std::vector<Scalar> flatten(const ModelParams<Scalar>& p) {
  std::vector<Scalar> out;
  out.reserve(p.parameter_count());
  p.for_each_tensor([&](const std::string&, const Mat<Scalar>& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
  return out;
}

template <typename Scalar>
void unflatten(ModelParams<Scalar>& p, const std::vector<Scalar>& values) {
  if (values.size() != p.parameter_count()) throw Error("flat parameter vector has the wrong length");
  std::size_t offset = 0;
  p.for_each_tensor([&](const std::string&, Mat<Scalar>& m) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), m.size(), m.data());
    offset += static_cast<std::size_t>(m.size());
  });
}

namespace {

constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
void layer_norm(const Mat<Scalar>& x, const Mat<Scalar>& gain, const Mat<Scalar>& bias, Mat<Scalar>& xhat,
                std::vector<Scalar>& rstd, Mat<Scalar>& out) {
  const Eigen::Index n = x.rows();
  xhat.resize(n, x.cols());
  rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).eval();
    const Scalar var = centered.square().mean();
    const Scalar r = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
    rstd[static_cast<std::size_t>(i)] = r;
    xhat.row(i) = centered * r;
  }
  out = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// Returns dx; accumulates dgain, dbias.
template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dout, const Mat<Scalar>& xhat, const std::vector<Scalar>& rstd,
                                const Mat<Scalar>& gain, Mat<Scalar>& dgain, Mat<Scalar>& dbias) {
  dgain += (dout.array() * xhat.array()).colwise().sum().matrix();
  dbias += dout.colwise().sum();
  const Mat<Scalar> dxhat = dout.array().rowwise() * gain.row(0).array();
  Mat<Scalar> dx(dout.rows(), dout.cols());
  for (Eigen::Index i = 0; i < dout.rows(); ++i) {
    const Scalar m1 = dxhat.row(i).mean();
    const Scalar m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = rstd[static_cast<std::size_t>(i)] * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename Scalar>
Scalar gelu(Scalar u) {
  const Scalar t = std::tanh(Scalar(kGeluC) * (u + Scalar(0.044715) * u * u * u));
  return Scalar(0.5) * u * (Scalar(1) + t);
}

template <typename Scalar>
Scalar gelu_grad(Scalar u) {
  const Scalar inner = Scalar(kGeluC) * (u + Scalar(0.044715) * u * u * u);
  const Scalar t = std::tanh(inner);
  return Scalar(0.5) * (Scalar(1) + t) +
         Scalar(0.5) * u * (Scalar(1) - t * t) * Scalar(kGeluC) * (Scalar(1) + Scalar(3 * 0.044715) * u * u);
}

}  // namespace

template <typename Scalar>
ForwardPass<Scalar> forward_pass(const ModelParams<Scalar>& params, const std::vector<TokenId>& tokens,
                                 const MaskSpec& mask) {
  const auto& dims = params.dims;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (n == 0) throw Error("empty token sequence");
  if (mask.length() != tokens.size()) throw Error("mask length does not match the token sequence");
  if (mask.max_position() >= dims.max_positions) {
    throw Error("sequence too long: position " + std::to_string(mask.max_position()) + " exceeds max_positions " +
                std::to_string(dims.max_positions));
  }

  ForwardPass<Scalar> fp;
  fp.tokens = tokens;
  fp.mask = mask;

  Mat<Scalar> x(n, dims.width);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TokenId t = tokens[static_cast<std::size_t>(i)];
    if (t < 0 || t >= dims.vocab) throw Error("token id " + std::to_string(t) + " out of range");
    x.row(i) = params.token_embedding.row(t) + params.position_embedding.row(mask.positions[static_cast<std::size_t>(i)]);
  }

  // Additive attention bias: 0 where visible, -inf elsewhere. Masked
  // probabilities are then forced to exact zeros; a vectorized exp of -inf
  // can return a denormal, and denormal operands stall the products below.
  Mat<Scalar> attn_bias(n, n);
  Mat<Scalar> attn_keep(n, n);
  Mat<Scalar> attn_dist = Mat<Scalar>::Zero(n, n);
  for (Eigen::Index q = 0; q < n; ++q) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const bool vis = mask.visible(static_cast<std::size_t>(q), static_cast<std::size_t>(k));
      attn_bias(q, k) = vis ? Scalar(0) : -std::numeric_limits<Scalar>::infinity();
      attn_keep(q, k) = vis ? Scalar(1) : Scalar(0);
      if (vis) {
        attn_dist(q, k) = static_cast<Scalar>(mask.positions[static_cast<std::size_t>(q)] -
                                              mask.positions[static_cast<std::size_t>(k)]);
      }
    }
  }

  const int dh = dims.width / dims.heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  fp.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& L = params.layers[l];
    auto& c = fp.layers[l];
    c.x_in = x;
    layer_norm(x, L.ln1_gain, L.ln1_bias, c.xhat1, c.rstd1, c.h1);
    c.q = c.h1 * L.wq;
    c.k = c.h1 * L.wk;
    c.v = c.h1 * L.wv;
    c.attn_cat.resize(n, dims.width);
    c.probs.resize(static_cast<std::size_t>(dims.heads));
    for (int h = 0; h < dims.heads; ++h) {
      Mat<Scalar> s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale + attn_bias;
      s -= static_cast<Scalar>(alibi_slope(h, dims.heads)) * attn_dist;
      for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp() * attn_keep.row(i).array();
        s.row(i) /= s.row(i).sum();
      }
      c.attn_cat.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
      c.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    c.x_mid = x + c.attn_cat * L.wo;
    layer_norm(c.x_mid, L.ln2_gain, L.ln2_bias, c.xhat2, c.rstd2, c.h2);
    c.u = c.h2 * L.w1;
    c.u.rowwise() += L.b1.row(0);
    c.g = c.u.unaryExpr([](Scalar v) { return gelu(v); });
    x = c.x_mid + c.g * L.w2;
    x.rowwise() += L.b2.row(0);
  }
  fp.x_out = x;
  layer_norm(x, params.final_gain, params.final_bias, fp.xhat_f, fp.rstd_f, fp.h_f);
  fp.logits = fp.h_f * params.output;
  return fp;
}

template <typename Scalar>
void backward(const ModelParams<Scalar>& params, const ForwardPass<Scalar>& fp, const Mat<Scalar>& dlogits,
              ModelParams<Scalar>& g) {
  const auto& dims = params.dims;
  const Eigen::Index n = fp.logits.rows();
  const int dh = dims.width / dims.heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  g.output += fp.h_f.transpose() * dlogits;
  const Mat<Scalar> dh_f = dlogits * params.output.transpose();
  Mat<Scalar> dx = layer_norm_backward(dh_f, fp.xhat_f, fp.rstd_f, params.final_gain, g.final_gain, g.final_bias);

  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& L = params.layers[l];
    const auto& c = fp.layers[l];
    auto& G = g.layers[l];

    // Feed-forward branch: x = x_mid + gelu(h2 w1 + b1) w2 + b2.
    G.b2 += dx.colwise().sum();
    G.w2 += c.g.transpose() * dx;
    Mat<Scalar> du = dx * L.w2.transpose();
    du.array() *= c.u.unaryExpr([](Scalar v) { return gelu_grad(v); }).array();
    G.b1 += du.colwise().sum();
    G.w1 += c.h2.transpose() * du;
    const Mat<Scalar> dh2 = du * L.w1.transpose();
    Mat<Scalar> dx_mid = dx + layer_norm_backward(dh2, c.xhat2, c.rstd2, L.ln2_gain, G.ln2_gain, G.ln2_bias);

    // Attention branch: x_mid = x_in + attn_cat wo.
    G.wo += c.attn_cat.transpose() * dx_mid;
    const Mat<Scalar> dcat = dx_mid * L.wo.transpose();
    Mat<Scalar> dq(n, dims.width), dk(n, dims.width), dv(n, dims.width);
    for (int h = 0; h < dims.heads; ++h) {
      const auto& P = c.probs[static_cast<std::size_t>(h)];
      const auto dO = dcat.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = P.transpose() * dO;
      const Mat<Scalar> dP = dO * c.v.middleCols(h * dh, dh).transpose();
      Mat<Scalar> dS = P.cwiseProduct(dP);
      const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot = dS.rowwise().sum();
      dS -= P.cwiseProduct(row_dot.replicate(1, n));
      dS *= scale;
      dq.middleCols(h * dh, dh) = dS * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh) = dS.transpose() * c.q.middleCols(h * dh, dh);
    }
    G.wq += c.h1.transpose() * dq;
    G.wk += c.h1.transpose() * dk;
    G.wv += c.h1.transpose() * dv;
    const Mat<Scalar> dh1 = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx = dx_mid + layer_norm_backward(dh1, c.xhat1, c.rstd1, L.ln1_gain, G.ln1_gain, G.ln1_bias);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    g.token_embedding.row(fp.tokens[static_cast<std::size_t>(i)]) += dx.row(i);
    g.position_embedding.row(fp.mask.positions[static_cast<std::size_t>(i)]) += dx.row(i);
  }
}

namespace {

// log p(target | logits row) in double.
template <typename Scalar>
double log_prob(const Mat<Scalar>& logits, Eigen::Index row, TokenId target) {
  const Eigen::VectorXd z = logits.row(row).transpose().template cast<double>();
  const double mx = z.maxCoeff();
  return z(target) - mx - std::log((z.array() - mx).exp().sum());
}

}  // namespace

template <typename Scalar>
TracedPass<Scalar> trace_sequence(const ModelParams<Scalar>& params, const PackedSequence& seq, ContextMode mode,
                                  std::size_t sequence_id) {
  TracedPass<Scalar> out;
  out.pass = forward_pass(params, seq.token_ids, build_mask(seq, mask_mode_for(mode)));
  out.trace.sequence_id = sequence_id;
  out.trace.mode = mode;
  out.trace.losses.reserve(seq.K());
  for (const auto& d : seq.demo_spans) {
    if (d.y.empty() || d.y.begin == 0) throw Error("demonstration has an empty label span");
    double nll = 0.0;
    for (std::size_t t = d.y.begin; t < d.y.end; ++t) {
      nll -= log_prob(out.pass.logits, static_cast<Eigen::Index>(t - 1), seq.token_ids[t]);
    }
    out.trace.losses.push_back(nll / static_cast<double>(d.y.size()));
  }
  return out;
}

namespace {

template <typename Scalar>
Mat<Scalar> label_dlogits(const PackedSequence& seq, const Mat<Scalar>& logits, const std::vector<double>& weights) {
  Mat<Scalar> d = Mat<Scalar>::Zero(logits.rows(), logits.cols());
  for (std::size_t k = 0; k < seq.K(); ++k) {
    if (weights[k] == 0.0) continue;
    const auto& y = seq.demo_spans[k].y;
    const double w = weights[k] / static_cast<double>(y.size());
    for (std::size_t t = y.begin; t < y.end; ++t) {
      const auto row = static_cast<Eigen::Index>(t - 1);
      const Eigen::VectorXd z = logits.row(row).transpose().template cast<double>();
      Eigen::VectorXd p = (z.array() - z.maxCoeff()).exp();
      p /= p.sum();
      p(seq.token_ids[t]) -= 1.0;
      d.row(row) += (w * p).transpose().template cast<Scalar>();
    }
  }
  return d;
}

bool any_nonzero(const std::vector<double>& w) {
  return std::any_of(w.begin(), w.end(), [](double v) { return v != 0.0; });
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> grad(const ModelParams<Scalar>& params, const PackedSequence& seq, const LossNode& node,
                         const TracedPass<Scalar>* many, const TracedPass<Scalar>* zero) {
  const bool use_many = any_nonzero(node.many_weights);
  const bool use_zero = any_nonzero(node.zero_weights);
  if (!use_many && !use_zero) throw Error("loss not connected to params: every demonstration weight is zero");
  ModelParams<Scalar> g = zero_params<Scalar>(params.dims);
  auto run = [&](const std::vector<double>& w, const TracedPass<Scalar>* tp, const char* what) {
    if (tp == nullptr) throw Error(std::string("loss not connected to params: no ") + what + " forward pass");
    if (w.size() != seq.K() || tp->trace.K() != seq.K()) throw Error("loss node does not match the sequence");
    backward(params, tp->pass, label_dlogits(seq, tp->pass.logits, w), g);
  };
  if (use_many) run(node.many_weights, many, "many-shot");
  if (use_zero) run(node.zero_weights, zero, "zero-shot");
  return g;
}

template <typename Scalar>
std::vector<TokenId> generate_label(const ModelParams<Scalar>& params, const std::vector<TokenId>& prefix,
                                    std::size_t max_label_len) {
  if (prefix.size() > static_cast<std::size_t>(params.dims.max_positions)) {
    throw Error("prefix too long: " + std::to_string(prefix.size()) + " tokens exceed max_positions " +
                std::to_string(params.dims.max_positions));
  }
  std::vector<TokenId> tokens = prefix;
  std::vector<TokenId> label;
  while (label.size() < max_label_len && tokens.size() <= static_cast<std::size_t>(params.dims.max_positions)) {
    const Mat<Scalar> logits = forward(params, tokens, causal_mask(tokens.size()));
    const auto last = logits.rows() - 1;
    TokenId best = 0;
    for (Eigen::Index v = 1; v < logits.cols(); ++v) {
      if (logits(last, v) > logits(last, best)) best = static_cast<TokenId>(v);
    }
    if (best < Vocabulary::kNumSpecial) break;
    label.push_back(best);
    tokens.push_back(best);
    if (tokens.size() == static_cast<std::size_t>(params.dims.max_positions)) break;
  }
  return label;
}

template <typename Scalar>
std::vector<TokenId> generate_label_constrained(const ModelParams<Scalar>& params, const std::vector<TokenId>& prefix,
                                                const std::vector<std::vector<TokenId>>& candidates) {
  if (candidates.empty()) throw Error("no candidate labels");
  std::vector<TokenId> tokens = prefix;
  std::vector<TokenId> label;
  for (;;) {
    bool complete = false;
    std::vector<bool> allowed(static_cast<std::size_t>(params.dims.vocab), false);
    bool any = false;
    for (const auto& c : candidates) {
      if (c.size() < label.size() || !std::equal(label.begin(), label.end(), c.begin())) continue;
      if (c.size() == label.size()) {
        complete = true;
      } else {
        allowed.at(static_cast<std::size_t>(c[label.size()])) = true;
        any = true;
      }
    }
    if (!any) break;
    if (tokens.size() > static_cast<std::size_t>(params.dims.max_positions)) {
      throw Error("prefix too long: " + std::to_string(tokens.size()) + " tokens exceed max_positions " +
                  std::to_string(params.dims.max_positions));
    }
    const Mat<Scalar> logits = forward(params, tokens, causal_mask(tokens.size()));
    const auto last = logits.rows() - 1;
    TokenId best = -1;
    for (Eigen::Index v = 0; v < logits.cols(); ++v) {
      if (!allowed[static_cast<std::size_t>(v)]) continue;
      if (best < 0 || logits(last, v) > logits(last, best)) best = static_cast<TokenId>(v);
    }
    if (complete) {
      Scalar special = logits(last, 0);
      for (TokenId v = 1; v < Vocabulary::kNumSpecial; ++v) special = std::max(special, logits(last, v));
      if (!(logits(last, best) > special)) break;
    }
    label.push_back(best);
    tokens.push_back(best);
  }
  return label;
}

#define DRICL_INSTANTIATE(S)                                                                                       \
  template struct ModelParams<S>;                                                                                  \
  template ModelParams<S> zero_params<S>(const ModelDims&);                                                       \
  template ModelParams<S> init_params<S>(const ModelDims&, std::uint64_t);                                        \
  template std::vector<S> flatten<S>(const ModelParams<S>&);                                                      \
  template void unflatten<S>(ModelParams<S>&, const std::vector<S>&);                                             \
  template ForwardPass<S> forward_pass<S>(const ModelParams<S>&, const std::vector<TokenId>&, const MaskSpec&);   \
  template void backward<S>(const ModelParams<S>&, const ForwardPass<S>&, const Mat<S>&, ModelParams<S>&);        \
  template TracedPass<S> trace_sequence<S>(const ModelParams<S>&, const PackedSequence&, ContextMode, std::size_t); \
  template ModelParams<S> grad<S>(const ModelParams<S>&, const PackedSequence&, const LossNode&,                  \
                                  const TracedPass<S>*, const TracedPass<S>*);                                    \
  template std::vector<TokenId> generate_label<S>(const ModelParams<S>&, const std::vector<TokenId>&, std::size_t);  \
  template std::vector<TokenId> generate_label_constrained<S>(const ModelParams<S>&, const std::vector<TokenId>&,      \
                                                              const std::vector<std::vector<TokenId>>&);

DRICL_INSTANTIATE(float)
DRICL_INSTANTIATE(double)

}  // namespace dricl
