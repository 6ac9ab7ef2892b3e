#include "dricl/oracle.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace dricl::oracle {

namespace {

constexpr double kPi = 3.14159265358979323846;

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& options) {
  return options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
}

}  // namespace

TraceFixture make_fixture(std::uint64_t seed, const FixtureOptions& opts) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  auto uniform_int = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  TraceFixture f;
  f.seed = seed;
  f.K = uniform_int(1, opts.max_K);
  f.config.window_size = static_cast<int>(uniform_int(1, static_cast<std::size_t>(opts.max_window)));
  f.config.sample_size = static_cast<int>(
      uniform_int(1, std::min<std::size_t>(static_cast<std::size_t>(opts.max_samples),
                                           static_cast<std::size_t>(f.config.window_size))));
  f.config.gamma = pick(rng, opts.gammas);
  f.config.reward_clip = pick(rng, opts.reward_clips);
  f.config.alpha = uniform(-1.0, 1.0);

  const int style = static_cast<int>(uniform_int(0, 3));
  f.losses.resize(f.K);
  for (std::size_t i = 0; i < f.K; ++i) {
    double L = uniform(0.0, 6.0);
    if (style == 1) L = std::round(L * 10.0) / 10.0;  // many exact ties
    if (style == 2 && uniform(0.0, 1.0) < 0.5) L = 2.0;  // constant stretches
    if (uniform(0.0, 1.0) < opts.spike_rate) L *= 10.0;     // spikes
    f.losses[i] = L;
  }
  if (style == 3) {
    // Smooth decreasing curve like a trained model's many-shot trace.
    for (std::size_t i = 0; i < f.K; ++i) f.losses[i] = 3.0 / (1.0 + 0.1 * static_cast<double>(i)) + uniform(0.0, 0.3);
  }
  return f;
}

std::vector<AdvantageRecord> replay_advantages(const TraceFixture& fixture) {
  const auto& c = fixture.config;
  const std::size_t W = static_cast<std::size_t>(c.window_size);
  const std::size_t S = static_cast<std::size_t>(c.sample_size);
  const auto& L = fixture.losses;
  std::vector<AdvantageRecord> out;

  for (std::size_t k = 1; k <= fixture.K; ++k) {
    AdvantageRecord r;
    r.k = k;
    r.window = (k - 1) / W;
    if (r.window == 0 || c.mode != TrainMode::dricl || !c.reweight) {
      r.advantage = 1.0;
      out.push_back(r);
      continue;
    }

    // Sampling window: demonstrations (w-1)W+1 .. wW, all earlier than k.
    std::vector<std::size_t> idx;
    for (std::size_t j = (r.window - 1) * W + 1; j <= r.window * W; ++j) idx.push_back(j);

    double total = 0.0;
    for (std::size_t j : idx) total += L[j - 1];
    const double mu = total / static_cast<double>(idx.size());
    double sq = 0.0;
    for (std::size_t j : idx) sq += (L[j - 1] - mu) * (L[j - 1] - mu);
    const double sigma = std::sqrt(sq / static_cast<double>(idx.size()));
    double lo = L[idx[0] - 1], hi = L[idx[0] - 1];
    for (std::size_t j : idx) {
      if (L[j - 1] < lo) lo = L[j - 1];
      if (L[j - 1] > hi) hi = L[j - 1];
    }

    std::vector<double> weight;
    for (std::size_t j : idx) {
      if (sigma < 1e-12) {
        weight.push_back(1.0);
      } else {
        const double p = std::exp(-(L[j - 1] - mu) * (L[j - 1] - mu) / (2.0 * sigma * sigma)) / (sigma * std::sqrt(2.0 * kPi));
        const double q = 1.0 / (hi - lo);
        weight.push_back(p / q);
      }
    }

    // Take the S heaviest, one at a time; near-equal weights go to the
    // earliest demonstration.
    std::vector<bool> taken(idx.size(), false);
    for (std::size_t s = 0; s < S && s < idx.size(); ++s) {
      double heaviest = 0.0;
      for (std::size_t j = 0; j < idx.size(); ++j) {
        if (!taken[j] && weight[j] > heaviest) heaviest = weight[j];
      }
      std::size_t best = 0;
      for (std::size_t j = 0; j < idx.size(); ++j) {
        if (!taken[j] && weight[j] >= heaviest * (1.0 - 1e-12)) {
          best = j;
          break;
        }
      }
      taken[best] = true;
    }
    double chosen = 0.0;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (taken[j]) {
        r.sampled_indices.push_back(idx[j]);
        chosen += L[idx[j] - 1];
      }
    }
    r.sampling_loss = chosen / static_cast<double>(r.sampled_indices.size());
    r.reward = L[k - 1] - r.sampling_loss;
    double clipped = r.reward;
    if (clipped > c.reward_clip) clipped = c.reward_clip;
    if (clipped < -c.reward_clip) clipped = -c.reward_clip;
    r.advantage = std::exp(clipped / c.gamma);
    out.push_back(r);
  }
  return out;
}

double relative_error(double a, double b) {
  if (a == b) return 0.0;
  if (!std::isfinite(a) || !std::isfinite(b)) return std::numeric_limits<double>::infinity();
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

double max_record_error(const std::vector<AdvantageRecord>& a, const std::vector<AdvantageRecord>& b) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (a.size() != b.size()) return inf;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].k != b[i].k || a[i].window != b[i].window || a[i].sampled_indices != b[i].sampled_indices) return inf;
    worst = std::max({worst, relative_error(a[i].sampling_loss, b[i].sampling_loss),
                      relative_error(a[i].reward, b[i].reward), relative_error(a[i].advantage, b[i].advantage)});
  }
  return worst;
}

std::vector<double> finite_diff_grad(const std::vector<double>& point,
                                     const std::function<double(const std::vector<double>&)>& loss, double h) {
  if (!(h >= 1e-6 && h <= 1e-3)) throw Error("finite-difference step must lie in [1e-6, 1e-3]");
  std::vector<double> g(point.size());
  std::vector<double> x = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    x[i] = point[i] + h;
    const double up = loss(x);
    x[i] = point[i] - h;
    const double down = loss(x);
    x[i] = point[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NonFiniteError("non-finite loss at perturbed parameter " + std::to_string(i));
    }
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

ModelParams<double> finite_diff_grad(const ModelParams<double>& params,
                                     const std::function<double(const ModelParams<double>&)>& loss, double h) {
  // Walk tensors in declaration order, perturbing one scalar of a private copy.
  ModelParams<double> probe = params;
  ModelParams<double> g = params;
  std::vector<Mat<double>*> probe_t, grad_t;
  probe.for_each_tensor([&](const std::string&, Mat<double>& m) { probe_t.push_back(&m); });
  g.for_each_tensor([&](const std::string&, Mat<double>& m) { grad_t.push_back(&m); });
  if (!(h >= 1e-6 && h <= 1e-3)) throw Error("finite-difference step must lie in [1e-6, 1e-3]");
  for (std::size_t t = 0; t < probe_t.size(); ++t) {
    Mat<double>& m = *probe_t[t];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double orig = m(r, c);
        m(r, c) = orig + h;
        const double up = loss(probe);
        m(r, c) = orig - h;
        const double down = loss(probe);
        m(r, c) = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) throw NonFiniteError("non-finite loss at perturbed point");
        (*grad_t[t])(r, c) = (up - down) / (2.0 * h);
      }
    }
  }
  return g;
}

namespace {

using Rows = std::vector<std::vector<double>>;

Rows layer_norm(const Rows& x, const Mat<double>& gain, const Mat<double>& bias) {
  Rows y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i].size());
    double mean = 0.0;
    for (double v : x[i]) mean += v;
    mean /= d;
    double var = 0.0;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    var /= d;
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      y[i][j] = (x[i][j] - mean) / std::sqrt(var + 1e-5) * gain(0, jj) + bias(0, jj);
    }
  }
  return y;
}

Rows matmul(const Rows& x, const Mat<double>& w) {
  Rows y(x.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      double s = 0.0;
      for (Eigen::Index r = 0; r < w.rows(); ++r) s += x[i][static_cast<std::size_t>(r)] * w(r, c);
      y[i][static_cast<std::size_t>(c)] = s;
    }
  }
  return y;
}

struct Layout {
  std::vector<int> group;
  std::vector<int> position;
};

Layout derive_layout(const MaskSpec& mask, std::size_t n) {
  Layout out{std::vector<int>(n, -1), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) out.position[i] = static_cast<int>(i);
  if (mask.mode == MaskMode::causal_full) return out;
  // Instruction: BOS plus instruction text. Each demonstration owns SEP_X
  // through its EOD and is positioned as if it followed the instruction.
  const std::size_t instr_end = mask.instruction_span.end;
  for (std::size_t k = 0; k < mask.demo_spans.size(); ++k) {
    const std::size_t begin = mask.demo_spans[k].x.begin - 1;
    const std::size_t end = mask.demo_spans[k].y.end + 1;
    for (std::size_t i = begin; i < end && i < n; ++i) {
      out.group[i] = static_cast<int>(k);
      out.position[i] = static_cast<int>(instr_end + (i - begin));
    }
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> naive_forward(const ModelParams<double>& params, const std::vector<TokenId>& tokens,
                                               const MaskSpec& mask) {
  const auto& dims = params.dims;
  const std::size_t n = tokens.size();
  const auto d = static_cast<std::size_t>(dims.width);
  const auto heads = static_cast<std::size_t>(dims.heads);
  const std::size_t dh = d / heads;
  if (n == 0) throw Error("empty token sequence");
  const Layout layout = derive_layout(mask, n);

  Rows x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] < 0 || tokens[i] >= dims.vocab) throw Error("token id out of range");
    if (layout.position[i] >= dims.max_positions) throw Error("sequence too long");
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      x[i][j] = params.token_embedding(tokens[i], jj) + params.position_embedding(layout.position[i], jj);
    }
  }

  auto sees = [&](std::size_t q, std::size_t k) {
    if (k > q) return false;
    if (mask.mode == MaskMode::causal_full) return true;
    return layout.group[k] == -1 || layout.group[k] == layout.group[q];
  };

  for (const auto& L : params.layers) {
    const Rows h = layer_norm(x, L.ln1_gain, L.ln1_bias);
    const Rows q = matmul(h, L.wq), k = matmul(h, L.wk), v = matmul(h, L.wv);
    Rows attn(n, std::vector<double>(d, 0.0));
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * dh;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> score(n, 0.0);
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (!sees(i, j)) continue;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q[i][off + c] * k[j][off + c];
          // Linear distance penalty, steeper for lower-numbered heads.
          const double slope = std::pow(2.0, -8.0 * static_cast<double>(hd + 1) / static_cast<double>(heads));
          score[j] = s / std::sqrt(static_cast<double>(dh)) - slope * (layout.position[i] - layout.position[j]);
          top = std::max(top, score[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          score[j] = sees(i, j) ? std::exp(score[j] - top) : 0.0;
          z += score[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < dh; ++c) attn[i][off + c] += score[j] / z * v[j][off + c];
        }
      }
    }
    const Rows proj = matmul(attn, L.wo);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) x[i][j] += proj[i][j];
    }
    Rows u = matmul(layer_norm(x, L.ln2_gain, L.ln2_bias), L.w1);
    for (auto& row : u) {
      for (std::size_t j = 0; j < row.size(); ++j) {
        const double a = row[j] + L.b1(0, static_cast<Eigen::Index>(j));
        row[j] = 0.5 * a * (1.0 + std::tanh(std::sqrt(2.0 / kPi) * (a + 0.044715 * a * a * a)));
      }
    }
    const Rows ff = matmul(u, L.w2);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) x[i][j] += ff[i][j] + L.b2(0, static_cast<Eigen::Index>(j));
    }
  }
  return matmul(layer_norm(x, params.final_gain, params.final_bias), params.output);
}

std::vector<double> naive_per_demo_nll(const ModelParams<double>& params, const PackedSequence& seq, MaskMode mode) {
  MaskSpec spec;
  spec.mode = mode;
  spec.instruction_span = seq.instruction_span;
  spec.demo_spans = seq.demo_spans;
  const auto logits = naive_forward(params, seq.token_ids, spec);
  std::vector<double> out;
  for (const auto& demo : seq.demo_spans) {
    double total = 0.0;
    for (std::size_t t = demo.y.begin; t < demo.y.end; ++t) {
      // Token t is predicted from the logits one position earlier.
      const auto& z = logits[t - 1];
      double top = z[0];
      for (double v : z) top = std::max(top, v);
      double s = 0.0;
      for (double v : z) s += std::exp(v - top);
      total += -(z[static_cast<std::size_t>(seq.token_ids[t])] - top - std::log(s));
    }
    out.push_back(total / static_cast<double>(demo.y.size()));
  }
  return out;
}

}  // namespace dricl::oracle
