#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "selfjudge/error.hpp"
#include "selfjudge/model.hpp"
#include "selfjudge/tokenizer.hpp"
#include "selfjudge/util.hpp"

namespace selfjudge {

struct ToyModelConfig {
  std::size_t layers = 4;
  std::size_t hidden = 128;
  std::size_t heads = 4;
  std::size_t context = 512;
  std::size_t vocab = 0;  // 0: take the tokenizer's vocabulary size
  std::uint64_t init_seed = 0;

  void validate() const {
    if (layers == 0 || hidden == 0 || heads == 0 || context == 0 || vocab == 0) {
      throw ConfigError("toy model dimensions must be positive");
    }
    if (hidden % heads != 0) throw ConfigError("hidden must be divisible by heads");
  }

  nlohmann::json to_json() const {
    return {{"layers", layers}, {"hidden", hidden},   {"heads", heads},
            {"context", context}, {"vocab", vocab}, {"init_seed", init_seed}};
  }

  static ToyModelConfig from_json(const nlohmann::json& j) {
    ToyModelConfig c;
    c.layers = j.at("layers").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.context = j.at("context").get<std::size_t>();
    c.vocab = j.at("vocab").get<std::size_t>();
    c.init_seed = j.value("init_seed", std::uint64_t{0});
    return c;
  }
};

/// GPT-style pre-LayerNorm decoder: learned token and position embeddings,
/// causal multi-head attention, GELU MLP (4x), final LayerNorm, linear head.
///
/// Parameters live in one flat buffer; gradients use the same layout, so the
/// optimizer and hashing operate on plain spans.
template <class Scalar>
class ToyTransformer {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;
  using MapRow = Eigen::Map<RowVec>;
  using CMapRow = Eigen::Map<const RowVec>;

  struct LayerOffsets {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  struct LayerCache {
    Mat h_in, a, qkv, att, h_mid, m, fc, act;
    std::vector<Scalar> mean1, rstd1, mean2, rstd2;
    std::vector<Mat> probs;  // per head, T x T (lower triangular)
  };

  struct Cache {
    std::vector<TokenId> tokens;
    std::vector<LayerCache> layers;
    Mat h_out, lnf;
    std::vector<Scalar> meanf, rstdf;
  };

  explicit ToyTransformer(const ToyModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    build_layout();
    params_.assign(size_, Scalar(0));
    initialize(cfg_.init_seed);
  }

  const ToyModelConfig& config() const noexcept { return cfg_; }
  std::size_t parameter_count() const noexcept { return size_; }
  std::span<Scalar> parameters() noexcept { return params_; }
  std::span<const Scalar> parameters() const noexcept { return params_; }

  /// Zero the output head so every next-token distribution is exactly uniform.
  void zero_head() {
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(w_head_), d() * V(), Scalar(0));
    std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(b_head_), V(), Scalar(0));
  }

  // -------------------------------------------------------------------------
  // Forward

  void forward(std::span<const TokenId> tokens, Cache& c) const {
    const std::size_t T = tokens.size();
    if (T == 0) throw Error("forward on empty sequence");
    if (T > cfg_.context) throw Error("sequence longer than model context");
    const Scalar* P = params_.data();
    c.tokens.assign(tokens.begin(), tokens.end());
    c.layers.resize(L());

    Mat h(T, d());
    const CMapMat wte(P + wte_, V(), d());
    const CMapMat wpe(P + wpe_, cfg_.context, d());
    for (std::size_t t = 0; t < T; ++t) {
      check_token(tokens[t]);
      h.row(t) = wte.row(tokens[t]) + wpe.row(t);
    }

    for (std::size_t l = 0; l < L(); ++l) {
      const auto& o = layer_[l];
      auto& lc = c.layers[l];
      lc.h_in = h;
      layer_norm(h, P + o.ln1_g, P + o.ln1_b, lc.a, lc.mean1, lc.rstd1);
      lc.qkv = lc.a * CMapMat(P + o.w_qkv, d(), 3 * d());
      lc.qkv.rowwise() += CMapRow(P + o.b_qkv, 3 * d());
      attention(lc.qkv, lc.att, lc.probs);
      h.noalias() += lc.att * CMapMat(P + o.w_o, d(), d());
      h.rowwise() += CMapRow(P + o.b_o, d());
      lc.h_mid = h;
      layer_norm(h, P + o.ln2_g, P + o.ln2_b, lc.m, lc.mean2, lc.rstd2);
      lc.fc = lc.m * CMapMat(P + o.w_fc, d(), 4 * d());
      lc.fc.rowwise() += CMapRow(P + o.b_fc, 4 * d());
      lc.act = lc.fc.unaryExpr([](Scalar x) { return gelu(x); });
      h.noalias() += lc.act * CMapMat(P + o.w_proj, 4 * d(), d());
      h.rowwise() += CMapRow(P + o.b_proj, d());
    }
    c.h_out = h;
    layer_norm(h, P + lnf_g_, P + lnf_b_, c.lnf, c.meanf, c.rstdf);
  }

  /// Logits for cache rows [row, row + n).
  Mat logits(const Cache& c, std::size_t row, std::size_t n) const {
    const Scalar* P = params_.data();
    Mat out = c.lnf.middleRows(row, n) * CMapMat(P + w_head_, d(), V());
    out.rowwise() += CMapRow(P + b_head_, V());
    return out;
  }

  std::vector<double> next_token_distribution(std::span<const TokenId> prompt) const {
    Cache c;
    forward(prompt, c);
    const Mat lg = logits(c, prompt.size() - 1, 1);
    return softmax_row(lg, 0);
  }

  std::vector<double> token_logprobs(std::span<const TokenId> tokens, std::size_t from) const {
    if (from == 0) throw Error("token_logprobs needs at least one conditioning token");
    std::vector<double> out;
    if (from >= tokens.size()) return out;
    Cache c;
    forward(tokens, c);
    const std::size_t n = tokens.size() - from;
    const Mat lg = logits(c, from - 1, n);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(log_softmax_at(lg, i, tokens[from + i]));
    }
    return out;
  }

  // -------------------------------------------------------------------------
  // Backward

  /// Adds the gradient of Σ_t w_t·(−log p_t) into `grad`; returns that weighted NLL.
  double accumulate_gradient(const WeightedSequence& seq, std::span<Scalar> grad) const {
    const std::size_t T = seq.tokens.size();
    if (seq.weights.size() != T) throw Error("weights/tokens length mismatch");
    if (grad.size() != size_) throw Error("gradient buffer has wrong size");
    std::vector<std::size_t> rows;  // predicting positions with nonzero weight
    for (std::size_t t = 1; t < T; ++t) {
      if (seq.weights[t] != 0.0f) rows.push_back(t);
    }
    if (rows.empty()) return 0.0;

    Cache c;
    forward(seq.tokens, c);
    const Scalar* P = params_.data();
    Scalar* G = grad.data();

    const CMapMat w_head(P + w_head_, d(), V());
    MapMat g_head(G + w_head_, d(), V());
    MapRow g_bhead(G + b_head_, V());

    Mat dlnf = Mat::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(d()));
    double nll = 0.0;
    Mat x_rows(rows.size(), d());
    for (std::size_t i = 0; i < rows.size(); ++i) x_rows.row(i) = c.lnf.row(rows[i] - 1);
    Mat lg = x_rows * w_head;
    lg.rowwise() += CMapRow(P + b_head_, V());
    Mat dlg(rows.size(), V());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t t = rows[i];
      const Scalar w = static_cast<Scalar>(seq.weights[t]);
      const Scalar mx = lg.row(i).maxCoeff();
      RowVec e = (lg.row(i).array() - mx).exp().matrix();
      const Scalar z = e.sum();
      const TokenId target = seq.tokens[t];
      check_token(target);
      nll += static_cast<double>(w) * -(static_cast<double>(lg(i, target) - mx) - std::log(static_cast<double>(z)));
      dlg.row(i) = (w / z) * e;
      dlg(i, target) -= w;
    }
    g_head.noalias() += x_rows.transpose() * dlg;
    g_bhead += dlg.colwise().sum();
    const Mat dx_rows = dlg * w_head.transpose();
    for (std::size_t i = 0; i < rows.size(); ++i) dlnf.row(rows[i] - 1) = dx_rows.row(i);

    Mat dh;
    layer_norm_backward(c.h_out, dlnf, P + lnf_g_, c.meanf, c.rstdf, G + lnf_g_, G + lnf_b_, dh);

    for (std::size_t li = L(); li-- > 0;) {
      const auto& o = layer_[li];
      const auto& lc = c.layers[li];
      // MLP
      MapMat(G + o.w_proj, 4 * d(), d()).noalias() += lc.act.transpose() * dh;
      MapRow(G + o.b_proj, d()) += dh.colwise().sum();
      Mat dact = dh * CMapMat(P + o.w_proj, 4 * d(), d()).transpose();
      for (Eigen::Index r = 0; r < dact.rows(); ++r) {
        for (Eigen::Index k = 0; k < dact.cols(); ++k) dact(r, k) *= gelu_grad(lc.fc(r, k));
      }
      MapMat(G + o.w_fc, d(), 4 * d()).noalias() += lc.m.transpose() * dact;
      MapRow(G + o.b_fc, 4 * d()) += dact.colwise().sum();
      const Mat dm = dact * CMapMat(P + o.w_fc, d(), 4 * d()).transpose();
      Mat dln2;
      layer_norm_backward(lc.h_mid, dm, P + o.ln2_g, lc.mean2, lc.rstd2, G + o.ln2_g, G + o.ln2_b,
                          dln2);
      dh += dln2;
      // Attention
      MapMat(G + o.w_o, d(), d()).noalias() += lc.att.transpose() * dh;
      MapRow(G + o.b_o, d()) += dh.colwise().sum();
      const Mat datt = dh * CMapMat(P + o.w_o, d(), d()).transpose();
      Mat dqkv;
      attention_backward(lc.qkv, lc.probs, datt, dqkv);
      MapMat(G + o.w_qkv, d(), 3 * d()).noalias() += lc.a.transpose() * dqkv;
      MapRow(G + o.b_qkv, 3 * d()) += dqkv.colwise().sum();
      const Mat da = dqkv * CMapMat(P + o.w_qkv, d(), 3 * d()).transpose();
      Mat dln1;
      layer_norm_backward(lc.h_in, da, P + o.ln1_g, lc.mean1, lc.rstd1, G + o.ln1_g, G + o.ln1_b,
                          dln1);
      dh += dln1;
    }

    MapMat g_wte(G + wte_, V(), d());
    MapMat g_wpe(G + wpe_, cfg_.context, d());
    for (std::size_t t = 0; t < T; ++t) {
      g_wte.row(seq.tokens[t]) += dh.row(t);
      g_wpe.row(t) += dh.row(t);
    }
    return nll;
  }

  // -------------------------------------------------------------------------
  // Incremental decoding with a key/value cache

  Generation generate(std::span<const TokenId> prompt, const SampleConfig& sc,
                      std::uint64_t seed) const {
    sc.validate();
    if (prompt.empty()) throw Error("generate needs a non-empty prompt");
    Generation out;
    std::span<const TokenId> ctx = prompt;
    if (ctx.size() > cfg_.context - 1) {
      ctx = ctx.subspan(ctx.size() - (cfg_.context - 1));
      out.prompt_truncated = true;
    }
    std::mt19937_64 rng(seed);
    const Scalar* P = params_.data();

    Cache c;
    forward(ctx, c);
    std::vector<Mat> keys(L()), values(L());
    for (std::size_t l = 0; l < L(); ++l) {
      keys[l].resize(cfg_.context, d());
      values[l].resize(cfg_.context, d());
      keys[l].topRows(ctx.size()) = c.layers[l].qkv.middleCols(d(), d());
      values[l].topRows(ctx.size()) = c.layers[l].qkv.middleCols(2 * d(), d());
    }
    Mat lg = logits(c, ctx.size() - 1, 1);
    std::size_t pos = ctx.size();
    std::vector<double> row(V());

    const CMapMat wte(P + wte_, V(), d());
    const CMapMat wpe(P + wpe_, cfg_.context, d());
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd()));
    for (std::size_t step = 0; step < sc.max_new_tokens; ++step) {
      for (std::size_t v = 0; v < V(); ++v) row[v] = static_cast<double>(lg(0, v));
      const TokenId next = sample_token(row, sc, rng);
      if (next == eos_id_) {
        out.stopped_at_eos = true;
        break;
      }
      out.tokens.push_back(next);
      if (pos >= cfg_.context) break;
      if (step + 1 == sc.max_new_tokens) break;

      RowVec h = wte.row(next) + wpe.row(pos);
      for (std::size_t l = 0; l < L(); ++l) {
        const auto& o = layer_[l];
        const RowVec a = ln_row(h, P + o.ln1_g, P + o.ln1_b);
        RowVec qkv = a * CMapMat(P + o.w_qkv, d(), 3 * d()) + CMapRow(P + o.b_qkv, 3 * d());
        keys[l].row(pos) = qkv.segment(d(), d());
        values[l].row(pos) = qkv.segment(2 * d(), d());
        RowVec att(d());
        for (std::size_t hh = 0; hh < H(); ++hh) {
          const auto q = qkv.segment(hh * hd(), hd());
          const auto K = keys[l].block(0, hh * hd(), pos + 1, hd());
          const auto Vv = values[l].block(0, hh * hd(), pos + 1, hd());
          RowVec s = (q * K.transpose()) * scale;
          const Scalar mx = s.maxCoeff();
          s = (s.array() - mx).exp().matrix();
          s /= s.sum();
          att.segment(hh * hd(), hd()) = s * Vv;
        }
        h += att * CMapMat(P + o.w_o, d(), d()) + CMapRow(P + o.b_o, d());
        const RowVec m = ln_row(h, P + o.ln2_g, P + o.ln2_b);
        RowVec f = m * CMapMat(P + o.w_fc, d(), 4 * d()) + CMapRow(P + o.b_fc, 4 * d());
        f = f.unaryExpr([](Scalar x) { return gelu(x); });
        h += f * CMapMat(P + o.w_proj, 4 * d(), d()) + CMapRow(P + o.b_proj, d());
      }
      const RowVec hf = ln_row(h, P + lnf_g_, P + lnf_b_);
      lg = hf * CMapMat(P + w_head_, d(), V()) + CMapRow(P + b_head_, V());
      ++pos;
    }
    return out;
  }

  void set_eos(TokenId eos) { eos_id_ = eos; }

 private:
  std::size_t d() const noexcept { return cfg_.hidden; }
  std::size_t V() const noexcept { return cfg_.vocab; }
  std::size_t L() const noexcept { return cfg_.layers; }
  std::size_t H() const noexcept { return cfg_.heads; }
  std::size_t hd() const noexcept { return cfg_.hidden / cfg_.heads; }

  void check_token(TokenId t) const {
    if (t < 0 || static_cast<std::size_t>(t) >= V()) {
      throw Error("token id " + std::to_string(t) + " outside model vocabulary");
    }
  }

  void build_layout() {
    std::size_t off = 0;
    auto take = [&](std::size_t n) {
      const std::size_t at = off;
      off += n;
      return at;
    };
    wte_ = take(V() * d());
    wpe_ = take(cfg_.context * d());
    layer_.resize(L());
    for (auto& o : layer_) {
      o.ln1_g = take(d());
      o.ln1_b = take(d());
      o.w_qkv = take(d() * 3 * d());
      o.b_qkv = take(3 * d());
      o.w_o = take(d() * d());
      o.b_o = take(d());
      o.ln2_g = take(d());
      o.ln2_b = take(d());
      o.w_fc = take(d() * 4 * d());
      o.b_fc = take(4 * d());
      o.w_proj = take(4 * d() * d());
      o.b_proj = take(d());
    }
    lnf_g_ = take(d());
    lnf_b_ = take(d());
    w_head_ = take(d() * V());
    b_head_ = take(V());
    size_ = off;
  }

  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, 0x70a1));
    // Box-Muller on the engine's raw bits keeps init identical across standard libraries.
    auto normal = [&](double stddev) {
      const double u1 = std::max(uniform01(rng), 1e-300);
      const double u2 = uniform01(rng);
      return static_cast<Scalar>(stddev * std::sqrt(-2.0 * std::log(u1)) *
                                 std::cos(6.283185307179586 * u2));
    };
    auto fill = [&](std::size_t off, std::size_t n, double stddev) {
      for (std::size_t i = 0; i < n; ++i) params_[off + i] = normal(stddev);
    };
    auto ones = [&](std::size_t off) { std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(off), d(), Scalar(1)); };
    const double resid = 0.02 / std::sqrt(2.0 * static_cast<double>(L()));
    fill(wte_, V() * d(), 0.02);
    fill(wpe_, cfg_.context * d(), 0.01);
    for (const auto& o : layer_) {
      ones(o.ln1_g);
      ones(o.ln2_g);
      fill(o.w_qkv, d() * 3 * d(), 0.02);
      fill(o.w_o, d() * d(), resid);
      fill(o.w_fc, d() * 4 * d(), 0.02);
      fill(o.w_proj, 4 * d() * d(), resid);
    }
    ones(lnf_g_);
    // Readout scaled by 1/sqrt(d): logits start near zero, so the initial
    // next-token distribution is close to uniform for any width.
    fill(w_head_, d() * V(), 0.02 / std::sqrt(static_cast<double>(d())));
  }

  static Scalar gelu(Scalar x) {
    constexpr Scalar k = Scalar(0.7978845608028654);
    return Scalar(0.5) * x * (Scalar(1) + std::tanh(k * (x + Scalar(0.044715) * x * x * x)));
  }

  static Scalar gelu_grad(Scalar x) {
    constexpr Scalar k = Scalar(0.7978845608028654);
    const Scalar u = k * (x + Scalar(0.044715) * x * x * x);
    const Scalar t = std::tanh(u);
    return Scalar(0.5) * (Scalar(1) + t) +
           Scalar(0.5) * x * (Scalar(1) - t * t) * k * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
  }

  static constexpr Scalar kLnEps = Scalar(1e-5);

  void layer_norm(const Mat& x, const Scalar* g, const Scalar* b, Mat& y, std::vector<Scalar>& mean,
                  std::vector<Scalar>& rstd) const {
    const auto T = x.rows();
    y.resize(T, x.cols());
    mean.resize(static_cast<std::size_t>(T));
    rstd.resize(static_cast<std::size_t>(T));
    const CMapRow gain(g, d()), bias(b, d());
    for (Eigen::Index r = 0; r < T; ++r) {
      const Scalar mu = x.row(r).mean();
      const Scalar var = (x.row(r).array() - mu).square().mean();
      const Scalar rs = Scalar(1) / std::sqrt(var + kLnEps);
      mean[static_cast<std::size_t>(r)] = mu;
      rstd[static_cast<std::size_t>(r)] = rs;
      y.row(r) = ((x.row(r).array() - mu) * rs * gain.array() + bias.array()).matrix();
    }
  }

  RowVec ln_row(const RowVec& x, const Scalar* g, const Scalar* b) const {
    const Scalar mu = x.mean();
    const Scalar var = (x.array() - mu).square().mean();
    const Scalar rs = Scalar(1) / std::sqrt(var + kLnEps);
    return ((x.array() - mu) * rs * CMapRow(g, d()).array() + CMapRow(b, d()).array()).matrix();
  }

  void layer_norm_backward(const Mat& x, const Mat& dy, const Scalar* g, const std::vector<Scalar>& mean,
                           const std::vector<Scalar>& rstd, Scalar* dg, Scalar* db, Mat& dx) const {
    const auto T = x.rows();
    const auto n = static_cast<Scalar>(d());
    dx.resize(T, x.cols());
    const CMapRow gain(g, d());
    MapRow dgain(dg, d()), dbias(db, d());
    for (Eigen::Index r = 0; r < T; ++r) {
      const Scalar rs = rstd[static_cast<std::size_t>(r)];
      const RowVec xhat = ((x.row(r).array() - mean[static_cast<std::size_t>(r)]) * rs).matrix();
      dgain += (dy.row(r).array() * xhat.array()).matrix();
      dbias += dy.row(r);
      const RowVec dxhat = (dy.row(r).array() * gain.array()).matrix();
      const Scalar m1 = dxhat.sum() / n;
      const Scalar m2 = dxhat.dot(xhat) / n;
      dx.row(r) = ((dxhat.array() - m1 - xhat.array() * m2) * rs).matrix();
    }
  }

  void attention(const Mat& qkv, Mat& att, std::vector<Mat>& probs) const {
    const auto T = qkv.rows();
    att.resize(T, static_cast<Eigen::Index>(d()));
    probs.resize(H());
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd()));
    for (std::size_t h = 0; h < H(); ++h) {
      const auto q = qkv.middleCols(h * hd(), hd());
      const auto k = qkv.middleCols(d() + h * hd(), hd());
      const auto v = qkv.middleCols(2 * d() + h * hd(), hd());
      Mat& p = probs[h];
      p.noalias() = (q * k.transpose()) * scale;
      for (Eigen::Index i = 0; i < T; ++i) {
        const Scalar mx = p.row(i).head(i + 1).maxCoeff();
        Scalar z = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          z += p(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) p(i, j) /= z;
        for (Eigen::Index j = i + 1; j < T; ++j) p(i, j) = 0;
      }
      att.middleCols(h * hd(), hd()).noalias() = p * v;
    }
  }

  void attention_backward(const Mat& qkv, const std::vector<Mat>& probs, const Mat& datt,
                          Mat& dqkv) const {
    const auto T = qkv.rows();
    dqkv.resize(T, static_cast<Eigen::Index>(3 * d()));
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd()));
    for (std::size_t h = 0; h < H(); ++h) {
      const auto q = qkv.middleCols(h * hd(), hd());
      const auto k = qkv.middleCols(d() + h * hd(), hd());
      const auto v = qkv.middleCols(2 * d() + h * hd(), hd());
      const auto dout = datt.middleCols(h * hd(), hd());
      const Mat& p = probs[h];
      dqkv.middleCols(2 * d() + h * hd(), hd()).noalias() = p.transpose() * dout;
      Mat dp = dout * v.transpose();
      for (Eigen::Index i = 0; i < T; ++i) {
        const Scalar s = p.row(i).dot(dp.row(i));
        dp.row(i) = (p.row(i).array() * (dp.row(i).array() - s)).matrix();
      }
      dqkv.middleCols(h * hd(), hd()).noalias() = (dp * k) * scale;
      dqkv.middleCols(d() + h * hd(), hd()).noalias() = (dp.transpose() * q) * scale;
    }
  }

  static std::vector<double> softmax_row(const Mat& lg, Eigen::Index r) {
    const double mx = static_cast<double>(lg.row(r).maxCoeff());
    std::vector<double> out(static_cast<std::size_t>(lg.cols()));
    double z = 0.0;
    for (Eigen::Index k = 0; k < lg.cols(); ++k) {
      out[static_cast<std::size_t>(k)] = std::exp(static_cast<double>(lg(r, k)) - mx);
      z += out[static_cast<std::size_t>(k)];
    }
    for (auto& p : out) p /= z;
    return out;
  }

  static double log_softmax_at(const Mat& lg, Eigen::Index r, TokenId target) {
    const double mx = static_cast<double>(lg.row(r).maxCoeff());
    double z = 0.0;
    for (Eigen::Index k = 0; k < lg.cols(); ++k) z += std::exp(static_cast<double>(lg(r, k)) - mx);
    return static_cast<double>(lg(r, target)) - mx - std::log(z);
  }

  ToyModelConfig cfg_;
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> params_;
  std::vector<LayerOffsets> layer_;
  std::size_t wte_ = 0, wpe_ = 0, lnf_g_ = 0, lnf_b_ = 0, w_head_ = 0, b_head_ = 0, size_ = 0;
  TokenId eos_id_ = -1;
};

// ---------------------------------------------------------------------------

/// The built-in desk-scale backend: a float ToyTransformer behind the
/// TrainableModel seam, with checkpoint I/O.
///
/// Checkpoint layout: weights.bin (raw little-endian float32), tokenizer.txt,
/// config.json, metadata.json.
class ToyModel final : public TrainableModel {
 public:
  explicit ToyModel(ToyModelConfig cfg) : net_(with_vocab(cfg)) {
    net_.set_eos(tok_.eos());
    assert_judge_tokens();
  }

  const CharTokenizer& tokenizer() const override { return tok_; }
  std::size_t context_length() const override { return net_.config().context; }
  const ToyModelConfig& config() const noexcept { return net_.config(); }
  ToyTransformer<float>& network() noexcept { return net_; }
  const ToyTransformer<float>& network() const noexcept { return net_; }

  std::vector<double> next_token_distribution(std::span<const TokenId> prompt) const override {
    if (prompt.empty()) throw Error("next_token_distribution needs a non-empty prompt");
    return net_.next_token_distribution(prompt);
  }

  std::vector<double> token_logprobs(std::span<const TokenId> tokens,
                                     std::size_t from) const override {
    return net_.token_logprobs(tokens, from);
  }

  Generation generate(std::span<const TokenId> prompt, const SampleConfig& sc,
                      std::uint64_t seed) const override {
    return net_.generate(prompt, sc, seed);
  }

  std::span<float> parameters() override { return net_.parameters(); }
  std::span<const float> parameters() const override { return net_.parameters(); }

  double accumulate_gradient(std::span<const WeightedSequence> batch,
                             std::span<float> grad) const override {
    std::vector<float, Eigen::aligned_allocator<float>> aligned(grad.size(), 0.0f);
    double total = 0.0;
    for (const auto& seq : batch) total += net_.accumulate_gradient(seq, aligned);
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += aligned[i];
    return total;
  }

  std::unique_ptr<TrainableModel> clone() const override {
    return std::make_unique<ToyModel>(*this);
  }

  void save(const std::filesystem::path& dir) const override {
    std::filesystem::create_directories(dir);
    const auto params = parameters();
    write_file(dir / "weights.bin",
               std::string_view(reinterpret_cast<const char*>(params.data()), params.size_bytes()));
    write_file(dir / "tokenizer.txt", tok_.table());
    write_file(dir / "config.json", net_.config().to_json().dump(2) + "\n");
    const nlohmann::json meta = {{"backend", "toy-transformer"},
                                 {"parameter_count", params.size()},
                                 {"parameter_hash", identity()}};
    write_file(dir / "metadata.json", meta.dump(2) + "\n");
  }

  static std::unique_ptr<ToyModel> load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
      throw IoError("checkpoint directory not found: " + dir.string());
    }
    const auto cfg = ToyModelConfig::from_json(nlohmann::json::parse(read_file(dir / "config.json")));
    auto model = std::make_unique<ToyModel>(cfg);
    if (read_file(dir / "tokenizer.txt") != model->tok_.table()) {
      throw IoError("checkpoint tokenizer table does not match the built-in tokenizer");
    }
    const std::string blob = read_file(dir / "weights.bin");
    auto params = model->parameters();
    if (blob.size() != params.size_bytes()) {
      throw IoError("weights.bin has " + std::to_string(blob.size()) + " bytes, expected " +
                    std::to_string(params.size_bytes()));
    }
    std::memcpy(params.data(), blob.data(), blob.size());
    const auto meta = nlohmann::json::parse(read_file(dir / "metadata.json"));
    if (meta.value("parameter_hash", std::string{}) != model->identity()) {
      throw IoError("checkpoint parameter hash mismatch in " + dir.string());
    }
    return model;
  }

 private:
  ToyModelConfig with_vocab(ToyModelConfig cfg) const {
    if (cfg.vocab == 0) cfg.vocab = tok_.vocab_size();
    if (cfg.vocab != tok_.vocab_size()) {
      throw ConfigError("toy model vocab must equal tokenizer vocabulary (" +
                        std::to_string(tok_.vocab_size()) + ")");
    }
    return cfg;
  }

  void assert_judge_tokens() const {
    if (!tok_.single_token("A") || !tok_.single_token("B")) {
      throw ConfigError("judge tokens must be single tokens");
    }
  }

  CharTokenizer tok_;
  ToyTransformer<float> net_;
};

}  // namespace selfjudge
