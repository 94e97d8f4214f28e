#include "revlab/model.hpp"

#include <cmath>
#include <cstring>
#include <mutex>
#include <stdexcept>

#include "revlab/rng.hpp"

namespace revlab {

nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"d_mlp", c.d_mlp},
          {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len},
          {"attention", c.attention == AttentionMode::Causal ? "causal" : "bidirectional"},
          {"tie_embeddings", c.tie_embeddings}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers");
  c.d_model = j.at("d_model");
  c.n_heads = j.at("n_heads");
  c.d_mlp = j.at("d_mlp");
  c.vocab_size = j.at("vocab_size");
  c.max_seq_len = j.at("max_seq_len");
  c.attention = j.at("attention") == "causal" ? AttentionMode::Causal : AttentionMode::Bidirectional;
  c.tie_embeddings = j.at("tie_embeddings");
  return c;
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_config(const ModelConfig& c) {
  if (c.n_layers < 1 || c.d_model < 1 || c.n_heads < 1 || c.d_mlp < 1 || c.vocab_size < 1 ||
      c.max_seq_len < 1)
    throw std::invalid_argument("model config: all dimensions must be positive");
  if (c.d_model % c.n_heads != 0)
    throw std::invalid_argument("model config: d_model must be divisible by n_heads");
}

std::vector<ParamInfo> make_layout(const ModelConfig& c, size_t* total) {
  std::vector<ParamInfo> layout;
  size_t off = 0;
  auto add = [&](const std::string& name, int32_t rows, int32_t cols) {
    layout.push_back({name, off, rows, cols});
    off += static_cast<size_t>(rows) * cols;
  };
  add("tok_emb", c.vocab_size, c.d_model);
  add("pos_emb", c.max_seq_len, c.d_model);
  for (int32_t l = 0; l < c.n_layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1.g", 1, c.d_model);
    add(p + "ln1.b", 1, c.d_model);
    add(p + "attn.wq", c.d_model, c.d_model);
    add(p + "attn.bq", 1, c.d_model);
    add(p + "attn.wk", c.d_model, c.d_model);
    add(p + "attn.bk", 1, c.d_model);
    add(p + "attn.wv", c.d_model, c.d_model);
    add(p + "attn.bv", 1, c.d_model);
    add(p + "attn.wo", c.d_model, c.d_model);
    add(p + "attn.bo", 1, c.d_model);
    add(p + "ln2.g", 1, c.d_model);
    add(p + "ln2.b", 1, c.d_model);
    add(p + "mlp.w_up", c.d_model, c.d_mlp);
    add(p + "mlp.b_up", 1, c.d_mlp);
    add(p + "mlp.w_down", c.d_mlp, c.d_model);
    add(p + "mlp.b_down", 1, c.d_model);
  }
  add("ln_f.g", 1, c.d_model);
  add("ln_f.b", 1, c.d_model);
  if (!c.tie_embeddings) add("head.w", c.d_model, c.vocab_size);
  *total = off;
  return layout;
}

void ensure_single_thread_blas() {
  static std::once_flag flag;
  std::call_once(flag, pin_blas_single_thread);
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + T(std::erf(static_cast<double>(x) * kInvSqrt2)));
}

template <typename T>
T gelu_grad(T x) {
  double xd = static_cast<double>(x);
  double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
  double pdf = std::exp(-0.5 * xd * xd) * kInvSqrt2Pi;
  return T(cdf + xd * pdf);
}

// Concatenated batch; per-sequence boundaries drive the attention blocks.
struct BatchPlan {
  std::vector<TokenId> tokens;
  std::vector<int32_t> offsets;  // size B+1
  std::vector<size_t> att_base;  // per-seq offset into packed attention probs
  size_t att_total = 0;
  AttentionMode mode = AttentionMode::Causal;
  int32_t total = 0;

  int32_t n_seqs() const { return static_cast<int32_t>(offsets.size()) - 1; }
  int32_t len(int32_t s) const { return offsets[s + 1] - offsets[s]; }
};

BatchPlan make_plan(const ModelConfig& cfg, std::span<const TrainingExample> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  BatchPlan plan;
  plan.mode = batch[0].attention;
  plan.offsets.push_back(0);
  for (const auto& e : batch) {
    if (e.attention != plan.mode)
      throw std::invalid_argument("batch mixes attention modes");
    if (e.input.empty()) throw std::invalid_argument("empty example in batch");
    if (static_cast<int32_t>(e.input.size()) > cfg.max_seq_len)
      throw std::invalid_argument("sequence longer than max_seq_len");
    for (TokenId t : e.input)
      if (t < 0 || t >= cfg.vocab_size) throw std::invalid_argument("token id out of vocab range");
    plan.tokens.insert(plan.tokens.end(), e.input.begin(), e.input.end());
    plan.offsets.push_back(static_cast<int32_t>(plan.tokens.size()));
  }
  plan.total = static_cast<int32_t>(plan.tokens.size());
  int32_t nh = cfg.n_heads;
  for (int32_t s = 0; s < plan.n_seqs(); ++s) {
    plan.att_base.push_back(plan.att_total);
    plan.att_total += static_cast<size_t>(nh) * plan.len(s) * plan.len(s);
  }
  return plan;
}

template <typename T>
struct LayerCache {
  Mat<T> xhat1, y1;
  std::vector<T> rstd1;
  Mat<T> q, k, v;
  std::vector<T> att;
  Mat<T> ctx;
  Mat<T> xhat2, y2;
  std::vector<T> rstd2;
  Mat<T> u, a;
  Mat<T> x_out;
};

template <typename T>
struct FwdCache {
  Mat<T> x0;
  std::vector<LayerCache<T>> layers;
  Mat<T> xhatf, yf;
  std::vector<T> rstdf;
  Mat<T> logits;
};

// y = layernorm(x) * g + b, saving xhat and rstd for backward
template <typename T>
void layernorm_fwd(const Mat<T>& x, const T* g, const T* b, Mat<T>& xhat, Mat<T>& y,
                   std::vector<T>& rstd) {
  int32_t n = x.rows, d = x.cols;
  xhat = Mat<T>(n, d);
  y = Mat<T>(n, d);
  rstd.assign(n, T(0));
  for (int32_t r = 0; r < n; ++r) {
    const T* xr = x.row(r);
    double mean = 0;
    for (int32_t j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0;
    for (int32_t j = 0; j < d; ++j) {
      double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    T rs = T(1.0 / std::sqrt(var + kLnEps));
    rstd[r] = rs;
    T* xh = xhat.row(r);
    T* yr = y.row(r);
    for (int32_t j = 0; j < d; ++j) {
      xh[j] = (xr[j] - T(mean)) * rs;
      yr[j] = xh[j] * g[j] + b[j];
    }
  }
}

// accumulates dx += backward(dy); also accumulates dg/db
template <typename T>
void layernorm_bwd(const Mat<T>& dy, const Mat<T>& xhat, const std::vector<T>& rstd, const T* g,
                   Mat<T>& dx, T* dg, T* db) {
  int32_t n = dy.rows, d = dy.cols;
  for (int32_t r = 0; r < n; ++r) {
    const T* dyr = dy.row(r);
    const T* xh = xhat.row(r);
    T* dxr = dx.row(r);
    double m1 = 0, m2 = 0;
    for (int32_t j = 0; j < d; ++j) {
      double dxh = static_cast<double>(dyr[j]) * g[j];
      m1 += dxh;
      m2 += dxh * xh[j];
    }
    m1 /= d;
    m2 /= d;
    for (int32_t j = 0; j < d; ++j) {
      double dxh = static_cast<double>(dyr[j]) * g[j];
      dxr[j] += T(rstd[r] * (dxh - m1 - static_cast<double>(xh[j]) * m2));
      dg[j] += dyr[j] * xh[j];
      db[j] += dyr[j];
    }
  }
}

// x(N,d) @ w(d,out) + b -> y(N,out)
template <typename T>
void linear_fwd(const Mat<T>& x, const T* w, const T* b, int32_t d_out, Mat<T>& y) {
  y = Mat<T>(x.rows, d_out);
  gemm(false, false, x.rows, d_out, x.cols, T(1), x.data(), x.cols, w, d_out, T(0), y.data(), d_out);
  if (b)
    for (int32_t r = 0; r < y.rows; ++r) {
      T* yr = y.row(r);
      for (int32_t j = 0; j < d_out; ++j) yr[j] += b[j];
    }
}

// accumulates dw += x^T dy, db += colsum(dy), dx += dy w^T
template <typename T>
void linear_bwd(const Mat<T>& x, const T* w, const Mat<T>& dy, T* dw, T* db, Mat<T>* dx) {
  int32_t d_in = x.cols, d_out = dy.cols;
  gemm(true, false, d_in, d_out, x.rows, T(1), x.data(), d_in, dy.data(), d_out, T(1), dw, d_out);
  if (db)
    for (int32_t r = 0; r < dy.rows; ++r) {
      const T* dyr = dy.row(r);
      for (int32_t j = 0; j < d_out; ++j) db[j] += dyr[j];
    }
  if (dx)
    gemm(false, true, dy.rows, d_in, d_out, T(1), dy.data(), d_out, w, d_out, T(1), dx->data(), d_in);
}

template <typename T>
void attention_fwd(const BatchPlan& plan, const ModelConfig& cfg, const Mat<T>& q, const Mat<T>& k,
                   const Mat<T>& v, std::vector<T>& att, Mat<T>& ctx) {
  int32_t nh = cfg.n_heads, dh = cfg.d_model / cfg.n_heads;
  T scale = T(1.0 / std::sqrt(static_cast<double>(dh)));
  att.assign(plan.att_total, T(0));
  ctx = Mat<T>(plan.total, cfg.d_model);
  for (int32_t s = 0; s < plan.n_seqs(); ++s) {
    int32_t base = plan.offsets[s], L = plan.len(s);
    for (int32_t h = 0; h < nh; ++h) {
      T* p = att.data() + plan.att_base[s] + static_cast<size_t>(h) * L * L;
      for (int32_t i = 0; i < L; ++i) {
        int32_t jmax = plan.mode == AttentionMode::Causal ? i + 1 : L;
        const T* qi = q.row(base + i) + h * dh;
        T* pi = p + static_cast<size_t>(i) * L;
        double mx = -1e30;
        for (int32_t j = 0; j < jmax; ++j) {
          const T* kj = k.row(base + j) + h * dh;
          double dot = 0;
          for (int32_t c = 0; c < dh; ++c) dot += static_cast<double>(qi[c]) * kj[c];
          pi[j] = T(dot) * scale;
          if (pi[j] > mx) mx = pi[j];
        }
        double denom = 0;
        for (int32_t j = 0; j < jmax; ++j) {
          double e = std::exp(static_cast<double>(pi[j]) - mx);
          pi[j] = T(e);
          denom += e;
        }
        T inv = T(1.0 / denom);
        for (int32_t j = 0; j < jmax; ++j) pi[j] *= inv;
        T* ci = ctx.row(base + i) + h * dh;
        for (int32_t c = 0; c < dh; ++c) ci[c] = T(0);
        for (int32_t j = 0; j < jmax; ++j) {
          const T* vj = v.row(base + j) + h * dh;
          T pij = pi[j];
          for (int32_t c = 0; c < dh; ++c) ci[c] += pij * vj[c];
        }
      }
    }
  }
}

template <typename T>
void attention_bwd(const BatchPlan& plan, const ModelConfig& cfg, const Mat<T>& q, const Mat<T>& k,
                   const Mat<T>& v, const std::vector<T>& att, const Mat<T>& dctx, Mat<T>& dq,
                   Mat<T>& dk, Mat<T>& dv) {
  int32_t nh = cfg.n_heads, dh = cfg.d_model / cfg.n_heads;
  T scale = T(1.0 / std::sqrt(static_cast<double>(dh)));
  dq = Mat<T>(plan.total, cfg.d_model);
  dk = Mat<T>(plan.total, cfg.d_model);
  dv = Mat<T>(plan.total, cfg.d_model);
  std::vector<T> dp;
  for (int32_t s = 0; s < plan.n_seqs(); ++s) {
    int32_t base = plan.offsets[s], L = plan.len(s);
    dp.assign(static_cast<size_t>(L), T(0));
    for (int32_t h = 0; h < nh; ++h) {
      const T* p = att.data() + plan.att_base[s] + static_cast<size_t>(h) * L * L;
      for (int32_t i = 0; i < L; ++i) {
        int32_t jmax = plan.mode == AttentionMode::Causal ? i + 1 : L;
        const T* pi = p + static_cast<size_t>(i) * L;
        const T* dci = dctx.row(base + i) + h * dh;
        // dp_j = dctx_i . v_j ; dv_j += p_ij dctx_i
        double dot_pp = 0;
        for (int32_t j = 0; j < jmax; ++j) {
          const T* vj = v.row(base + j) + h * dh;
          T* dvj = dv.row(base + j) + h * dh;
          double acc = 0;
          for (int32_t c = 0; c < dh; ++c) {
            acc += static_cast<double>(dci[c]) * vj[c];
            dvj[c] += pi[j] * dci[c];
          }
          dp[j] = T(acc);
          dot_pp += acc * pi[j];
        }
        // softmax backward, then score backward into q and k
        const T* qi = q.row(base + i) + h * dh;
        T* dqi = dq.row(base + i) + h * dh;
        for (int32_t j = 0; j < jmax; ++j) {
          T ds = pi[j] * T(static_cast<double>(dp[j]) - dot_pp) * scale;
          const T* kj = k.row(base + j) + h * dh;
          T* dkj = dk.row(base + j) + h * dh;
          for (int32_t c = 0; c < dh; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
  }
}

template <typename T>
void run_forward(const ParamStore<T>& ps, const BatchPlan& plan, FwdCache<T>& cache) {
  ensure_single_thread_blas();
  const ModelConfig& cfg = ps.config;
  int32_t n = plan.total, d = cfg.d_model;

  cache.x0 = Mat<T>(n, d);
  const T* tok = ps.tensor("tok_emb");
  const T* pos = ps.tensor("pos_emb");
  for (int32_t s = 0; s < plan.n_seqs(); ++s)
    for (int32_t i = 0; i < plan.len(s); ++i) {
      int32_t r = plan.offsets[s] + i;
      const T* te = tok + static_cast<size_t>(plan.tokens[r]) * d;
      const T* pe = pos + static_cast<size_t>(i) * d;
      T* xr = cache.x0.row(r);
      for (int32_t j = 0; j < d; ++j) xr[j] = te[j] + pe[j];
    }

  cache.layers.assign(cfg.n_layers, {});
  const Mat<T>* x = &cache.x0;
  for (int32_t l = 0; l < cfg.n_layers; ++l) {
    LayerCache<T>& lc = cache.layers[l];
    std::string p = "layer" + std::to_string(l) + ".";

    layernorm_fwd(*x, ps.tensor(p + "ln1.g"), ps.tensor(p + "ln1.b"), lc.xhat1, lc.y1, lc.rstd1);
    linear_fwd(lc.y1, ps.tensor(p + "attn.wq"), ps.tensor(p + "attn.bq"), d, lc.q);
    linear_fwd(lc.y1, ps.tensor(p + "attn.wk"), ps.tensor(p + "attn.bk"), d, lc.k);
    linear_fwd(lc.y1, ps.tensor(p + "attn.wv"), ps.tensor(p + "attn.bv"), d, lc.v);
    attention_fwd(plan, cfg, lc.q, lc.k, lc.v, lc.att, lc.ctx);
    Mat<T> attn_out;
    linear_fwd(lc.ctx, ps.tensor(p + "attn.wo"), ps.tensor(p + "attn.bo"), d, attn_out);
    Mat<T> x_mid(n, d);
    for (size_t i = 0; i < x_mid.size(); ++i) x_mid.v[i] = x->v[i] + attn_out.v[i];

    layernorm_fwd(x_mid, ps.tensor(p + "ln2.g"), ps.tensor(p + "ln2.b"), lc.xhat2, lc.y2, lc.rstd2);
    linear_fwd(lc.y2, ps.tensor(p + "mlp.w_up"), ps.tensor(p + "mlp.b_up"), cfg.d_mlp, lc.u);
    lc.a = Mat<T>(n, cfg.d_mlp);
    for (size_t i = 0; i < lc.u.size(); ++i) lc.a.v[i] = gelu(lc.u.v[i]);
    Mat<T> mlp_out;
    linear_fwd(lc.a, ps.tensor(p + "mlp.w_down"), ps.tensor(p + "mlp.b_down"), d, mlp_out);

    lc.x_out = Mat<T>(n, d);
    for (size_t i = 0; i < lc.x_out.size(); ++i) lc.x_out.v[i] = x_mid.v[i] + mlp_out.v[i];
    // x_mid is recomputable as x_out - mlp_out, but backward only needs xhat2
    x = &lc.x_out;
  }

  layernorm_fwd(*x, ps.tensor("ln_f.g"), ps.tensor("ln_f.b"), cache.xhatf, cache.yf, cache.rstdf);
  cache.logits = Mat<T>(n, cfg.vocab_size);
  if (cfg.tie_embeddings) {
    gemm(false, true, n, cfg.vocab_size, d, T(1), cache.yf.data(), d, tok, d, T(0),
         cache.logits.data(), cfg.vocab_size);
  } else {
    gemm(false, false, n, cfg.vocab_size, d, T(1), cache.yf.data(), d, ps.tensor("head.w"),
         cfg.vocab_size, T(0), cache.logits.data(), cfg.vocab_size);
  }
}

}  // namespace

template <typename T>
T* ParamStore<T>::tensor(const std::string& name) {
  return flat.data() + info(name).offset;
}

template <typename T>
const T* ParamStore<T>::tensor(const std::string& name) const {
  return flat.data() + info(name).offset;
}

template <typename T>
const ParamInfo& ParamStore<T>::info(const std::string& name) const {
  for (const auto& pi : layout)
    if (pi.name == name) return pi;
  throw std::out_of_range("no parameter tensor named " + name);
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  check_config(cfg);
  ParamStore<T> ps;
  ps.config = cfg;
  size_t total = 0;
  ps.layout = make_layout(cfg, &total);
  ps.flat.assign(total, T(0));
  Rng rng(seed);
  double resid_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& pi : ps.layout) {
    T* dst = ps.flat.data() + pi.offset;
    if (pi.rows == 1) {
      // 1-row tensors are layernorm gains/biases and linear biases
      bool is_gain = pi.name.size() >= 2 && pi.name.compare(pi.name.size() - 2, 2, ".g") == 0;
      std::fill(dst, dst + pi.size(), is_gain ? T(1) : T(0));
      continue;
    }
    bool is_resid_proj = pi.name.find("attn.wo") != std::string::npos ||
                         pi.name.find("mlp.w_down") != std::string::npos;
    double std_dev = 0.02 * (is_resid_proj ? resid_scale : 1.0);
    for (size_t i = 0; i < pi.size(); ++i) dst[i] = T(rng.gaussian() * std_dev);
  }
  return ps;
}

template <typename T>
Mat<T> forward(const ParamStore<T>& ps, std::span<const TokenId> tokens, AttentionMode mode,
               ForwardTrace<T>* trace, std::span<const int32_t> trace_positions) {
  TrainingExample e;
  e.input.assign(tokens.begin(), tokens.end());
  e.target.assign(tokens.size(), -1);
  e.loss_mask.assign(tokens.size(), 0);
  e.attention = mode;
  BatchPlan plan = make_plan(ps.config, std::span<const TrainingExample>(&e, 1));
  FwdCache<T> cache;
  run_forward(ps, plan, cache);
  if (trace) {
    trace->positions.assign(trace_positions.begin(), trace_positions.end());
    trace->acts.clear();
    for (int32_t l = 0; l < ps.config.n_layers; ++l) {
      Mat<T> rows(static_cast<int32_t>(trace_positions.size()), ps.config.d_mlp);
      for (size_t i = 0; i < trace_positions.size(); ++i) {
        int32_t p = trace_positions[i];
        if (p < 0 || p >= plan.total) throw std::out_of_range("trace position out of range");
        std::memcpy(rows.row(static_cast<int32_t>(i)), cache.layers[l].a.row(p),
                    sizeof(T) * ps.config.d_mlp);
      }
      trace->acts.push_back(std::move(rows));
    }
  }
  return std::move(cache.logits);
}

template <typename T>
std::optional<double> loss_from_logits(const Mat<T>& logits, std::span<const TokenId> targets,
                                       std::span<const uint8_t> loss_mask) {
  if (static_cast<size_t>(logits.rows) != targets.size() || targets.size() != loss_mask.size())
    throw std::invalid_argument("loss: shape mismatch");
  double total = 0;
  int64_t count = 0;
  for (int32_t r = 0; r < logits.rows; ++r) {
    if (!loss_mask[r]) continue;
    TokenId t = targets[r];
    if (t < 0 || t >= logits.cols) throw std::invalid_argument("loss: target id out of range");
    const T* row = logits.row(r);
    double mx = row[0];
    for (int32_t j = 1; j < logits.cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0;
    for (int32_t j = 0; j < logits.cols; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    total += std::log(denom) + mx - static_cast<double>(row[t]);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return total / count;
}

template <typename T>
std::optional<double> grad_batch(const ParamStore<T>& ps, std::span<const TrainingExample> batch,
                                 std::vector<T>& grads) {
  const ModelConfig& cfg = ps.config;
  BatchPlan plan = make_plan(cfg, batch);
  grads.assign(ps.flat.size(), T(0));

  // aligned targets/mask across the concatenated batch
  std::vector<TokenId> targets(plan.total, -1);
  std::vector<uint8_t> mask(plan.total, 0);
  for (size_t b = 0; b < batch.size(); ++b) {
    const auto& e = batch[b];
    if (e.target.size() != e.input.size() || e.loss_mask.size() != e.input.size())
      throw std::invalid_argument("example fields have mismatched lengths");
    for (size_t i = 0; i < e.input.size(); ++i) {
      int32_t r = plan.offsets[b] + static_cast<int32_t>(i);
      targets[r] = e.target[i];
      mask[r] = e.loss_mask[i];
      if (mask[r] && (targets[r] < 0 || targets[r] >= cfg.vocab_size))
        throw std::invalid_argument("loss-carrying position lacks a valid target");
    }
  }

  FwdCache<T> cache;
  run_forward(ps, plan, cache);

  int64_t count = 0;
  for (int32_t r = 0; r < plan.total; ++r)
    if (mask[r]) ++count;
  if (count == 0) return std::nullopt;

  // softmax + CE; logits buffer becomes dlogits
  double total_loss = 0;
  T inv_count = T(1.0 / static_cast<double>(count));
  int32_t V = cfg.vocab_size;
  for (int32_t r = 0; r < plan.total; ++r) {
    T* row = cache.logits.row(r);
    if (!mask[r]) {
      std::fill(row, row + V, T(0));
      continue;
    }
    double mx = row[0];
    for (int32_t j = 1; j < V; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0;
    for (int32_t j = 0; j < V; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    double log_denom = std::log(denom);
    total_loss += log_denom + mx - static_cast<double>(row[targets[r]]);
    for (int32_t j = 0; j < V; ++j) {
      double p = std::exp(static_cast<double>(row[j]) - mx) / denom;
      row[j] = T(p) * inv_count;
    }
    row[targets[r]] -= inv_count;
  }

  int32_t n = plan.total, d = cfg.d_model;
  const T* tok = ps.tensor("tok_emb");
  auto g = [&](const std::string& name) { return grads.data() + ps.info(name).offset; };

  // head and final layernorm
  Mat<T> dyf(n, d);
  if (cfg.tie_embeddings) {
    gemm(true, false, V, d, n, T(1), cache.logits.data(), V, cache.yf.data(), d, T(1), g("tok_emb"), d);
    gemm(false, false, n, d, V, T(1), cache.logits.data(), V, tok, d, T(0), dyf.data(), d);
  } else {
    gemm(true, false, d, V, n, T(1), cache.yf.data(), d, cache.logits.data(), V, T(1), g("head.w"), V);
    gemm(false, true, n, d, V, T(1), cache.logits.data(), V, ps.tensor("head.w"), V, T(0), dyf.data(),
         d);
  }
  Mat<T> dx(n, d);
  layernorm_bwd(dyf, cache.xhatf, cache.rstdf, ps.tensor("ln_f.g"), dx, g("ln_f.g"), g("ln_f.b"));

  for (int32_t l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerCache<T>& lc = cache.layers[l];
    std::string p = "layer" + std::to_string(l) + ".";

    // mlp: dx covers d(x_out) = d(x_mid) + d(mlp_out)
    Mat<T> da(n, cfg.d_mlp);
    gemm(false, true, n, cfg.d_mlp, d, T(1), dx.data(), d, ps.tensor(p + "mlp.w_down"), d, T(0),
         da.data(), cfg.d_mlp);
    gemm(true, false, cfg.d_mlp, d, n, T(1), lc.a.data(), cfg.d_mlp, dx.data(), d, T(1),
         g(p + "mlp.w_down"), d);
    {
      T* db = g(p + "mlp.b_down");
      for (int32_t r = 0; r < n; ++r) {
        const T* dxr = dx.row(r);
        for (int32_t j = 0; j < d; ++j) db[j] += dxr[j];
      }
    }
    Mat<T>& du = da;  // in place: du = da * gelu'(u)
    for (size_t i = 0; i < du.size(); ++i) du.v[i] *= gelu_grad(lc.u.v[i]);
    Mat<T> dy2(n, d);
    gemm(false, true, n, d, cfg.d_mlp, T(1), du.data(), cfg.d_mlp, ps.tensor(p + "mlp.w_up"),
         cfg.d_mlp, T(0), dy2.data(), d);
    linear_bwd(lc.y2, ps.tensor(p + "mlp.w_up"), du, g(p + "mlp.w_up"), g(p + "mlp.b_up"),
               static_cast<Mat<T>*>(nullptr));
    layernorm_bwd(dy2, lc.xhat2, lc.rstd2, ps.tensor(p + "ln2.g"), dx, g(p + "ln2.g"),
                  g(p + "ln2.b"));

    // attention: dx now covers d(x_mid) = d(x_in) + d(attn_out)
    Mat<T> dctx(n, d);
    gemm(false, true, n, d, d, T(1), dx.data(), d, ps.tensor(p + "attn.wo"), d, T(0), dctx.data(), d);
    gemm(true, false, d, d, n, T(1), lc.ctx.data(), d, dx.data(), d, T(1), g(p + "attn.wo"), d);
    {
      T* db = g(p + "attn.bo");
      for (int32_t r = 0; r < n; ++r) {
        const T* dxr = dx.row(r);
        for (int32_t j = 0; j < d; ++j) db[j] += dxr[j];
      }
    }
    Mat<T> dq, dk, dv;
    attention_bwd(plan, cfg, lc.q, lc.k, lc.v, lc.att, dctx, dq, dk, dv);
    Mat<T> dy1(n, d);
    gemm(false, true, n, d, d, T(1), dq.data(), d, ps.tensor(p + "attn.wq"), d, T(0), dy1.data(), d);
    gemm(false, true, n, d, d, T(1), dk.data(), d, ps.tensor(p + "attn.wk"), d, T(1), dy1.data(), d);
    gemm(false, true, n, d, d, T(1), dv.data(), d, ps.tensor(p + "attn.wv"), d, T(1), dy1.data(), d);
    linear_bwd(lc.y1, ps.tensor(p + "attn.wq"), dq, g(p + "attn.wq"), g(p + "attn.bq"),
               static_cast<Mat<T>*>(nullptr));
    linear_bwd(lc.y1, ps.tensor(p + "attn.wk"), dk, g(p + "attn.wk"), g(p + "attn.bk"),
               static_cast<Mat<T>*>(nullptr));
    linear_bwd(lc.y1, ps.tensor(p + "attn.wv"), dv, g(p + "attn.wv"), g(p + "attn.bv"),
               static_cast<Mat<T>*>(nullptr));
    layernorm_bwd(dy1, lc.xhat1, lc.rstd1, ps.tensor(p + "ln1.g"), dx, g(p + "ln1.g"),
                  g(p + "ln1.b"));
  }

  // embeddings
  T* d_tok = g("tok_emb");
  T* d_pos = g("pos_emb");
  for (int32_t s = 0; s < plan.n_seqs(); ++s)
    for (int32_t i = 0; i < plan.len(s); ++i) {
      int32_t r = plan.offsets[s] + i;
      const T* dxr = dx.row(r);
      T* dt = d_tok + static_cast<size_t>(plan.tokens[r]) * d;
      T* dp = d_pos + static_cast<size_t>(i) * d;
      for (int32_t j = 0; j < d; ++j) {
        dt[j] += dxr[j];
        dp[j] += dxr[j];
      }
    }

  return total_loss / static_cast<double>(count);
}

AdamState make_adam_state(const Params& ps) {
  AdamState s;
  s.m.assign(ps.flat.size(), 0.0f);
  s.v.assign(ps.flat.size(), 0.0f);
  return s;
}

std::optional<double> grad_step(Params& ps, std::span<const TrainingExample> batch, AdamState& opt,
                                float lr) {
  static thread_local std::vector<float> grads;
  auto loss = grad_batch(ps, batch, grads);
  if (!loss) return std::nullopt;
  opt.t += 1;
  double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  float b1 = opt.beta1, b2 = opt.beta2;
  for (size_t i = 0; i < ps.flat.size(); ++i) {
    float gd = grads[i];
    opt.m[i] = b1 * opt.m[i] + (1.0f - b1) * gd;
    opt.v[i] = b2 * opt.v[i] + (1.0f - b2) * gd * gd;
    float mhat = opt.m[i] / static_cast<float>(bc1);
    float vhat = opt.v[i] / static_cast<float>(bc2);
    ps.flat[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
  return loss;
}

template <typename T>
TokenId argmax_next(const ParamStore<T>& ps, std::span<const TokenId> prompt, AttentionMode mode) {
  return argmax_at(ps, prompt, mode, static_cast<int32_t>(prompt.size()) - 1);
}

template <typename T>
TokenId argmax_at(const ParamStore<T>& ps, std::span<const TokenId> tokens, AttentionMode mode,
                  int32_t position) {
  Mat<T> logits = forward(ps, tokens, mode);
  if (position < 0 || position >= logits.rows) throw std::out_of_range("argmax position out of range");
  const T* row = logits.row(position);
  TokenId best = 0;
  for (int32_t j = 1; j < logits.cols; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

// the float pipeline trains; the double pipeline backs gradient checks
template struct ParamStore<float>;
template struct ParamStore<double>;
template ParamStore<float> init_params<float>(const ModelConfig&, uint64_t);
template ParamStore<double> init_params<double>(const ModelConfig&, uint64_t);
template Mat<float> forward<float>(const ParamStore<float>&, std::span<const TokenId>, AttentionMode,
                                   ForwardTrace<float>*, std::span<const int32_t>);
template Mat<double> forward<double>(const ParamStore<double>&, std::span<const TokenId>,
                                     AttentionMode, ForwardTrace<double>*, std::span<const int32_t>);
template std::optional<double> loss_from_logits<float>(const Mat<float>&, std::span<const TokenId>,
                                                       std::span<const uint8_t>);
template std::optional<double> loss_from_logits<double>(const Mat<double>&, std::span<const TokenId>,
                                                        std::span<const uint8_t>);
template std::optional<double> grad_batch<float>(const ParamStore<float>&,
                                                 std::span<const TrainingExample>,
                                                 std::vector<float>&);
template std::optional<double> grad_batch<double>(const ParamStore<double>&,
                                                  std::span<const TrainingExample>,
                                                  std::vector<double>&);
template TokenId argmax_next<float>(const ParamStore<float>&, std::span<const TokenId>, AttentionMode);
template TokenId argmax_next<double>(const ParamStore<double>&, std::span<const TokenId>,
                                     AttentionMode);
template TokenId argmax_at<float>(const ParamStore<float>&, std::span<const TokenId>, AttentionMode,
                                  int32_t);
template TokenId argmax_at<double>(const ParamStore<double>&, std::span<const TokenId>, AttentionMode,
                                   int32_t);

}  // namespace revlab
