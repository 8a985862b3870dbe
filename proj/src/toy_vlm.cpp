#include "hijack/toy_vlm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <variant>

namespace hijack {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct LayerWeights {
  Vec<S> ln1_g, ln1_b, ln2_g, ln2_b;
  Mat<S> wq, wk, wv, wo;  // d x d, applied as x * W^T
  Vec<S> bq, bk, bv, bo;
  Mat<S> w1;  // dff x d
  Vec<S> b1;
  Mat<S> w2;  // d x dff
  Vec<S> b2;
};

template <typename S>
struct ToyWeights {
  Mat<S> wpatch;  // d x (P*P*C)
  Vec<S> bpatch;
  Mat<S> emb;      // V x d
  Mat<S> pos_abs;  // (n_img + 2*max_text) x d
  Mat<S> pos_gen;  // max_text x d
  std::vector<LayerWeights<S>> layers;
  Vec<S> lnf_g, lnf_b;
  Mat<S> wout;  // V x d
  Vec<S> bout;
  Mat<S> wdir_r;   // V x direct_r_dim, shared across position blocks
  Mat<S> wdir_t;   // V x direct_t_dim
  Vec<S> gate_cr;  // copy-gate readout over the per-r slice
  Vec<S> gate_ct;  // copy-gate readout over the per-tail slice
  Vec<S> gate_sr;  // start-gate readout over the per-r slice
};

constexpr double kLnEps = 1e-5;

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + S(std::erf(double(x) / std::sqrt(2.0))));
}

template <typename S>
S gelu_grad(S x) {
  const double xd = double(x);
  return S(0.5 * (1.0 + std::erf(xd / std::sqrt(2.0))) +
           xd * std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * M_PI));
}

// Row-wise layer norm. Returns y; fills xhat (normalized rows) and istd.
template <typename S>
Mat<S> layernorm(const Mat<S>& x, const Vec<S>& g, const Vec<S>& b, Mat<S>& xhat,
                 Vec<S>& istd) {
  const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  xhat.resize(n, d);
  istd.resize(n);
  Mat<S> y(n, d);
  for (int i = 0; i < n; ++i) {
    const S mu = x.row(i).mean();
    const S var = (x.row(i).array() - mu).square().mean();
    const S is = S(1) / std::sqrt(var + S(kLnEps));
    istd(i) = is;
    xhat.row(i) = (x.row(i).array() - mu) * is;
    y.row(i) = xhat.row(i).array() * g.transpose().array() + b.transpose().array();
  }
  return y;
}

template <typename S>
Mat<S> layernorm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Vec<S>& istd,
                          const Vec<S>& g) {
  const int n = static_cast<int>(dy.rows()), d = static_cast<int>(dy.cols());
  Mat<S> dx(n, d);
  for (int i = 0; i < n; ++i) {
    Eigen::Array<S, 1, Eigen::Dynamic> dxh =
        dy.row(i).array() * g.transpose().array();
    const S m1 = dxh.mean();
    const S m2 = (dxh * xhat.row(i).array()).mean();
    dx.row(i) = (istd(i) * (dxh - m1 - xhat.row(i).array() * m2)).matrix();
  }
  return dx;
}

template <typename S>
struct LayerCache {
  Mat<S> xhat1;
  Vec<S> istd1;
  Mat<S> q, k, v;             // S x d
  std::vector<Mat<S>> attn;   // per head, S x S row-stochastic
  Mat<S> xhat2;
  Vec<S> istd2;
  Mat<S> h1;  // S x dff preactivation
};

template <typename S>
struct ForwardCache {
  std::vector<LayerCache<S>> layers;
  Mat<S> xhatf;
  Vec<S> istdf;
  Mat<S> f;  // final LN output
};

// Structured-head state for one output row.
template <typename S>
struct PtrCache {
  int r = -1;       // generation position (block index for r-addressed slices)
  int t_tail = -1;  // r - ctx_len; valid tail index iff in [0, direct_t_blocks)
  S g_copy = S(0), g_start = S(0);  // gate activations
  Vec<S> vec_copy, vec_start;       // V-dim pointer distributions
};

std::vector<int> bytes_to_ids(const std::string& text, bool full_byte) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char ch : text)
    ids.push_back(full_byte ? kByteBase + ch : kByteBase + (ch % 60));
  return ids;
}

int id_to_byte(int id, bool full_byte) {
  const int b = id - kByteBase;
  if (full_byte) return b;
  // bucket representative in [32, 91]: keeps space, punctuation, digits and
  // uppercase ASCII round-trippable
  return b >= 32 ? b : b + 60;
}

template <typename S>
class ToyNet {
 public:
  ToyVlmConfig cfg;
  std::uint64_t seed = 0;
  ToyWeights<S> w;
  int n_img = 0, dh = 0;
  // flat pixel offsets of the structured-head slice regions
  std::size_t ofs_a = 0, ofs_b = 0, ofs_gc = 0, ofs_gt = 0, ofs_gs = 0;

  void init(const ToyVlmConfig& c, std::uint64_t sd) {
    cfg = c;
    seed = sd;
    if (c.height % c.patch != 0 || c.width % c.patch != 0)
      throw ConfigError("toy vlm: patch size must divide height and width");
    if (c.vocab < kByteBase) throw ConfigError("toy vlm: vocab too small");
    if (c.dmodel % c.heads != 0) throw ConfigError("toy vlm: heads must divide dmodel");
    n_img = c.image_tokens();
    dh = c.dmodel / c.heads;
    ofs_a = 0;
    ofs_b = ofs_a + std::size_t(c.direct_r_blocks) * c.direct_r_dim;
    ofs_gc = ofs_b + std::size_t(c.direct_t_blocks) * c.direct_t_dim;
    ofs_gt = ofs_gc + std::size_t(c.direct_r_blocks) * c.gate_copy_r_dim;
    ofs_gs = ofs_gt + std::size_t(c.direct_t_blocks) * c.gate_copy_t_dim;
    const std::size_t need = ofs_gs + std::size_t(c.direct_r_blocks) * c.gate_start_r_dim;
    const std::size_t pixels = std::size_t(c.channels) * c.height * c.width;
    if (need > pixels)
      throw ConfigError("toy vlm: structured-head slices need " + std::to_string(need) +
                        " pixels but the image has " + std::to_string(pixels));

    Rng rng(sd ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> nd(0.0, 1.0);
    auto randm = [&](int r, int cc, double scale) {
      Mat<S> m(r, cc);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < cc; ++j) m(i, j) = S(nd(rng) * scale);
      return m;
    };
    const int d = c.dmodel, V = c.vocab, dff = c.dff;
    const int pvec = c.patch * c.patch * c.channels;
    w.wpatch = randm(d, pvec, c.patch_gain / std::sqrt(double(pvec)));
    w.bpatch = Vec<S>::Zero(d);
    w.emb = randm(V, d, c.emb_gain);
    w.pos_abs = randm(n_img + 2 * c.max_text_tokens, d, c.pos_gain);
    w.pos_gen = randm(c.max_text_tokens, d, c.pos_gain);
    w.layers.resize(c.layers);
    for (auto& L : w.layers) {
      L.ln1_g = Vec<S>::Ones(d);
      L.ln1_b = Vec<S>::Zero(d);
      L.ln2_g = Vec<S>::Ones(d);
      L.ln2_b = Vec<S>::Zero(d);
      const double ws = 1.0 / std::sqrt(double(d));
      L.wq = randm(d, d, ws);
      L.wk = randm(d, d, ws);
      L.wv = randm(d, d, ws);
      L.wo = randm(d, d, ws);
      L.bq = Vec<S>::Zero(d);
      L.bk = Vec<S>::Zero(d);
      L.bv = Vec<S>::Zero(d);
      L.bo = Vec<S>::Zero(d);
      L.w1 = randm(dff, d, ws);
      L.b1 = Vec<S>::Zero(dff);
      L.w2 = randm(d, dff, 1.0 / std::sqrt(double(dff)));
      L.b2 = Vec<S>::Zero(d);
    }
    w.lnf_g = Vec<S>::Ones(d);
    w.lnf_b = Vec<S>::Zero(d);
    w.wout = randm(V, d, c.out_gain / std::sqrt(double(d)));
    w.bout = Vec<S>::Zero(V);
    w.wdir_r = randm(V, c.direct_r_dim, 1.0 / std::sqrt(double(c.direct_r_dim)));
    w.wdir_t = randm(V, c.direct_t_dim, 1.0 / std::sqrt(double(c.direct_t_dim)));
    auto randv = [&](int n) {
      Vec<S> v(n);
      for (int i = 0; i < n; ++i) v(i) = S(nd(rng) / std::sqrt(double(n)));
      return v;
    };
    w.gate_cr = randv(c.gate_copy_r_dim);
    w.gate_ct = randv(c.gate_copy_t_dim);
    w.gate_sr = randv(c.gate_start_r_dim);
  }

  std::vector<int> tokenize_text(const std::string& text) const {
    auto ids = bytes_to_ids(text, cfg.full_byte());
    if (static_cast<int>(ids.size()) > cfg.max_text_tokens)
      ids.resize(cfg.max_text_tokens);
    return ids;
  }

  std::string detok(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id < kByteBase || id >= cfg.vocab) continue;  // specials render empty
      out.push_back(static_cast<char>(id_to_byte(id, cfg.full_byte())));
    }
    return out;
  }

  // BOS + context bytes + SEP; context truncated to fit the text cap.
  std::vector<int> prompt_tokens(const ChatContext& ctx) const {
    std::string text = ctx.system_text ? *ctx.system_text + "\n" + ctx.user_text
                                       : ctx.user_text;
    auto ids = bytes_to_ids(text, cfg.full_byte());
    const std::size_t cap = static_cast<std::size_t>(cfg.max_text_tokens) - 2;
    if (ids.size() > cap) ids.resize(cap);
    std::vector<int> out;
    out.reserve(ids.size() + 2);
    out.push_back(kBos);
    out.insert(out.end(), ids.begin(), ids.end());
    out.push_back(kSep);
    return out;
  }

  // Input embeddings for image + text tokens.
  Mat<S> embed(const ImageTensor& img, const std::vector<int>& text, int gen_start) const {
    const int d = cfg.dmodel, P = cfg.patch;
    const int stotal = n_img + static_cast<int>(text.size());
    Mat<S> x(stotal, d);
    const int py_n = cfg.height / P, px_n = cfg.width / P;
    Vec<S> pv(P * P * cfg.channels);
    for (int pi = 0; pi < n_img; ++pi) {
      const int py = pi / px_n, px = pi % px_n;
      int idx = 0;
      for (int c = 0; c < cfg.channels; ++c)
        for (int y = 0; y < P; ++y)
          for (int xx = 0; xx < P; ++xx)
            pv(idx++) = S(img.at(c, py * P + y, px * P + xx) - 0.5);
      x.row(pi) = (w.wpatch * pv + w.bpatch).transpose() + w.pos_abs.row(pi);
    }
    for (std::size_t k = 0; k < text.size(); ++k) {
      const int i = n_img + static_cast<int>(k);
      x.row(i) = w.emb.row(text[k]) + w.pos_abs.row(i);
      if (static_cast<int>(k) >= gen_start)
        x.row(i) += w.pos_gen.row(static_cast<int>(k) - gen_start);
    }
    return x;
  }

  // Full causal forward over the embedded sequence.
  Mat<S> transformer(const Mat<S>& x0, ForwardCache<S>* cache) const {
    const int stotal = static_cast<int>(x0.rows()), d = cfg.dmodel;
    Mat<S> x = x0;
    if (cache) cache->layers.resize(cfg.layers);
    const S inv_sqrt_dh = S(1.0 / std::sqrt(double(dh)));
    for (int l = 0; l < cfg.layers; ++l) {
      const auto& L = w.layers[l];
      LayerCache<S> local;
      LayerCache<S>& c = cache ? cache->layers[l] : local;
      Mat<S> a = layernorm<S>(x, L.ln1_g, L.ln1_b, c.xhat1, c.istd1);
      c.q = a * L.wq.transpose();
      c.q.rowwise() += L.bq.transpose();
      c.k = a * L.wk.transpose();
      c.k.rowwise() += L.bk.transpose();
      c.v = a * L.wv.transpose();
      c.v.rowwise() += L.bv.transpose();
      c.attn.assign(cfg.heads, Mat<S>());
      Mat<S> o(stotal, d);
      for (int h = 0; h < cfg.heads; ++h) {
        auto qh = c.q.middleCols(h * dh, dh);
        auto kh = c.k.middleCols(h * dh, dh);
        auto vh = c.v.middleCols(h * dh, dh);
        Mat<S> sc = qh * kh.transpose() * inv_sqrt_dh;
        Mat<S>& p = c.attn[h];
        p.resize(stotal, stotal);
        for (int i = 0; i < stotal; ++i) {
          const S mx = sc.row(i).head(i + 1).maxCoeff();
          S z = S(0);
          for (int j = 0; j <= i; ++j) {
            const S e = std::exp(sc(i, j) - mx);
            p(i, j) = e;
            z += e;
          }
          for (int j = 0; j <= i; ++j) p(i, j) /= z;
          for (int j = i + 1; j < stotal; ++j) p(i, j) = S(0);
        }
        o.middleCols(h * dh, dh) = p * vh;
      }
      Mat<S> aout = o * L.wo.transpose();
      aout.rowwise() += L.bo.transpose();
      x += aout;
      Mat<S> b = layernorm<S>(x, L.ln2_g, L.ln2_b, c.xhat2, c.istd2);
      c.h1 = b * L.w1.transpose();
      c.h1.rowwise() += L.b1.transpose();
      Mat<S> g = c.h1.unaryExpr([](S v) { return gelu(v); });
      Mat<S> m = g * L.w2.transpose();
      m.rowwise() += L.b2.transpose();
      x += m;
    }
    ForwardCache<S> scratch;
    ForwardCache<S>& fc = cache ? *cache : scratch;
    Mat<S> f = layernorm<S>(x, w.lnf_g, w.lnf_b, fc.xhatf, fc.istdf);
    if (cache) cache->f = f;
    return f;
  }

  // Backward from dF (gradient at the final LN output) to the image pixels.
  ImageTensor transformer_backward(const Mat<S>& df, const ForwardCache<S>& c) const {
    const int stotal = static_cast<int>(df.rows()), d = cfg.dmodel;
    const S inv_sqrt_dh = S(1.0 / std::sqrt(double(dh)));
    Mat<S> dx = layernorm_backward<S>(df, c.xhatf, c.istdf, w.lnf_g);
    for (int l = cfg.layers - 1; l >= 0; --l) {
      const auto& L = w.layers[l];
      const auto& lc = c.layers[l];
      // MLP branch
      Mat<S> dg = dx * L.w2;  // S x dff
      Mat<S> dh1 =
          dg.array() * lc.h1.unaryExpr([](S v) { return gelu_grad(v); }).array();
      Mat<S> db = dh1.matrix() * L.w1;  // S x d
      dx += layernorm_backward<S>(db, lc.xhat2, lc.istd2, L.ln2_g);
      // attention branch
      Mat<S> do_ = dx * L.wo;  // S x d
      Mat<S> dq(stotal, d), dk(stotal, d), dv(stotal, d);
      for (int h = 0; h < cfg.heads; ++h) {
        auto doh = do_.middleCols(h * dh, dh);
        auto vh = lc.v.middleCols(h * dh, dh);
        auto qh = lc.q.middleCols(h * dh, dh);
        auto kh = lc.k.middleCols(h * dh, dh);
        const Mat<S>& p = lc.attn[h];
        Mat<S> dp = doh * vh.transpose();        // S x S
        dv.middleCols(h * dh, dh) = p.transpose() * doh;
        // softmax backward (rows)
        Mat<S> ds(stotal, stotal);
        for (int i = 0; i < stotal; ++i) {
          S dot = S(0);
          for (int j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
          for (int j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot);
          for (int j = i + 1; j < stotal; ++j) ds(i, j) = S(0);
        }
        dq.middleCols(h * dh, dh) = ds * kh * inv_sqrt_dh;
        dk.middleCols(h * dh, dh) = ds.transpose() * qh * inv_sqrt_dh;
      }
      Mat<S> da = dq * L.wq + dk * L.wk + dv * L.wv;
      dx += layernorm_backward<S>(da, lc.xhat1, lc.istd1, L.ln1_g);
    }
    // image rows -> pixels
    ImageTensor grad({cfg.channels, cfg.height, cfg.width}, 0.0);
    const int P = cfg.patch, px_n = cfg.width / P;
    for (int pi = 0; pi < n_img; ++pi) {
      Vec<S> dpv = w.wpatch.transpose() * dx.row(pi).transpose();
      const int py = pi / px_n, px = pi % px_n;
      int idx = 0;
      for (int ch = 0; ch < cfg.channels; ++ch)
        for (int y = 0; y < P; ++y)
          for (int xx = 0; xx < P; ++xx)
            grad.at(ch, py * P + y, px * P + xx) = double(dpv(idx++));
    }
    return grad;
  }

  // Gate preactivation slice dot products read straight off the pixels.
  S slice_dot(const ImageTensor& img, std::size_t ofs, int block, const Vec<S>& v) const {
    S acc = S(0);
    const std::size_t base = ofs + std::size_t(block) * v.size();
    for (int i = 0; i < v.size(); ++i)
      acc += v(i) * S(img.values[base + i] - 0.5);
    return acc;
  }

  static S sigmoid(S x) { return S(1) / (S(1) + std::exp(-x)); }

  // Copy-head distributions and pixel-driven gates for the row predicting
  // generation position t. k is the text index the row is read at, so text[k]
  // is the previously emitted token; ctx_len counts context byte tokens.
  PtrCache<S> pointer_row(const ImageTensor& img, const std::vector<int>& text, int k,
                          int t, int ctx_len) const {
    PtrCache<S> pc;
    pc.r = t;
    pc.t_tail = t - ctx_len;
    const int V = cfg.vocab;
    pc.vec_copy = Vec<S>::Zero(V);
    pc.vec_start = Vec<S>::Zero(V);

    S pre_copy = S(cfg.gate_bias), pre_start = S(cfg.gate_bias);
    const S gg = S(cfg.gate_gain);
    if (t >= 0 && t < cfg.direct_r_blocks) {
      pre_copy += gg * slice_dot(img, ofs_gc, t, w.gate_cr);
      pre_start += gg * slice_dot(img, ofs_gs, t, w.gate_sr);
    }
    if (pc.t_tail >= 0 && pc.t_tail < cfg.direct_t_blocks)
      pre_copy += gg * slice_dot(img, ofs_gt, pc.t_tail, w.gate_ct);
    pc.g_copy = sigmoid(pre_copy);
    pc.g_start = sigmoid(pre_start);

    // Start head: one-hot on the first context byte (the token after BOS).
    if (ctx_len >= 1) pc.vec_start(text[1]) = S(1);

    // Induction head over the prompt context positions 1..ctx_len. Tiers:
    // an explicit two-token history match beats the BOS-wildcard match (which
    // lets the second copied character bind), which beats a bare
    // previous-token match. Ties within the winning tier share the mass;
    // specials never receive any.
    const int last = text[k];
    const int second_last = k >= 1 ? text[k - 1] : -1;
    std::vector<int> strong, wild, weak;
    for (int c = 1; c <= ctx_len; ++c) {
      if (text[c - 1] != last) continue;
      if (c >= 2 && text[c - 2] == second_last)
        strong.push_back(c);
      else if (c >= 2 && text[c - 2] == kBos)
        wild.push_back(c);
      else
        weak.push_back(c);
    }
    const std::vector<int>& tier =
        !strong.empty() ? strong : (!wild.empty() ? wild : weak);
    for (int c : tier)
      if (text[c] >= kByteBase) pc.vec_copy(text[c]) += S(1) / S(tier.size());
    return pc;
  }

  void add_pointer_logits(Eigen::Ref<Eigen::Matrix<S, 1, Eigen::Dynamic>> logits,
                          const PtrCache<S>& pc) const {
    const S gamma = S(cfg.pointer_gamma);
    logits += (gamma * pc.g_copy) * pc.vec_copy.transpose() +
              (gamma * pc.g_start) * pc.vec_start.transpose();
  }

  // Direct position-addressed readouts from the pixel slices.
  void add_direct_logits(Eigen::Ref<Eigen::Matrix<S, 1, Eigen::Dynamic>> logits,
                         const ImageTensor& img, int t, int ctx_len) const {
    const S rho = S(cfg.direct_gain);
    if (t >= 0 && t < cfg.direct_r_blocks) {
      Vec<S> x(cfg.direct_r_dim);
      const std::size_t base = ofs_a + std::size_t(t) * cfg.direct_r_dim;
      for (int i = 0; i < cfg.direct_r_dim; ++i) x(i) = S(img.values[base + i] - 0.5);
      logits += rho * (w.wdir_r * x).transpose();
    }
    const int tt = t - ctx_len;
    if (tt >= 0 && tt < cfg.direct_t_blocks) {
      Vec<S> x(cfg.direct_t_dim);
      const std::size_t base = ofs_b + std::size_t(tt) * cfg.direct_t_dim;
      for (int i = 0; i < cfg.direct_t_dim; ++i) x(i) = S(img.values[base + i] - 0.5);
      logits += rho * (w.wdir_t * x).transpose();
    }
  }

  // Teacher-forced logits rows for gen, with optional caches for backward.
  Mat<S> forward_teacher(const ImageTensor& img, const std::vector<int>& prompt,
                         const std::vector<int>& gen, ForwardCache<S>* cache,
                         std::vector<PtrCache<S>>* ptr_cache,
                         std::vector<int>* text_out) const {
    const int T = static_cast<int>(gen.size());
    std::vector<int> text = prompt;
    text.insert(text.end(), gen.begin(), gen.end() - 1);  // drop last target token
    if (static_cast<int>(text.size()) > 2 * cfg.max_text_tokens)
      throw ConfigError("toy vlm: sequence exceeds context cap");
    const int gen_start = static_cast<int>(prompt.size());
    Mat<S> x0 = embed(img, text, gen_start);
    ForwardCache<S> scratch;
    ForwardCache<S>& fc = cache ? *cache : scratch;
    Mat<S> f = transformer(x0, &fc);
    // rows t = 0..T-1 read at text index gen_start - 1 + t
    const int ctx_len = gen_start - 2;
    Mat<S> logits(T, cfg.vocab);
    if (ptr_cache) ptr_cache->resize(T);
    for (int t = 0; t < T; ++t) {
      const int k = gen_start - 1 + t;
      const int i = n_img + k;
      logits.row(t) = (w.wout * f.row(i).transpose() + w.bout).transpose();
      add_direct_logits(logits.row(t), img, t, ctx_len);
      PtrCache<S> pc = pointer_row(img, text, k, t, ctx_len);
      add_pointer_logits(logits.row(t), pc);
      if (ptr_cache) (*ptr_cache)[t] = std::move(pc);
    }
    if (!logits.allFinite()) {
      for (int t = 0; t < T; ++t)
        if (!logits.row(t).allFinite())
          throw NumericalError("toy vlm: non-finite logits at output position " +
                               std::to_string(t));
    }
    if (text_out) *text_out = std::move(text);
    return logits;
  }

  // Backward given per-row logit gradients.
  ImageTensor backward_teacher(const Mat<S>& dlogits, const ForwardCache<S>& fc,
                               const std::vector<PtrCache<S>>& ptr, int gen_start) const {
    const int T = static_cast<int>(dlogits.rows());
    const int stotal = static_cast<int>(fc.f.rows());
    Mat<S> df = Mat<S>::Zero(stotal, cfg.dmodel);
    for (int t = 0; t < T; ++t) {
      const int i = n_img + gen_start - 1 + t;
      df.row(i) += dlogits.row(t) * w.wout;
    }
    ImageTensor grad = transformer_backward(df, fc);

    const S gamma = S(cfg.pointer_gamma);
    const S rho = S(cfg.direct_gain);
    const S gg = S(cfg.gate_gain);
    auto scatter = [&](std::size_t ofs, int block, const Vec<S>& v, S coeff) {
      const std::size_t base = ofs + std::size_t(block) * v.size();
      for (int i = 0; i < v.size(); ++i) grad.values[base + i] += double(coeff * v(i));
    };
    for (int t = 0; t < T; ++t) {
      const PtrCache<S>& pc = ptr[t];
      // direct readouts
      if (pc.r >= 0 && pc.r < cfg.direct_r_blocks) {
        Vec<S> dx = rho * (w.wdir_r.transpose() * dlogits.row(t).transpose());
        const std::size_t base = ofs_a + std::size_t(pc.r) * cfg.direct_r_dim;
        for (int i = 0; i < cfg.direct_r_dim; ++i) grad.values[base + i] += double(dx(i));
      }
      if (pc.t_tail >= 0 && pc.t_tail < cfg.direct_t_blocks) {
        Vec<S> dx = rho * (w.wdir_t.transpose() * dlogits.row(t).transpose());
        const std::size_t base = ofs_b + std::size_t(pc.t_tail) * cfg.direct_t_dim;
        for (int i = 0; i < cfg.direct_t_dim; ++i) grad.values[base + i] += double(dx(i));
      }
      // gates
      const S dg_copy = gamma * dlogits.row(t).dot(pc.vec_copy.transpose());
      const S dpre_copy = dg_copy * pc.g_copy * (S(1) - pc.g_copy) * gg;
      const S dg_start = gamma * dlogits.row(t).dot(pc.vec_start.transpose());
      const S dpre_start = dg_start * pc.g_start * (S(1) - pc.g_start) * gg;
      if (pc.r >= 0 && pc.r < cfg.direct_r_blocks) {
        scatter(ofs_gc, pc.r, w.gate_cr, dpre_copy);
        scatter(ofs_gs, pc.r, w.gate_sr, dpre_start);
      }
      if (pc.t_tail >= 0 && pc.t_tail < cfg.direct_t_blocks)
        scatter(ofs_gt, pc.t_tail, w.gate_ct, dpre_copy);
    }
    return grad;
  }

  // Greedy decoding with a per-layer KV cache.
  std::vector<int> greedy_generate(const ImageTensor& img, const std::vector<int>& prompt,
                                   int max_tokens) const {
    const int d = cfg.dmodel;
    const S inv_sqrt_dh = S(1.0 / std::sqrt(double(dh)));
    std::vector<Mat<S>> kc(cfg.layers), vc(cfg.layers);
    const int gen_start = static_cast<int>(prompt.size());
    const int max_total = gen_start + std::min(max_tokens, cfg.max_text_tokens);
    for (int l = 0; l < cfg.layers; ++l) {
      kc[l].resize(n_img + max_total, d);
      vc[l].resize(n_img + max_total, d);
    }
    std::vector<int> text = prompt;
    std::vector<int> out;

    auto ln_row = [&](const Eigen::Matrix<S, 1, Eigen::Dynamic>& x, const Vec<S>& g,
                      const Vec<S>& b) {
      const S mu = x.mean();
      const S var = (x.array() - mu).square().mean();
      const S is = S(1) / std::sqrt(var + S(kLnEps));
      Eigen::Matrix<S, 1, Eigen::Dynamic> y =
          (((x.array() - mu) * is) * g.transpose().array() + b.transpose().array())
              .matrix();
      return y;
    };

    // Runs one position through the net, appending K/V; returns final-LN row.
    auto step = [&](const Eigen::Matrix<S, 1, Eigen::Dynamic>& x_in, int pos) {
      Eigen::Matrix<S, 1, Eigen::Dynamic> x = x_in;
      for (int l = 0; l < cfg.layers; ++l) {
        const auto& L = w.layers[l];
        auto a = ln_row(x, L.ln1_g, L.ln1_b);
        Eigen::Matrix<S, 1, Eigen::Dynamic> q = a * L.wq.transpose() + L.bq.transpose();
        kc[l].row(pos) = a * L.wk.transpose() + L.bk.transpose();
        vc[l].row(pos) = a * L.wv.transpose() + L.bv.transpose();
        Eigen::Matrix<S, 1, Eigen::Dynamic> o(d);
        for (int h = 0; h < cfg.heads; ++h) {
          auto qh = q.middleCols(h * dh, dh);
          auto kh = kc[l].middleRows(0, pos + 1).middleCols(h * dh, dh);
          auto vh = vc[l].middleRows(0, pos + 1).middleCols(h * dh, dh);
          Vec<S> sc = kh * qh.transpose() * inv_sqrt_dh;
          const S mx = sc.maxCoeff();
          Vec<S> p = (sc.array() - mx).exp();
          p /= p.sum();
          o.middleCols(h * dh, dh) = p.transpose() * vh;
        }
        x += o * L.wo.transpose() + L.bo.transpose();
        auto b = ln_row(x, L.ln2_g, L.ln2_b);
        Eigen::Matrix<S, 1, Eigen::Dynamic> h1 =
            b * L.w1.transpose() + L.b1.transpose();
        Eigen::Matrix<S, 1, Eigen::Dynamic> g =
            h1.unaryExpr([](S v) { return gelu(v); });
        x += g * L.w2.transpose() + L.b2.transpose();
      }
      return ln_row(x, w.lnf_g, w.lnf_b);
    };

    Mat<S> x0 = embed(img, text, gen_start);
    Eigen::Matrix<S, 1, Eigen::Dynamic> f;
    for (int i = 0; i < static_cast<int>(x0.rows()); ++i) f = step(x0.row(i), i);

    const int ctx_len = gen_start - 2;
    for (int produced = 0; produced < max_tokens; ++produced) {
      const int k = static_cast<int>(text.size()) - 1;  // current predictor index
      const int t = k - (gen_start - 1);                // generation index predicted
      Eigen::Matrix<S, 1, Eigen::Dynamic> logits =
          (w.wout * f.transpose() + w.bout).transpose();
      add_direct_logits(logits, img, t, ctx_len);
      add_pointer_logits(logits, pointer_row(img, text, k, t, ctx_len));
      if (!logits.allFinite())
        throw NumericalError("toy vlm: non-finite logits at generation step " +
                             std::to_string(produced));
      int next = 0;
      logits.maxCoeff(&next);
      if (next == kEos) break;
      out.push_back(next);
      if (static_cast<int>(text.size()) - gen_start >= cfg.max_text_tokens) break;
      text.push_back(next);
      const int kk = static_cast<int>(text.size()) - 1;
      const int i = n_img + kk;
      Eigen::Matrix<S, 1, Eigen::Dynamic> x =
          w.emb.row(next) + w.pos_abs.row(i) + w.pos_gen.row(kk - gen_start);
      f = step(x, i);
    }
    return out;
  }

  std::uint64_t checksum() const {
    std::uint64_t h = 14695981039346656037ull;
    auto hash_mat = [&h](const Mat<S>& m) {
      for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) {
          const double v = double(m(i, j));
          h = fnv1a(&v, sizeof(v), h);
        }
    };
    auto hash_vec = [&h](const Vec<S>& v) {
      for (int i = 0; i < v.size(); ++i) {
        const double x = double(v(i));
        h = fnv1a(&x, sizeof(x), h);
      }
    };
    hash_mat(w.wpatch);
    hash_vec(w.bpatch);
    hash_mat(w.emb);
    hash_mat(w.pos_abs);
    hash_mat(w.pos_gen);
    for (const auto& L : w.layers) {
      hash_vec(L.ln1_g); hash_vec(L.ln1_b); hash_vec(L.ln2_g); hash_vec(L.ln2_b);
      hash_mat(L.wq); hash_mat(L.wk); hash_mat(L.wv); hash_mat(L.wo);
      hash_vec(L.bq); hash_vec(L.bk); hash_vec(L.bv); hash_vec(L.bo);
      hash_mat(L.w1); hash_vec(L.b1); hash_mat(L.w2); hash_vec(L.b2);
    }
    hash_vec(w.lnf_g);
    hash_vec(w.lnf_b);
    hash_mat(w.wout);
    hash_vec(w.bout);
    hash_mat(w.wdir_r);
    hash_mat(w.wdir_t);
    hash_vec(w.gate_cr);
    hash_vec(w.gate_ct);
    hash_vec(w.gate_sr);
    return h;
  }
};

template <typename S>
class ToyVlmImpl : public Vlm {
 public:
  ToyVlmImpl(const ToyVlmConfig& cfg, std::uint64_t seed) { net_.init(cfg, seed); }

  std::string id() const override {
    return "toy-" + std::to_string(net_.seed) + "-" + hex64(net_.cfg.config_hash());
  }
  ImageShape image_shape() const override {
    return {net_.cfg.channels, net_.cfg.height, net_.cfg.width};
  }
  int vocab_size() const override { return net_.cfg.vocab; }
  bool reentrant() const override { return true; }

  TokenSequence tokenize(const std::string& text) const override {
    return TokenSequence{net_.tokenize_text(text)};
  }
  std::string detokenize(const TokenSequence& toks) const override {
    return net_.detok(toks.ids);
  }

  TokenSequence generate(const ImageTensor& image, const ChatContext& ctx,
                         int max_tokens) const override {
    check_image(image);
    if (max_tokens < 1) throw ConfigError("generate: max_tokens must be >= 1");
    return TokenSequence{net_.greedy_generate(image, net_.prompt_tokens(ctx), max_tokens)};
  }

  LogitsSeq teacher_forced_logits(const ImageTensor& image, const ChatContext& ctx,
                                  const TokenSequence& gen) const override {
    check_image(image);
    if (gen.empty()) throw ConfigError("teacher_forced_logits: gen must be nonempty");
    Mat<S> l = net_.forward_teacher(image, net_.prompt_tokens(ctx), gen.ids, nullptr,
                                    nullptr, nullptr);
    return l.template cast<double>();
  }

  LossGrad loss_and_image_grad(const ImageTensor& image, const ChatContext& ctx,
                               const Target& target) const override {
    check_image(image);
    std::vector<int> gen;
    const SoftLogits* soft = std::get_if<SoftLogits>(&target);
    if (soft) {
      gen = soft->gen.ids;
      if (soft->logits.rows() != static_cast<Eigen::Index>(gen.size()) ||
          soft->logits.cols() != net_.cfg.vocab)
        throw ConfigError("loss: soft target shape mismatch");
    } else {
      const auto& hard = std::get<HardText>(target);
      gen = net_.tokenize_text(hard.text);
      gen.push_back(kEos);
    }
    if (gen.empty()) throw ConfigError("loss: empty target");

    const auto prompt = net_.prompt_tokens(ctx);
    ForwardCache<S> fc;
    std::vector<PtrCache<S>> ptr;
    Mat<S> logits = net_.forward_teacher(image, prompt, gen, &fc, &ptr, nullptr);
    const int T = static_cast<int>(gen.size());
    Mat<S> dlogits(T, net_.cfg.vocab);
    double loss = 0.0;
    for (int t = 0; t < T; ++t) {
      // stable log-softmax
      const S mx = logits.row(t).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (logits.row(t).array() - mx).exp();
      const S z = e.sum();
      Eigen::Array<S, 1, Eigen::Dynamic> p = e / z;
      const double lse = double(mx) + std::log(double(z));
      if (soft) {
        Eigen::Array<double, 1, Eigen::Dynamic> trow =
            soft->logits.row(t).array();
        const double tmx = trow.maxCoeff();
        Eigen::Array<double, 1, Eigen::Dynamic> q = (trow - tmx).exp();
        q /= q.sum();
        loss += lse - (q * logits.row(t).array().template cast<double>()).sum();
        dlogits.row(t) =
            ((p.template cast<double>() - q) / double(T)).template cast<S>().matrix();
      } else {
        loss += lse - double(logits(t, gen[t]));
        dlogits.row(t) = (p / S(T)).matrix();
        dlogits(t, gen[t]) -= S(1) / S(T);
      }
    }
    loss /= T;
    if (!std::isfinite(loss)) throw NumericalError("loss: non-finite loss");

    LossGrad out;
    out.loss = loss;
    out.grad = net_.backward_teacher(dlogits, fc, ptr, static_cast<int>(prompt.size()));
    if (net_.cfg.grad_fault_injection) out.grad.values[0] += 1.0;
    return out;
  }

  std::uint64_t param_checksum() const override { return net_.checksum(); }

  const ToyNet<S>& net() const { return net_; }
  ToyNet<S>& net() { return net_; }

 private:
  ToyNet<S> net_;
};

}  // namespace

std::uint64_t ToyVlmConfig::config_hash() const {
  std::ostringstream ss;
  ss << vocab << "|" << channels << "x" << height << "x" << width << "|" << patch << "|"
     << dmodel << "|" << layers << "|" << heads << "|" << dff << "|" << max_text_tokens
     << "|" << (single_precision ? "f32" : "f64") << "|" << patch_gain << "|" << emb_gain
     << "|" << pos_gain << "|" << out_gain << "|" << direct_gain << "|" << pointer_gamma
     << "|" << gate_gain << "|" << gate_bias << "|" << direct_r_blocks << "x"
     << direct_r_dim << "|" << direct_t_blocks << "x" << direct_t_dim << "|"
     << gate_copy_r_dim << "," << gate_copy_t_dim << "," << gate_start_r_dim;
  return fnv1a(ss.str());
}

VlmPtr build_toy_vlm(const ToyVlmConfig& config, std::uint64_t seed) {
  if (config.single_precision)
    return std::make_shared<ToyVlmImpl<float>>(config, seed);
  return std::make_shared<ToyVlmImpl<double>>(config, seed);
}

namespace {

nlohmann::json config_to_json(const ToyVlmConfig& c) {
  return {{"vocab", c.vocab},         {"channels", c.channels},
          {"height", c.height},       {"width", c.width},
          {"patch", c.patch},         {"dmodel", c.dmodel},
          {"layers", c.layers},       {"heads", c.heads},
          {"dff", c.dff},             {"max_text_tokens", c.max_text_tokens},
          {"single_precision", c.single_precision},
          {"patch_gain", c.patch_gain}, {"emb_gain", c.emb_gain},
          {"pos_gain", c.pos_gain},   {"out_gain", c.out_gain},
          {"direct_gain", c.direct_gain}, {"pointer_gamma", c.pointer_gamma},
          {"gate_gain", c.gate_gain}, {"gate_bias", c.gate_bias},
          {"direct_r_blocks", c.direct_r_blocks}, {"direct_r_dim", c.direct_r_dim},
          {"direct_t_blocks", c.direct_t_blocks}, {"direct_t_dim", c.direct_t_dim},
          {"gate_copy_r_dim", c.gate_copy_r_dim},
          {"gate_copy_t_dim", c.gate_copy_t_dim},
          {"gate_start_r_dim", c.gate_start_r_dim}};
}

ToyVlmConfig config_from_json(const nlohmann::json& j) {
  ToyVlmConfig c;
  c.vocab = j.value("vocab", c.vocab);
  c.channels = j.value("channels", c.channels);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.patch = j.value("patch", c.patch);
  c.dmodel = j.value("dmodel", c.dmodel);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.dff = j.value("dff", c.dff);
  c.max_text_tokens = j.value("max_text_tokens", c.max_text_tokens);
  c.single_precision = j.value("single_precision", c.single_precision);
  c.patch_gain = j.value("patch_gain", c.patch_gain);
  c.emb_gain = j.value("emb_gain", c.emb_gain);
  c.pos_gain = j.value("pos_gain", c.pos_gain);
  c.out_gain = j.value("out_gain", c.out_gain);
  c.direct_gain = j.value("direct_gain", c.direct_gain);
  c.pointer_gamma = j.value("pointer_gamma", c.pointer_gamma);
  c.gate_gain = j.value("gate_gain", c.gate_gain);
  c.gate_bias = j.value("gate_bias", c.gate_bias);
  c.direct_r_blocks = j.value("direct_r_blocks", c.direct_r_blocks);
  c.direct_r_dim = j.value("direct_r_dim", c.direct_r_dim);
  c.direct_t_blocks = j.value("direct_t_blocks", c.direct_t_blocks);
  c.direct_t_dim = j.value("direct_t_dim", c.direct_t_dim);
  c.gate_copy_r_dim = j.value("gate_copy_r_dim", c.gate_copy_r_dim);
  c.gate_copy_t_dim = j.value("gate_copy_t_dim", c.gate_copy_t_dim);
  c.gate_start_r_dim = j.value("gate_start_r_dim", c.gate_start_r_dim);
  return c;
}

template <typename S>
const ToyNet<S>* as_toy(const VlmPtr& model) {
  auto* impl = dynamic_cast<const ToyVlmImpl<S>*>(model.get());
  return impl ? &impl->net() : nullptr;
}

}  // namespace

void save_toy_weights(const VlmPtr& model, const std::string& path) {
  std::uint64_t seed = 0;
  nlohmann::json cfg;
  std::uint64_t checksum = model->param_checksum();
  if (const auto* n = as_toy<float>(model)) {
    seed = n->seed;
    cfg = config_to_json(n->cfg);
  } else if (const auto* n = as_toy<double>(model)) {
    seed = n->seed;
    cfg = config_to_json(n->cfg);
  } else {
    throw ConfigError("save_toy_weights: not a toy model");
  }
  // Toy weights are fully determined by (config, seed); the snapshot stores
  // the manifest and relies on deterministic re-materialization.
  nlohmann::json manifest = {{"kind", "toy-vlm-snapshot"},
                             {"seed", seed},
                             {"config", cfg},
                             {"param_checksum", hex64(checksum)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("save_toy_weights: cannot write " + path);
  out << manifest.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
}

VlmPtr load_toy_vlm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("load_toy_vlm: cannot open " + path);
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("kind", "") != "toy-vlm-snapshot")
    throw ConfigError("load_toy_vlm: not a toy snapshot: " + path);
  ToyVlmConfig cfg = config_from_json(manifest.at("config"));
  VlmPtr model = build_toy_vlm(cfg, manifest.at("seed").get<std::uint64_t>());
  const std::string want = manifest.value("param_checksum", "");
  if (!want.empty() && want != hex64(model->param_checksum()))
    throw ConfigError("load_toy_vlm: checksum mismatch in " + path);
  return model;
}

void register_builtin_adapters() {
  static bool done = false;
  if (done) return;
  done = true;
  register_adapter("toy", [](const nlohmann::json& params) -> VlmPtr {
    ToyVlmConfig cfg = config_from_json(params);
    const std::uint64_t seed = params.value("seed", 0ull);
    return build_toy_vlm(cfg, seed);
  });
}

}  // namespace hijack
