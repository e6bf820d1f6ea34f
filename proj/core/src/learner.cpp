#include "metaaug/learner.hpp"

#include <algorithm>
#include <cmath>

#if defined(__SSE2__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

namespace metaaug {

std::string_view to_string(HeadKind kind) noexcept {
  return kind == HeadKind::prototype ? "prototype" : "ridge";
}

std::string_view to_string(Precision precision) noexcept {
  return precision == Precision::f32 ? "f32" : "f64";
}

HeadKind parse_head(std::string_view text) {
  if (text == "prototype" || text == "protonet") return HeadKind::prototype;
  if (text == "ridge" || text == "r2d2") return HeadKind::ridge;
  throw ConfigError("unknown head '" + std::string(text) + "'");
}

Precision parse_precision(std::string_view text) {
  if (text == "f32" || text == "32") return Precision::f32;
  if (text == "f64" || text == "64") return Precision::f64;
  throw ConfigError("unknown precision '" + std::string(text) + "'");
}

std::pair<int, int> ArchConfig::spatial(int layer) const {
  int h = input.height, w = input.width;
  for (int l = 0; l < layer; ++l) {
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

int ArchConfig::embedding_dim() const {
  const auto [h, w] = spatial(static_cast<int>(widths.size()));
  return widths.back() * h * w;
}

void ArchConfig::validate() const {
  if (widths.empty()) throw ConfigError("architecture needs at least one block");
  for (int w : widths)
    if (w < 1) throw ConfigError("block widths must be positive");
  if (input.channels < 1) throw ConfigError("input channels must be positive");
  for (int l = 0; l < static_cast<int>(widths.size()); ++l) {
    const auto [h, w] = spatial(l);
    if (h < 2 || w < 2)
      throw GeometryError("input " + input.str() + " too small for " +
                          std::to_string(widths.size()) + " pooling blocks");
  }
}

namespace {

std::vector<BlockSpec> layout(const ArchConfig& arch) {
  std::vector<BlockSpec> blocks;
  std::size_t offset = 0;
  int in = arch.input.channels;
  for (std::size_t l = 0; l < arch.widths.size(); ++l) {
    const int out = arch.widths[l];
    const std::size_t wcount = static_cast<std::size_t>(out) * 9 * static_cast<std::size_t>(in);
    blocks.push_back({"conv" + std::to_string(l) + ".weight", offset, wcount, true});
    offset += wcount;
    blocks.push_back({"conv" + std::to_string(l) + ".bias", offset, static_cast<std::size_t>(out), true});
    offset += static_cast<std::size_t>(out);
    in = out;
  }
  blocks.push_back({"head.scale", offset, 1, false});
  blocks.push_back({"head.bias", offset + 1, 1, false});
  return blocks;
}

template <class M>
bool all_finite(const M& m) {
  return m.allFinite();
}

// Saturated softmax gradients produce denormals, which are an order of
// magnitude slower on x86. Flushing them is deterministic.
class FlushDenormals {
 public:
  FlushDenormals() {
#if defined(__SSE2__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040);
#endif
  }
  ~FlushDenormals() {
#if defined(__SSE2__)
    _mm_setcsr(saved_);
#endif
  }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace

std::size_t parameter_count(const ArchConfig& arch) {
  const auto blocks = layout(arch);
  return blocks.back().offset + blocks.back().count;
}

template <class S>
ModelParams<S>::ModelParams(ArchConfig arch) : arch_(std::move(arch)) {
  arch_.validate();
  blocks_ = layout(arch_);
  values_ = Vector::Zero(static_cast<Eigen::Index>(blocks_.back().offset + blocks_.back().count));
  head_scale() = S(1);
}

template <class S>
ModelParams<S> ModelParams<S>::initialize(ArchConfig arch, RngStream rng) {
  ModelParams p(std::move(arch));
  int in = p.arch_.input.channels;
  for (int l = 0; l < p.layers(); ++l) {
    const double stddev = std::sqrt(2.0 / (9.0 * in));
    auto w = p.conv_weight(l);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(stddev * rng.normal());
    in = p.arch_.widths[static_cast<std::size_t>(l)];
  }
  return p;
}

template <class S>
ModelParams<S> ModelParams<S>::zeros_like(const ModelParams& other) {
  ModelParams p(other.arch_);
  p.values_.setZero();
  return p;
}

template <class S>
const BlockSpec& ModelParams<S>::block(std::string_view name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw ConfigError("no parameter block '" + std::string(name) + "'");
}

template <class S>
Eigen::Map<typename ModelParams<S>::Matrix> ModelParams<S>::conv_weight(int layer) {
  const auto& b = blocks_[static_cast<std::size_t>(2 * layer)];
  const int out = arch_.widths[static_cast<std::size_t>(layer)];
  return {values_.data() + b.offset, out, static_cast<Eigen::Index>(b.count / static_cast<std::size_t>(out))};
}

template <class S>
Eigen::Map<const typename ModelParams<S>::Matrix> ModelParams<S>::conv_weight(int layer) const {
  const auto& b = blocks_[static_cast<std::size_t>(2 * layer)];
  const int out = arch_.widths[static_cast<std::size_t>(layer)];
  return {values_.data() + b.offset, out, static_cast<Eigen::Index>(b.count / static_cast<std::size_t>(out))};
}

template <class S>
Eigen::Map<typename ModelParams<S>::Vector> ModelParams<S>::conv_bias(int layer) {
  const auto& b = blocks_[static_cast<std::size_t>(2 * layer + 1)];
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.count)};
}

template <class S>
Eigen::Map<const typename ModelParams<S>::Vector> ModelParams<S>::conv_bias(int layer) const {
  const auto& b = blocks_[static_cast<std::size_t>(2 * layer + 1)];
  return {values_.data() + b.offset, static_cast<Eigen::Index>(b.count)};
}

template <class S>
typename ModelParams<S>::Vector ModelParams<S>::decay_mask() const {
  Vector mask = Vector::Ones(values_.size());
  for (const auto& b : blocks_)
    if (!b.decay) mask.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.count)).setZero();
  return mask;
}

template <class S>
MatrixX<S> to_network_input(std::span<const Image* const> images, const ChannelStats& stats,
                            const Geometry& g) {
  check_stats(stats, g.channels);
  const Eigen::Index hw = static_cast<Eigen::Index>(g.height) * g.width;
  MatrixX<S> input(g.channels, hw * static_cast<Eigen::Index>(images.size()));
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& img = *images[b];
    if (img.geometry() != g)
      throw GeometryError("image geometry " + img.geometry().str() + " does not match network input " + g.str());
    for (int c = 0; c < g.channels; ++c) {
      const double m = stats.mean[static_cast<std::size_t>(c)];
      const double s = stats.stddev[static_cast<std::size_t>(c)];
      auto src = img.channel(c);
      for (Eigen::Index p = 0; p < hw; ++p)
        input(c, static_cast<Eigen::Index>(b) * hw + p) =
            static_cast<S>(normalize_value(static_cast<double>(src[static_cast<std::size_t>(p)]), m, s));
    }
  }
  return input;
}

namespace {

// cols row = (ky*3 + kx) * C + c, column = b*H*W + y*W + x.
template <class S>
void im2col(const MatrixX<S>& act, int channels, int h, int w, int batch, MatrixX<S>& cols) {
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  cols.resize(9 * channels, hw * batch);
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        S* dst = cols.col(b * hw + y * w + x).data();
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx, dst += channels) {
            const int xx = x + kx - 1;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) {
              std::fill(dst, dst + channels, S(0));
            } else {
              const S* src = act.col(b * hw + yy * w + xx).data();
              std::copy(src, src + channels, dst);
            }
          }
        }
      }
}

template <class S>
void col2im(const MatrixX<S>& cols, int channels, int h, int w, int batch, MatrixX<S>& act) {
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  act.setZero(channels, hw * batch);
  for (int b = 0; b < batch; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const S* src = cols.col(b * hw + y * w + x).data();
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          for (int kx = 0; kx < 3; ++kx, src += channels) {
            const int xx = x + kx - 1;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            S* dst = act.col(b * hw + yy * w + xx).data();
            for (int c = 0; c < channels; ++c) dst[c] += src[c];
          }
        }
      }
}

}  // namespace

template <class S>
MatrixX<S> embed(const ModelParams<S>& params, const MatrixX<S>& input, int batch,
                 EmbedCache<S>* cache) {
  const ArchConfig& arch = params.arch();
  int h = arch.input.height, w = arch.input.width;
  if (input.rows() != arch.input.channels ||
      input.cols() != static_cast<Eigen::Index>(batch) * h * w)
    throw GeometryError("network input shape does not match architecture " + arch.input.str());
  if (cache) {
    cache->layers.assign(static_cast<std::size_t>(params.layers()), {});
    cache->batch = batch;
  }

  MatrixX<S> act = input;
  MatrixX<S> cols;
  int in = arch.input.channels;
  for (int l = 0; l < params.layers(); ++l) {
    const int out = arch.widths[static_cast<std::size_t>(l)];
    im2col(act, in, h, w, batch, cols);
    MatrixX<S> pre = params.conv_weight(l) * cols;
    pre.colwise() += params.conv_bias(l);

    const int ho = h / 2, wo = w / 2;
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    const Eigen::Index hwo = static_cast<Eigen::Index>(ho) * wo;
    MatrixX<S> pooled(out, hwo * batch);
    std::vector<int> argmax;
    if (cache) argmax.resize(static_cast<std::size_t>(out) * static_cast<std::size_t>(hwo * batch));
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const Eigen::Index o = b * hwo + i * wo + j;
          const Eigen::Index base = b * hw + (2 * i) * w + 2 * j;
          const Eigen::Index window[4] = {base, base + 1, base + w, base + w + 1};
          S* dst = pooled.col(o).data();
          for (int c = 0; c < out; ++c) {
            Eigen::Index best = window[0];
            S value = std::max(pre(c, window[0]), S(0));
            for (int k = 1; k < 4; ++k) {
              const S v = std::max(pre(c, window[k]), S(0));
              if (v > value) {
                value = v;
                best = window[k];
              }
            }
            dst[c] = value;
            if (cache) argmax[static_cast<std::size_t>(o * out + c)] = static_cast<int>(best);
          }
        }
    if (cache) {
      auto& layer = cache->layers[static_cast<std::size_t>(l)];
      layer.cols = std::move(cols);
      layer.pre = std::move(pre);
      layer.argmax = std::move(argmax);
      cols = MatrixX<S>();
    }
    act = std::move(pooled);
    h = ho;
    w = wo;
    in = out;
  }

  const Eigen::Index cells = static_cast<Eigen::Index>(h) * w;
  MatrixX<S> embeddings(batch, static_cast<Eigen::Index>(in) * cells);
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < in; ++c)
      for (Eigen::Index p = 0; p < cells; ++p) embeddings(b, c * cells + p) = act(c, b * cells + p);
  return embeddings;
}

template <class S>
void embed_backward(const ModelParams<S>& params, const EmbedCache<S>& cache,
                    const MatrixX<S>& d_embeddings, ModelParams<S>& grad) {
  const ArchConfig& arch = params.arch();
  const int layers = params.layers();
  const int batch = cache.batch;
  auto [h, w] = arch.spatial(layers);
  const int last = arch.widths.back();
  const Eigen::Index cells = static_cast<Eigen::Index>(h) * w;

  MatrixX<S> d_out(last, cells * batch);
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < last; ++c)
      for (Eigen::Index p = 0; p < cells; ++p) d_out(c, b * cells + p) = d_embeddings(b, c * cells + p);

  for (int l = layers - 1; l >= 0; --l) {
    const auto& layer = cache.layers[static_cast<std::size_t>(l)];
    const int out = arch.widths[static_cast<std::size_t>(l)];
    const int in = l == 0 ? arch.input.channels : arch.widths[static_cast<std::size_t>(l - 1)];
    const auto [hl, wl] = arch.spatial(l);

    MatrixX<S> d_pre = MatrixX<S>::Zero(out, layer.pre.cols());
    const Eigen::Index pooled_cols = d_out.cols();
    for (Eigen::Index o = 0; o < pooled_cols; ++o)
      for (int c = 0; c < out; ++c) {
        const int idx = layer.argmax[static_cast<std::size_t>(o * out + c)];
        if (layer.pre(c, idx) > S(0)) d_pre(c, idx) += d_out(c, o);
      }
    grad.conv_bias(l) += d_pre.rowwise().sum();
    grad.conv_weight(l).noalias() += d_pre * layer.cols.transpose();
    if (l > 0) {
      const MatrixX<S> d_cols = params.conv_weight(l).transpose() * d_pre;
      col2im(d_cols, in, hl, wl, batch, d_out);
    }
  }
}

template <class S>
HeadState<S> head_fit(const HeadConfig& head, const MatrixX<S>& support, const MatrixX<S>& labels) {
  if (support.rows() != labels.rows()) throw GeometryError("support/label row mismatch");
  HeadState<S> state;
  state.kind = head.kind;
  if (head.kind == HeadKind::prototype) {
    state.mass = labels.colwise().sum().transpose();
    for (Eigen::Index c = 0; c < state.mass.size(); ++c)
      if (!(state.mass[c] > S(1e-12)))
        throw DataError("prototype head: class " + std::to_string(c) + " has zero support mass");
    state.prototypes = labels.transpose() * support;
    for (Eigen::Index c = 0; c < state.mass.size(); ++c) state.prototypes.row(c) /= state.mass[c];
    return state;
  }
  if (!(head.ridge_lambda > 0.0)) throw ConfigError("ridge lambda must be positive");
  MatrixX<S> gram = support * support.transpose();
  gram.diagonal().array() += static_cast<S>(head.ridge_lambda);
  state.gram.compute(gram);
  if (state.gram.info() != Eigen::Success) throw NumericError("head_fit");
  state.dual = state.gram.solve(labels);
  state.weights = support.transpose() * state.dual;
  return state;
}

template <class S>
MatrixX<S> head_logits(const HeadState<S>& state, const MatrixX<S>& query, S scale, S bias) {
  if (state.kind == HeadKind::prototype) {
    MatrixX<S> logits(query.rows(), state.prototypes.rows());
    for (Eigen::Index c = 0; c < state.prototypes.rows(); ++c)
      logits.col(c) = -(query.rowwise() - state.prototypes.row(c)).rowwise().squaredNorm();
    return logits;
  }
  MatrixX<S> logits = scale * (query * state.weights);
  logits.array() += bias;
  return logits;
}

template <class S>
std::pair<MatrixX<S>, MatrixX<S>> feature_mixup(const MatrixX<S>& e, const MatrixX<S>& y,
                                                 RngStream& rng, double alpha,
                                                 FeatureMixRecord* record) {
  const int n = static_cast<int>(e.rows());
  MatrixX<S> me(e.rows(), e.cols()), my(y.rows(), y.cols());
  if (record) {
    record->partner.assign(static_cast<std::size_t>(n), 0);
    record->lambda.assign(static_cast<std::size_t>(n), 1.0);
  }
  for (int i = 0; i < n; ++i) {
    int j = i;
    if (n > 1) {
      j = rng.uniform_int(0, n - 2);
      if (j >= i) ++j;
    }
    const double lambda = rng.beta(alpha, alpha);
    const S l = static_cast<S>(lambda), r = static_cast<S>(1.0 - lambda);
    me.row(i) = l * e.row(i) + r * e.row(j);
    my.row(i) = l * y.row(i) + r * y.row(j);
    if (record) {
      record->partner[static_cast<std::size_t>(i)] = j;
      record->lambda[static_cast<std::size_t>(i)] = lambda;
    }
  }
  return {std::move(me), std::move(my)};
}

template <class S>
SoftmaxLoss soft_cross_entropy(const MatrixX<S>& logits, const MatrixX<S>& labels,
                               MatrixX<S>* d_logits) {
  const Eigen::Index n = logits.rows();
  SoftmaxLoss out;
  if (d_logits) d_logits->resize(n, logits.cols());
  double total = 0.0;
  int correct = 0;
  for (Eigen::Index q = 0; q < n; ++q) {
    const S top = logits.row(q).maxCoeff();
    const auto shifted = (logits.row(q).array() - top).eval();
    const S lse = std::log(shifted.exp().sum());
    const auto log_p = (shifted - lse).eval();
    total += -static_cast<double>((labels.row(q).array() * log_p).sum());
    if (d_logits) {
      const S mass = labels.row(q).sum();
      d_logits->row(q) = ((log_p.exp() * mass - labels.row(q).array()) / static_cast<S>(n)).matrix();
    }
    Eigen::Index predicted = 0;
    logits.row(q).maxCoeff(&predicted);
    const bool tie = (logits.row(q).array() == logits(q, predicted)).count() > 1;
    Eigen::Index truth = 0;
    labels.row(q).maxCoeff(&truth);
    if (!tie && predicted == truth) ++correct;
  }
  out.loss = total / static_cast<double>(n);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return out;
}

namespace {

template <class S>
MatrixX<S> label_matrix(const std::vector<EpisodeSample>& set, int ways) {
  MatrixX<S> y(static_cast<Eigen::Index>(set.size()), ways);
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].label.size() != ways) throw GeometryError("label length does not match episode way");
    for (int c = 0; c < ways; ++c)
      y(static_cast<Eigen::Index>(i), c) = static_cast<S>(set[i].label.weights[static_cast<std::size_t>(c)]);
  }
  return y;
}

template <class S>
struct ForwardPass {
  EmbedCache<S> cache;
  MatrixX<S> support, query;  // after feature mixup
  MatrixX<S> support_labels, query_labels;
  FeatureMixRecord support_mix, query_mix;
  bool mixed_support = false, mixed_query = false;
  HeadState<S> state;
  MatrixX<S> logits;
  MatrixX<S> d_logits;
  SoftmaxLoss result;
};

template <class S>
ForwardPass<S> forward(const ModelParams<S>& params, const HeadConfig& head, const Episode& ep,
                       const ChannelStats& stats, RngStream rng, bool want_grad) {
  if (ep.support.empty() || ep.query.empty()) throw DataError("episode has an empty support or query set");
  ForwardPass<S> f;
  std::vector<const Image*> images;
  images.reserve(ep.support.size() + ep.query.size());
  for (const auto& s : ep.support) images.push_back(&s.image);
  for (const auto& s : ep.query) images.push_back(&s.image);
  const MatrixX<S> input = to_network_input<S>(images, stats, params.arch().input);
  const MatrixX<S> emb = embed(params, input, static_cast<int>(images.size()), want_grad ? &f.cache : nullptr);
  if (!all_finite(emb)) throw NumericError("embed");

  const Eigen::Index ns = static_cast<Eigen::Index>(ep.support.size());
  f.support = emb.topRows(ns);
  f.query = emb.bottomRows(emb.rows() - ns);
  f.support_labels = label_matrix<S>(ep.support, ep.ways);
  f.query_labels = label_matrix<S>(ep.query, ep.ways);

  if (ep.feature_mixup.support) {
    RngStream r = rng.fork(1);
    std::tie(f.support, f.support_labels) =
        feature_mixup(f.support, f.support_labels, r, ep.feature_mixup.alpha, &f.support_mix);
    f.mixed_support = true;
  }
  if (ep.feature_mixup.query) {
    RngStream r = rng.fork(2);
    std::tie(f.query, f.query_labels) =
        feature_mixup(f.query, f.query_labels, r, ep.feature_mixup.alpha, &f.query_mix);
    f.mixed_query = true;
  }

  f.state = head_fit(head, f.support, f.support_labels);
  if (head.kind == HeadKind::ridge ? !all_finite(f.state.weights) : !all_finite(f.state.prototypes))
    throw NumericError("head_fit");
  f.logits = head_logits(f.state, f.query, params.head_scale(), params.head_bias());
  if (!all_finite(f.logits)) throw NumericError("logits");
  f.result = soft_cross_entropy(f.logits, f.query_labels, want_grad ? &f.d_logits : nullptr);
  if (!std::isfinite(f.result.loss)) throw NumericError("loss");
  return f;
}

template <class S>
void unmix(MatrixX<S>& d_mixed, const FeatureMixRecord& record) {
  MatrixX<S> d = MatrixX<S>::Zero(d_mixed.rows(), d_mixed.cols());
  for (Eigen::Index i = 0; i < d_mixed.rows(); ++i) {
    const double lambda = record.lambda[static_cast<std::size_t>(i)];
    d.row(i) += static_cast<S>(lambda) * d_mixed.row(i);
    d.row(record.partner[static_cast<std::size_t>(i)]) += static_cast<S>(1.0 - lambda) * d_mixed.row(i);
  }
  d_mixed = std::move(d);
}

}  // namespace

template <class S>
EpisodeScore episode_loss(const ModelParams<S>& params, const HeadConfig& head, const Episode& episode,
                          const ChannelStats& stats, RngStream feature_rng) {
  const FlushDenormals ftz;
  const auto f = forward(params, head, episode, stats, feature_rng, false);
  return {f.result.loss, f.result.accuracy};
}

template <class S>
LossValue<S> loss_and_grad(const ModelParams<S>& params, const HeadConfig& head, const Episode& episode,
                           const ChannelStats& stats, RngStream feature_rng) {
  const FlushDenormals ftz;
  auto f = forward(params, head, episode, stats, feature_rng, true);
  LossValue<S> out{f.result.loss, f.result.accuracy, ModelParams<S>::zeros_like(params)};
  const MatrixX<S>& dl = f.d_logits;

  MatrixX<S> d_support, d_query;
  if (head.kind == HeadKind::ridge) {
    const S scale = params.head_scale();
    const MatrixX<S> raw = f.query * f.state.weights;
    out.grad.head_scale() = (dl.array() * raw.array()).sum();
    out.grad.head_bias() = dl.sum();
    const MatrixX<S> d_raw = scale * dl;
    d_query = d_raw * f.state.weights.transpose();
    const MatrixX<S> d_weights = f.query.transpose() * d_raw;  // D x N
    d_support = f.state.dual * d_weights.transpose();
    const MatrixX<S> d_dual = f.support * d_weights;            // n x N
    const MatrixX<S> u = f.state.gram.solve(d_dual);
    const MatrixX<S> d_gram = -u * f.state.dual.transpose();
    d_support.noalias() += (d_gram + d_gram.transpose()) * f.support;
  } else {
    const auto& protos = f.state.prototypes;
    d_query = MatrixX<S>::Zero(f.query.rows(), f.query.cols());
    MatrixX<S> d_protos = MatrixX<S>::Zero(protos.rows(), protos.cols());
    for (Eigen::Index c = 0; c < protos.rows(); ++c) {
      const MatrixX<S> diff = f.query.rowwise() - protos.row(c);
      const auto w = dl.col(c);
      d_query.noalias() -= S(2) * (w.asDiagonal() * diff);
      d_protos.row(c) = S(2) * (w.transpose() * diff);
    }
    for (Eigen::Index c = 0; c < protos.rows(); ++c) d_protos.row(c) /= f.state.mass[c];
    d_support = f.support_labels * d_protos;
  }

  if (f.mixed_support) unmix(d_support, f.support_mix);
  if (f.mixed_query) unmix(d_query, f.query_mix);

  MatrixX<S> d_emb(d_support.rows() + d_query.rows(), d_support.cols());
  d_emb.topRows(d_support.rows()) = d_support;
  d_emb.bottomRows(d_query.rows()) = d_query;
  embed_backward(params, f.cache, d_emb, out.grad);
  if (!out.grad.values().allFinite()) throw NumericError("backward");
  return out;
}

template <class S>
void sgd_step(ModelParams<S>& params, const ModelParams<S>& grad, SgdState<S>& state, double lr,
              const SgdConfig& cfg) {
  using Vector = typename ModelParams<S>::Vector;
  if (state.velocity.size() != params.values().size()) state.velocity = Vector::Zero(params.values().size());
  const S wd = static_cast<S>(cfg.weight_decay);
  const S mu = static_cast<S>(cfg.momentum);
  Vector d = grad.values();
  if (cfg.weight_decay != 0.0) d += wd * params.decay_mask().cwiseProduct(params.values());
  if (cfg.momentum != 0.0) {
    state.velocity = mu * state.velocity + d;
    if (cfg.nesterov)
      d += mu * state.velocity;
    else
      d = state.velocity;
  }
  params.values() -= static_cast<S>(lr) * d;
}

LrSchedule::LrSchedule(std::vector<std::pair<int, double>> steps) : steps_(std::move(steps)) {
  if (steps_.empty() || steps_.front().first != 0)
    throw ConfigError("learning-rate schedule must start at epoch 0");
  for (std::size_t i = 1; i < steps_.size(); ++i)
    if (steps_[i].first <= steps_[i - 1].first)
      throw ConfigError("learning-rate boundaries must be strictly increasing");
  for (const auto& [epoch, rate] : steps_)
    if (!(rate >= 0.0)) throw ConfigError("learning rates must be non-negative");
}

LrSchedule LrSchedule::desk_default() { return LrSchedule({{0, 0.05}, {15, 0.005}, {25, 0.0005}}); }

LrSchedule LrSchedule::paper() {
  return LrSchedule({{0, 0.1}, {20, 0.006}, {40, 0.0012}, {50, 0.00024}});
}

double LrSchedule::rate(int epoch) const {
  double r = steps_.front().second;
  for (const auto& [boundary, rate] : steps_)
    if (epoch >= boundary) r = rate;
  return r;
}

#define METAAUG_INSTANTIATE_LEARNER(S)                                                             \
  template class ModelParams<S>;                                                                   \
  template MatrixX<S> to_network_input<S>(std::span<const Image* const>, const ChannelStats&,      \
                                          const Geometry&);                                        \
  template MatrixX<S> embed(const ModelParams<S>&, const MatrixX<S>&, int, EmbedCache<S>*);        \
  template void embed_backward(const ModelParams<S>&, const EmbedCache<S>&, const MatrixX<S>&,     \
                               ModelParams<S>&);                                                   \
  template HeadState<S> head_fit(const HeadConfig&, const MatrixX<S>&, const MatrixX<S>&);         \
  template MatrixX<S> head_logits(const HeadState<S>&, const MatrixX<S>&, S, S);                   \
  template std::pair<MatrixX<S>, MatrixX<S>> feature_mixup(const MatrixX<S>&, const MatrixX<S>&,   \
                                                           RngStream&, double, FeatureMixRecord*); \
  template SoftmaxLoss soft_cross_entropy(const MatrixX<S>&, const MatrixX<S>&, MatrixX<S>*);      \
  template EpisodeScore episode_loss(const ModelParams<S>&, const HeadConfig&, const Episode&,     \
                                     const ChannelStats&, RngStream);                              \
  template LossValue<S> loss_and_grad(const ModelParams<S>&, const HeadConfig&, const Episode&,    \
                                      const ChannelStats&, RngStream);                             \
  template void sgd_step(ModelParams<S>&, const ModelParams<S>&, SgdState<S>&, double,             \
                         const SgdConfig&);

METAAUG_INSTANTIATE_LEARNER(float)
METAAUG_INSTANTIATE_LEARNER(double)

#undef METAAUG_INSTANTIATE_LEARNER

}  // namespace metaaug
