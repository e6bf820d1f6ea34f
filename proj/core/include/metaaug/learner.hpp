#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metaaug/datastore.hpp"
#include "metaaug/episodic.hpp"
#include "metaaug/rng.hpp"

namespace metaaug {

enum class HeadKind { prototype, ridge };
enum class Precision { f32, f64 };

std::string_view to_string(HeadKind kind) noexcept;
std::string_view to_string(Precision precision) noexcept;
HeadKind parse_head(std::string_view text);
Precision parse_precision(std::string_view text);

// Four (or more) blocks of 3x3 conv (pad 1) -> ReLU -> 2x2 max-pool.
struct ArchConfig {
  Geometry input{3, 32, 32};
  std::vector<int> widths{16, 32, 64, 128};

  // Spatial size entering block `layer` (layer == widths.size() gives the output).
  std::pair<int, int> spatial(int layer) const;
  int embedding_dim() const;
  void validate() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct HeadConfig {
  HeadKind kind = HeadKind::ridge;
  double ridge_lambda = 1.0;
};

struct BlockSpec {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
  bool decay = true;
};

// Flat parameter vector with named blocks in declaration order:
// conv{i}.weight (column-major Cout x 9*Cin, column (ky*3+kx)*Cin + c), conv{i}.bias, ..., head.scale, head.bias.
// The same type holds gradients.
template <class S>
class ModelParams {
 public:
  using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  // All zeros except head.scale = 1.
  explicit ModelParams(ArchConfig arch);
  // He-normal conv weights, zero biases, scale 1, bias 0.
  static ModelParams initialize(ArchConfig arch, RngStream rng);
  static ModelParams zeros_like(const ModelParams& other);

  const ArchConfig& arch() const { return arch_; }
  const std::vector<BlockSpec>& blocks() const { return blocks_; }
  const BlockSpec& block(std::string_view name) const;
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  int layers() const { return static_cast<int>(arch_.widths.size()); }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }

  Eigen::Map<Matrix> conv_weight(int layer);
  Eigen::Map<const Matrix> conv_weight(int layer) const;
  Eigen::Map<Vector> conv_bias(int layer);
  Eigen::Map<const Vector> conv_bias(int layer) const;
  S& head_scale() { return values_[static_cast<Eigen::Index>(blocks_[blocks_.size() - 2].offset)]; }
  S head_scale() const { return values_[static_cast<Eigen::Index>(blocks_[blocks_.size() - 2].offset)]; }
  S& head_bias() { return values_[static_cast<Eigen::Index>(blocks_.back().offset)]; }
  S head_bias() const { return values_[static_cast<Eigen::Index>(blocks_.back().offset)]; }

  // 1 for entries subject to weight decay, 0 for the head scalars.
  Vector decay_mask() const;

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out(arch_);
    out.values() = values_.template cast<U>();
    return out;
  }

 private:
  ArchConfig arch_;
  std::vector<BlockSpec> blocks_;
  Vector values_;
};

std::size_t parameter_count(const ArchConfig& arch);

template <class S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Channels x (batch * H * W), column index = b*H*W + y*W + x.
template <class S>
MatrixX<S> to_network_input(std::span<const Image* const> images, const ChannelStats& stats,
                            const Geometry& geometry);

template <class S>
struct EmbedCache {
  struct Layer {
    MatrixX<S> cols;
    MatrixX<S> pre;
    std::vector<int> argmax;
  };
  std::vector<Layer> layers;
  int batch = 0;
};

// One D-vector per image (rows), order-preserving. Pass a cache to enable backward.
template <class S>
MatrixX<S> embed(const ModelParams<S>& params, const MatrixX<S>& input, int batch,
                 EmbedCache<S>* cache = nullptr);

// Accumulates d(loss)/d(params) for the conv blocks into `grad`.
template <class S>
void embed_backward(const ModelParams<S>& params, const EmbedCache<S>& cache,
                    const MatrixX<S>& d_embeddings, ModelParams<S>& grad);

template <class S>
struct HeadState {
  HeadKind kind = HeadKind::ridge;
  MatrixX<S> prototypes;  // N x D (prototype head)
  Eigen::Matrix<S, Eigen::Dynamic, 1> mass;
  MatrixX<S> weights;     // D x N (ridge head)
  MatrixX<S> dual;        // Z = (XX^T + lambda I)^-1 Y, n x N
  Eigen::LLT<MatrixX<S>> gram;
};

// prototype: label-weighted class means. ridge: W = X^T (X X^T + lambda I)^-1 Y.
template <class S>
HeadState<S> head_fit(const HeadConfig& head, const MatrixX<S>& support, const MatrixX<S>& labels);

// prototype: -||e - p_c||^2.  ridge: scale * (e W) + bias.
template <class S>
MatrixX<S> head_logits(const HeadState<S>& state, const MatrixX<S>& query, S scale, S bias);

struct FeatureMixRecord {
  std::vector<int> partner;
  std::vector<double> lambda;
};

// Pairs each row with a uniformly drawn other row; lambda ~ Beta(alpha, alpha).
template <class S>
std::pair<MatrixX<S>, MatrixX<S>> feature_mixup(const MatrixX<S>& embeddings,
                                                 const MatrixX<S>& labels, RngStream& rng,
                                                 double alpha, FeatureMixRecord* record = nullptr);

struct SoftmaxLoss {
  double loss = 0.0;
  double accuracy = 0.0;  // fraction of rows whose unique argmax logit is the label argmax
};

// Mean soft cross-entropy. When `d_logits` is given it receives d(loss)/d(logits).
template <class S>
SoftmaxLoss soft_cross_entropy(const MatrixX<S>& logits, const MatrixX<S>& labels,
                               MatrixX<S>* d_logits = nullptr);

template <class S>
struct LossValue {
  double loss = 0.0;
  double accuracy = 0.0;
  ModelParams<S> grad;
};

struct EpisodeScore {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Forward-only episode loss; shares every arithmetic step with loss_and_grad.
template <class S>
EpisodeScore episode_loss(const ModelParams<S>& params, const HeadConfig& head,
                          const Episode& episode, const ChannelStats& stats,
                          RngStream feature_rng);

template <class S>
LossValue<S> loss_and_grad(const ModelParams<S>& params, const HeadConfig& head,
                           const Episode& episode, const ChannelStats& stats,
                           RngStream feature_rng);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = true;
};

template <class S>
struct SgdState {
  Eigen::Matrix<S, Eigen::Dynamic, 1> velocity;
};

template <class S>
void sgd_step(ModelParams<S>& params, const ModelParams<S>& grad, SgdState<S>& state, double lr,
              const SgdConfig& cfg);

// Piecewise-constant learning rate: the rate of the last boundary <= epoch.
class LrSchedule {
 public:
  LrSchedule() = default;
  explicit LrSchedule(std::vector<std::pair<int, double>> steps);

  static LrSchedule desk_default();
  static LrSchedule paper();

  double rate(int epoch) const;
  const std::vector<std::pair<int, double>>& steps() const { return steps_; }

 private:
  std::vector<std::pair<int, double>> steps_{{0, 0.05}, {15, 0.005}, {25, 0.0005}};
};

}  // namespace metaaug
