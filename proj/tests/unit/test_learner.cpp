#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "metaaug/learner.hpp"
#include "test_support.hpp"

using namespace metaaug;
using metaaug::testing::tiny_instance;

namespace {

using Mat = MatrixX<double>;

Mat random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen) {
  std::normal_distribution<double> n;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
  return m;
}

Mat one_hot_rows(const std::vector<int>& cls, int ways) {
  Mat y = Mat::Zero(static_cast<Eigen::Index>(cls.size()), ways);
  for (std::size_t i = 0; i < cls.size(); ++i) y(static_cast<Eigen::Index>(i), cls[i]) = 1.0;
  return y;
}

}  // namespace

TEST(Arch, EmbeddingDimension) {
  EXPECT_EQ((ArchConfig{{3, 32, 32}, {16, 32, 64, 128}}.embedding_dim()), 512);
  EXPECT_EQ((ArchConfig{{3, 32, 32}, {8, 16, 32, 32}}.embedding_dim()), 128);
  EXPECT_EQ((ArchConfig{{3, 84, 84}, {64, 64, 64, 64}}.embedding_dim()), 64 * 5 * 5);
  EXPECT_THROW((ArchConfig{{3, 8, 8}, {2, 2, 2, 2}}.validate()), GeometryError);
  EXPECT_THROW((ArchConfig{{3, 32, 32}, {}}.validate()), ConfigError);
}

TEST(Arch, ParameterLayout) {
  const ArchConfig arch{{3, 32, 32}, {4, 8}};
  const ModelParams<float> p(arch);
  EXPECT_EQ(p.size(), parameter_count(arch));
  EXPECT_EQ(p.size(), static_cast<std::size_t>(4 * 27 + 4 + 8 * 36 + 8 + 2));
  EXPECT_EQ(p.head_scale(), 1.0f);
  EXPECT_EQ(p.head_bias(), 0.0f);
  const auto mask = p.decay_mask();
  EXPECT_EQ(mask.sum(), static_cast<float>(p.size() - 2));
  EXPECT_EQ(mask[mask.size() - 1], 0.0f);
  EXPECT_EQ(mask[mask.size() - 2], 0.0f);
}

TEST(Embed, ShapeAndZeroWeights) {
  std::mt19937_64 gen(1);
  const Geometry g{3, 32, 32};
  std::vector<Image> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(metaaug::testing::random_image(g, gen));
  std::vector<const Image*> ptrs;
  for (const auto& im : imgs) ptrs.push_back(&im);
  const ChannelStats stats{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};
  const auto input = to_network_input<double>(ptrs, stats, g);
  const ModelParams<double> zero(ArchConfig{g, {16, 32, 64, 128}});
  const Mat e = embed(zero, input, 3);
  EXPECT_EQ(e.rows(), 3);
  EXPECT_EQ(e.cols(), 512);
  EXPECT_EQ(e.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Embed, OrderPreservingAndDeterministic) {
  std::mt19937_64 gen(2);
  const Geometry g{3, 16, 16};
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(metaaug::testing::random_image(g, gen));
  const ChannelStats stats{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};
  const auto p = ModelParams<double>::initialize(ArchConfig{g, {4, 4, 4, 4}}, RngStream(1, 0, 0, Purpose::init));
  std::vector<const Image*> all, rev;
  for (const auto& im : imgs) all.push_back(&im);
  rev.assign(all.rbegin(), all.rend());
  const Mat a = embed(p, to_network_input<double>(all, stats, g), 4);
  const Mat b = embed(p, to_network_input<double>(rev, stats, g), 4);
  for (int i = 0; i < 4; ++i) EXPECT_LT((a.row(i) - b.row(3 - i)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a, embed(p, to_network_input<double>(all, stats, g), 4));
  for (int i = 0; i < 4; ++i) {
    std::vector<const Image*> one{all[static_cast<std::size_t>(i)]};
    EXPECT_LT((embed(p, to_network_input<double>(one, stats, g), 1).row(0) - a.row(i)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Embed, GeometryMismatch) {
  std::mt19937_64 gen(3);
  const Image img = metaaug::testing::random_image({3, 16, 16}, gen);
  std::vector<const Image*> ptrs{&img};
  const ChannelStats stats{{0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}};
  EXPECT_THROW(to_network_input<double>(ptrs, stats, {3, 32, 32}), GeometryError);
  const auto in = to_network_input<double>(ptrs, stats, {3, 16, 16});
  const ModelParams<double> p(ArchConfig{{3, 32, 32}, {2, 2, 2, 2}});
  EXPECT_THROW(embed(p, in, 1), GeometryError);
}

TEST(Embed, SingleConvMatchesDirectConvolution) {
  // One block on a 1x4x4 input: direct 3x3 zero-padded convolution, ReLU, then 2x2 max.
  std::mt19937_64 gen(4);
  const Geometry g{2, 4, 4};
  const Image img = metaaug::testing::random_image(g, gen);
  const ChannelStats stats{{0.0, 0.0}, {1.0 / 255.0, 1.0 / 255.0}};
  auto p = ModelParams<double>::initialize(ArchConfig{g, {3}}, RngStream(2, 0, 0, Purpose::init));
  p.conv_bias(0) << 0.1, -0.2, 0.05;
  std::vector<const Image*> ptrs{&img};
  const Mat e = embed(p, to_network_input<double>(ptrs, stats, g), 1);
  ASSERT_EQ(e.cols(), 3 * 2 * 2);
  const auto w = p.conv_weight(0);
  for (int o = 0; o < 3; ++o)
    for (int py = 0; py < 2; ++py)
      for (int px = 0; px < 2; ++px) {
        double best = -1e300;
        for (int y = 2 * py; y < 2 * py + 2; ++y)
          for (int x = 2 * px; x < 2 * px + 2; ++x) {
            double acc = p.conv_bias(0)[o];
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx)
                for (int c = 0; c < 2; ++c) {
                  const int sy = y + ky - 1, sx = x + kx - 1;
                  if (sy < 0 || sx < 0 || sy >= 4 || sx >= 4) continue;
                  acc += w(o, (ky * 3 + kx) * 2 + c) * img(c, sy, sx);
                }
            best = std::max(best, std::max(acc, 0.0));
          }
        EXPECT_NEAR(e(0, (o * 2 + py) * 2 + px), best, 1e-9);
      }
}

TEST(HeadFit, PrototypeIsClassMean) {
  std::mt19937_64 gen(5);
  const Mat x = random_matrix(6, 7, gen);
  const Mat y = one_hot_rows({0, 1, 2, 0, 1, 2}, 3);
  const auto s = head_fit<double>({HeadKind::prototype, 1.0}, x, y);
  for (int c = 0; c < 3; ++c)
    EXPECT_LT((s.prototypes.row(c) - 0.5 * (x.row(c) + x.row(c + 3))).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(HeadFit, SoftLabelPrototype) {
  std::mt19937_64 gen(6);
  const Mat x = random_matrix(3, 4, gen);
  Mat y(3, 2);
  y << 1.0, 0.0, 0.25, 0.75, 0.0, 1.0;
  const auto s = head_fit<double>({HeadKind::prototype, 1.0}, x, y);
  EXPECT_LT((s.prototypes.row(0) - (x.row(0) + 0.25 * x.row(1)) / 1.25).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((s.prototypes.row(1) - (0.75 * x.row(1) + x.row(2)) / 1.75).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(HeadFit, PrototypeZeroMassClass) {
  std::mt19937_64 gen(7);
  EXPECT_THROW(head_fit<double>({HeadKind::prototype, 1.0}, random_matrix(2, 3, gen), one_hot_rows({0, 0}, 2)),
               DataError);
}

TEST(HeadFit, RidgeMatchesNormalEquations) {
  std::mt19937_64 gen(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat x = random_matrix(3, 8, gen);
    const Mat y = random_matrix(3, 4, gen);
    const double lambda = 0.1 + trial * 0.05;
    const auto s = head_fit<double>({HeadKind::ridge, lambda}, x, y);
    const Mat primal =
        (x.transpose() * x + lambda * Mat::Identity(8, 8)).inverse() * x.transpose() * y;
    EXPECT_LE((s.weights - primal).cwiseAbs().maxCoeff(), 1e-8);
    const Mat gram = x * x.transpose() + lambda * Mat::Identity(3, 3);
    EXPECT_LE((gram * s.dual - y).norm() / y.norm(), 1e-8);
  }
}

TEST(HeadFit, RidgeLargeLambdaShrinksToZero) {
  std::mt19937_64 gen(9);
  const Mat x = random_matrix(5, 6, gen);
  const Mat y = one_hot_rows({0, 1, 2, 3, 4}, 5);
  const double w1 = head_fit<double>({HeadKind::ridge, 1.0}, x, y).weights.norm();
  const double wbig = head_fit<double>({HeadKind::ridge, 1e8}, x, y).weights.norm();
  EXPECT_LT(wbig, 1e-4 * w1);
  EXPECT_THROW(head_fit<double>({HeadKind::ridge, 0.0}, x, y), ConfigError);
}

TEST(HeadLogits, PrototypeExamples) {
  Mat protos(2, 2);
  protos << 0.0, 0.0, 2.0, 0.0;
  const auto s = head_fit<double>({HeadKind::prototype, 1.0}, protos, one_hot_rows({0, 1}, 2));
  Mat q(2, 2);
  q << 1.0, 3.0, 2.0, 0.0;
  const Mat l = head_logits<double>(s, q, 1.0, 0.0);
  EXPECT_EQ(l(0, 0), l(0, 1));
  EXPECT_EQ(l(1, 1), 0.0);
  EXPECT_LT(l(1, 0), 0.0);
}

TEST(HeadLogits, RidgeScaleAndBias) {
  std::mt19937_64 gen(10);
  const Mat x = random_matrix(4, 5, gen);
  const auto s = head_fit<double>({HeadKind::ridge, 1.0}, x, one_hot_rows({0, 1, 2, 3}, 4));
  const Mat q = random_matrix(3, 5, gen);
  const Mat l = head_logits<double>(s, q, 0.0, 0.7);
  EXPECT_EQ((l.array() != 0.7).count(), 0);
  const Mat l2 = head_logits<double>(s, q, 2.0, 0.0);
  EXPECT_LT((l2 - 2.0 * q * s.weights).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(HeadLogits, PrototypeSupportPermutationInvariance) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat x = random_matrix(10, 6, gen);
    const std::vector<int> cls{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
    std::vector<int> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    Mat xp(10, 6);
    std::vector<int> cp(10);
    for (int i = 0; i < 10; ++i) {
      xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
      cp[static_cast<std::size_t>(i)] = cls[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    const Mat q = random_matrix(4, 6, gen);
    const Mat a = head_logits<double>(head_fit<double>({HeadKind::prototype, 1.0}, x, one_hot_rows(cls, 5)), q, 1, 0);
    const Mat b = head_logits<double>(head_fit<double>({HeadKind::prototype, 1.0}, xp, one_hot_rows(cp, 5)), q, 1, 0);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SoftCrossEntropy, UniformLogitsGiveLogN) {
  const Mat logits = Mat::Zero(7, 5);
  const Mat y = one_hot_rows({0, 1, 2, 3, 4, 0, 1}, 5);
  Mat d;
  const auto r = soft_cross_entropy<double>(logits, y, &d);
  EXPECT_NEAR(r.loss, std::log(5.0), 1e-15);
  EXPECT_EQ(r.accuracy, 0.0);  // every row is a five-way tie
  for (Eigen::Index i = 0; i < 7; ++i) EXPECT_NEAR(d.row(i).sum(), 0.0, 1e-15);
}

TEST(SoftCrossEntropy, SoftmaxSumsToOneAndLossNonNegative) {
  std::mt19937_64 gen(12);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat logits = 10.0 * random_matrix(6, 5, gen);
    const Mat y = one_hot_rows({0, 1, 2, 3, 4, 2}, 5);
    Mat d;
    const auto r = soft_cross_entropy<double>(logits, y, &d);
    EXPECT_GE(r.loss, 0.0);
    // d = (softmax - y) / n, so softmax = n d + y.
    const Mat p = 6.0 * d + y;
    for (Eigen::Index i = 0; i < 6; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
    EXPECT_GE(p.minCoeff(), -1e-12);
  }
}

TEST(FeatureMixup, Properties) {
  std::mt19937_64 gen(13);
  const Mat e = random_matrix(6, 4, gen);
  const Mat y = one_hot_rows({0, 1, 2, 0, 1, 2}, 3);
  RngStream rng(1, 0, 0, Purpose::feature_mixup);
  FeatureMixRecord rec;
  const auto [me, my] = feature_mixup<double>(e, y, rng, 1.0, &rec);
  for (Eigen::Index i = 0; i < 6; ++i) {
    EXPECT_NEAR(my.row(i).sum(), 1.0, 1e-12);
    EXPECT_GE(my.row(i).minCoeff(), 0.0);
    const int j = rec.partner[static_cast<std::size_t>(i)];
    const double l = rec.lambda[static_cast<std::size_t>(i)];
    EXPECT_NE(j, i);
    EXPECT_LT((me.row(i) - (l * e.row(i) + (1 - l) * e.row(j))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EpisodeLoss, ZeroWeightNetworkGivesLogWay) {
  const auto ds = metaaug::testing::random_dataset(5, 0, 0, 6, {3, 16, 16}, 4);
  const auto pool = build_class_pool(ds, Split::train, std::nullopt, RngStream(1, 0, 0, Purpose::class_pool));
  const auto ep = sample_episode(ds, pool, {5, 1, 4, Split::train, true}, RngStream(1, 0, 0, Purpose::episode));
  const ModelParams<double> zero(ArchConfig{{3, 16, 16}, {2, 2, 2, 2}});
  for (HeadKind kind : {HeadKind::ridge, HeadKind::prototype}) {
    const auto r = loss_and_grad(zero, {kind, 1.0}, ep, ds.stats(), RngStream(1, 0, 0, Purpose::feature_mixup));
    EXPECT_NEAR(r.loss, std::log(5.0), 1e-12) << to_string(kind);
    EXPECT_NEAR(r.loss, 1.6094, 1e-4);
  }
}

TEST(EpisodeLoss, DuplicatedQueriesLeaveLossUnchanged) {
  auto inst = tiny_instance(21, false, false);
  Episode dup = inst.episode;
  dup.query.insert(dup.query.end(), inst.episode.query.begin(), inst.episode.query.end());
  for (HeadKind kind : {HeadKind::ridge, HeadKind::prototype}) {
    const RngStream fr(1, 0, 0, Purpose::feature_mixup);
    EXPECT_NEAR(episode_loss(inst.params, {kind, 1.0}, inst.episode, inst.dataset.stats(), fr).loss,
                episode_loss(inst.params, {kind, 1.0}, dup, inst.dataset.stats(), fr).loss, 1e-12);
  }
}

TEST(EpisodeLoss, ForwardOnlyMatchesLossAndGrad) {
  auto inst = tiny_instance(22, true, true);
  const RngStream fr(3, 0, 0, Purpose::feature_mixup);
  for (HeadKind kind : {HeadKind::ridge, HeadKind::prototype}) {
    const auto a = episode_loss(inst.params, {kind, 1.0}, inst.episode, inst.dataset.stats(), fr);
    const auto b = loss_and_grad(inst.params, {kind, 1.0}, inst.episode, inst.dataset.stats(), fr);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.accuracy, b.accuracy);
  }
}

TEST(EpisodeLoss, NonFiniteInputIsNumericError) {
  auto inst = tiny_instance(23, false, false);
  inst.params.conv_weight(0)(0, 0) = std::numeric_limits<double>::infinity();
  try {
    loss_and_grad(inst.params, {HeadKind::ridge, 1.0}, inst.episode, inst.dataset.stats(),
                  RngStream(1, 0, 0, Purpose::feature_mixup));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.category(), ErrorCategory::numeric);
  }
}

class GradientCheck : public ::testing::TestWithParam<std::tuple<HeadKind, bool, bool>> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const auto [kind, shot_aug, fmix] = GetParam();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto inst = tiny_instance(seed, shot_aug, fmix, seed % 2 == 0);
    const auto r = metaaug::testing::gradient_check(inst.params, {kind, 0.5}, inst.episode, inst.dataset.stats(),
                                                    RngStream(seed, 0, 0, Purpose::feature_mixup));
    EXPECT_LE(r.max_rel_error, 1e-4) << "seed " << seed;
    EXPECT_LE(r.skipped, static_cast<int>(inst.params.size()) / 20);
  }
}

INSTANTIATE_TEST_SUITE_P(All, GradientCheck,
                         ::testing::Combine(::testing::Values(HeadKind::prototype, HeadKind::ridge),
                                            ::testing::Bool(), ::testing::Bool()));

TEST(Sgd, ZeroGradientNoDecayIsNoOp) {
  ModelParams<double> p = ModelParams<double>::initialize(ArchConfig{{1, 4, 4}, {2}}, RngStream(1, 0, 0, Purpose::init));
  const auto before = p.values();
  SgdState<double> st;
  sgd_step(p, ModelParams<double>::zeros_like(p), st, 0.1, {0.9, 0.0, true});
  EXPECT_EQ(p.values(), before);
}

TEST(Sgd, PlainStepWithDecay) {
  ModelParams<double> p = ModelParams<double>::initialize(ArchConfig{{1, 4, 4}, {2}}, RngStream(1, 0, 0, Purpose::init));
  p.head_scale() = 2.0;
  const auto before = p.values();
  auto g = ModelParams<double>::zeros_like(p);
  g.values().setConstant(0.3);
  SgdState<double> st;
  sgd_step(p, g, st, 0.1, {0.0, 5e-4, true});
  const auto mask = p.decay_mask();
  for (Eigen::Index i = 0; i < before.size(); ++i)
    EXPECT_NEAR(p.values()[i], before[i] - 0.1 * (0.3 + 5e-4 * mask[i] * before[i]), 1e-15);
  EXPECT_NEAR(p.head_scale(), 2.0 - 0.03, 1e-15);
}

TEST(Sgd, NesterovScalarTrace) {
  ModelParams<double> p(ArchConfig{{1, 2, 2}, {1}});
  p.values().setZero();
  auto g = ModelParams<double>::zeros_like(p);
  g.values().setZero();
  const Eigen::Index k = 0;
  p.values()[k] = 1.0;
  g.values()[k] = 1.0;
  // Hand-rolled recurrence: v <- mu v + g; theta <- theta - lr (g + mu v).
  double theta = 1.0, v = 0.0;
  SgdState<double> st;
  for (int step = 0; step < 2; ++step) {
    v = 0.9 * v + 1.0;
    theta -= 0.1 * (1.0 + 0.9 * v);
    sgd_step(p, g, st, 0.1, {0.9, 0.0, true});
    EXPECT_NEAR(p.values()[k], theta, 1e-15);
  }
  EXPECT_NEAR(theta, 0.539, 1e-12);
}

TEST(LrSchedule, Defaults) {
  const auto desk = LrSchedule::desk_default();
  EXPECT_EQ(desk.rate(0), 0.05);
  EXPECT_EQ(desk.rate(14), 0.05);
  EXPECT_EQ(desk.rate(15), 0.005);
  EXPECT_EQ(desk.rate(25), 0.0005);
  EXPECT_EQ(desk.rate(29), 0.0005);
}

TEST(LrSchedule, PaperRates) {
  const auto p = LrSchedule::paper();
  const int epochs[] = {0, 20, 40, 50};
  const double rates[] = {0.1, 0.006, 0.0012, 0.00024};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(p.rate(epochs[i]), rates[i]);
  EXPECT_EQ(p.rate(19), 0.1);
  EXPECT_EQ(p.rate(59), 0.00024);
}

TEST(LrSchedule, Validation) {
  EXPECT_THROW(LrSchedule({{1, 0.1}}), ConfigError);
  EXPECT_THROW(LrSchedule({{0, 0.1}, {5, 0.01}, {5, 0.001}}), ConfigError);
  EXPECT_THROW(LrSchedule({{0, -0.1}}), ConfigError);
}

TEST(Precision, FloatAndDoubleAgree) {
  const auto inst = tiny_instance(30, false, false);
  const auto pf = inst.params.cast<float>();
  const RngStream fr(1, 0, 0, Purpose::feature_mixup);
  const auto a = loss_and_grad(inst.params, {HeadKind::ridge, 1.0}, inst.episode, inst.dataset.stats(), fr);
  const auto b = loss_and_grad(pf, {HeadKind::ridge, 1.0}, inst.episode, inst.dataset.stats(), fr);
  EXPECT_NEAR(a.loss, b.loss, 1e-4);
}
