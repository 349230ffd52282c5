#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "metaxt/model.hpp"

using namespace metaxt;

namespace {

Matrix mat(Index r, Index c, std::initializer_list<double> v) {
  Matrix m(r, c);
  Index i = 0;
  for (double x : v) m.data()[i++] = x;
  return m;
}

ModelSpec tiny_spec(bool per_token = false) {
  ModelDims dims;
  dims.hidden_dims = {2};
  dims.h_dim = 2;
  dims.z_dim = 2;
  dims.ltn_hidden = 2;
  return make_model_spec(2, 2, 2, per_token, dims);
}

FlatParams zeroed(const ModelSpec& spec) {
  std::mt19937_64 rng(0);
  FlatParams p = init_params(spec, rng);
  p.unflatten(Vector::Zero(p.size()));
  return p;
}

}  // namespace

TEST(EncoderSpecRules, RtnLayerRange) {
  ModelDims dims;
  dims.use_rtn = true;
  EXPECT_EQ(make_model_spec(16, 2, 5, false, dims).encoder.rtn_insert_layer, 2);
  dims.rtn_layer = 1;
  EXPECT_EQ(make_model_spec(16, 2, 5, false, dims).encoder.rtn_insert_layer, 1);
  dims.rtn_layer = 3;
  EXPECT_THROW(make_model_spec(16, 2, 5, false, dims), std::invalid_argument);
}

TEST(EncoderSpecRules, DefaultRtnLayerIsCeilHalf) {
  EncoderSpec e;
  e.hidden_dims = {8, 8, 8, 8, 8};
  EXPECT_EQ(e.default_rtn_layer(), 3);
  e.hidden_dims = {8, 8, 8, 8, 8, 8, 8, 8, 8, 8, 8};
  EXPECT_EQ(e.default_rtn_layer(), 6);
}

TEST(HeadSpecRules, NeedsTwoClasses) {
  EXPECT_THROW(make_model_spec(4, 1, 3, false), std::invalid_argument);
  EXPECT_THROW(make_model_spec(4, 2, 1, false), std::invalid_argument);
}

TEST(ParameterCount, MatchesLayerArithmetic) {
  ModelDims dims;
  dims.use_rtn = true;
  const ModelSpec spec = make_model_spec(16, 2, 5, false, dims);
  const Index theta = (16 * 64 + 64) + (64 * 32 + 32) + (32 * 32 + 32);
  const Index v = 32 * 2 + 2;
  const Index w = 32 * 5 + 5;
  const Index phi = 3 * (32 * 32 + 32);
  const Index alpha = 2 * 8 + (40 * 32 + 32) + (32 * 32 + 32) + (32 * 5 + 5);
  EXPECT_EQ(spec.parameter_count(Group::Theta), theta);
  EXPECT_EQ(spec.parameter_count(Group::V), v);
  EXPECT_EQ(spec.parameter_count(Group::W), w);
  EXPECT_EQ(spec.parameter_count(Group::Phi), phi);
  EXPECT_EQ(spec.parameter_count(Group::Alpha), alpha);
  EXPECT_EQ(spec.parameter_count(), theta + v + w + phi + alpha);

  std::mt19937_64 rng(1);
  const FlatParams p = init_params(spec, rng);
  for (Group g : kAllGroups) EXPECT_EQ(p.size(g), spec.parameter_count(g)) << group_name(g);
}

TEST(Init, BoundsAndZeroBiases) {
  const ModelSpec spec = make_model_spec(16, 2, 5, false);
  std::mt19937_64 rng(2);
  const FlatParams p = init_params(spec, rng);
  const Matrix w0 = p.tensor(Group::Theta, "enc.0.W");
  EXPECT_LE(w0.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(16.0));
  EXPECT_EQ(p.tensor(Group::Theta, "enc.0.b"), Matrix::Zero(1, 64));
  const Matrix out = p.tensor(Group::Alpha, "ltn.2.W");
  EXPECT_LE(out.cwiseAbs().maxCoeff(), 0.1 / std::sqrt(32.0));
  EXPECT_GT(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Init, SameSeedSameParameters) {
  const ModelSpec spec = make_model_spec(16, 2, 5, false);
  std::mt19937_64 a(9), b(9);
  EXPECT_TRUE(init_params(spec, a) == init_params(spec, b));
}

TEST(Encode, ZeroWeightsGiveZeroRepresentation) {
  const ModelSpec spec = tiny_spec();
  const Matrix h = encode(spec, zeroed(spec), mat(1, 2, {0.3, -4.0}), false);
  EXPECT_EQ(h, Matrix::Zero(1, 2));
}

TEST(Encode, FixedTwoLayerHandComputed) {
  const ModelSpec spec = tiny_spec();
  FlatParams p = zeroed(spec);
  Vector theta(p.size(Group::Theta));
  // enc.0.W, enc.0.b, enc.1.W, enc.1.b (row-major).
  theta << 0.5, -1.0, 0.25, 2.0, 0.1, -0.2, 1.5, 0.3, -0.7, 0.8, 0.05, 0.0;
  p.set_group(Group::Theta, theta);
  const Matrix h = encode(spec, p, mat(1, 2, {1.0, -1.0}), false);
  const double a1 = std::tanh(0.5 * 1.0 + 0.25 * -1.0 + 0.1);
  const double a2 = std::tanh(-1.0 * 1.0 + 2.0 * -1.0 - 0.2);
  const double h1 = std::tanh(1.5 * a1 - 0.7 * a2 + 0.05);
  const double h2 = std::tanh(0.3 * a1 + 0.8 * a2 + 0.0);
  EXPECT_NEAR(h(0, 0), h1, 1e-15);
  EXPECT_NEAR(h(0, 1), h2, 1e-15);
}

TEST(Encode, WidthMismatchRejected) {
  const ModelSpec spec = tiny_spec();
  EXPECT_THROW(encode(spec, zeroed(spec), Matrix::Zero(1, 3), false), std::invalid_argument);
  EXPECT_THROW(encode(spec, zeroed(spec), Matrix::Zero(1, 2), true), std::invalid_argument);
}

TEST(Encode, OneRepresentationPerToken) {
  const ModelSpec spec = make_model_spec(16, 3, 7, true);
  std::mt19937_64 rng(4);
  const FlatParams p = init_params(spec, rng);
  const Matrix h = encode(spec, p, Matrix::Random(11, 16), false);
  EXPECT_EQ(h.rows(), 11);
  EXPECT_EQ(h.cols(), 32);
}

TEST(Encode, InertRtnHookIsBitIdentical) {
  ModelDims with;
  with.use_rtn = true;
  const ModelSpec spec_rtn = make_model_spec(16, 2, 5, false, with);
  const ModelSpec spec_plain = make_model_spec(16, 2, 5, false);
  std::mt19937_64 a(6), b(6);
  const FlatParams p_rtn = init_params(spec_rtn, a);
  const FlatParams p_plain = init_params(spec_plain, b);
  ASSERT_TRUE(bit_identical(p_rtn.group(Group::Theta), p_plain.group(Group::Theta)));
  const Matrix x = Matrix::Random(5, 16);
  const Matrix h1 = encode(spec_rtn, p_rtn, x, false);
  const Matrix h2 = encode(spec_plain, p_plain, x, false);
  EXPECT_EQ(std::memcmp(h1.data(), h2.data(), sizeof(double) * h1.size()), 0);
  const Matrix h3 = encode(spec_rtn, p_rtn, x, true);
  EXPECT_GT((h3 - h1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(HeadForward, ZeroWeightsUniform) {
  const ModelSpec spec = make_model_spec(4, 2, 5, false);
  const Matrix p = head_forward(spec, zeroed(spec), Matrix::Random(3, 32), Head::Target);
  for (Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p.data()[i], 0.2, 1e-15);
}

TEST(HeadForward, ClosedFormSoftmaxAndShiftInvariance) {
  const ModelSpec spec = tiny_spec();
  FlatParams p = zeroed(spec);
  Vector w(p.size(Group::W));
  // tgt.0.W = identity, tgt.0.b = (0, 0).
  w << 1.0, 0.0, 0.0, 1.0, 0.0, 0.0;
  p.set_group(Group::W, w);
  const Matrix out = head_forward(spec, p, mat(1, 2, {std::log(3.0), 0.0}), Head::Target);
  EXPECT_NEAR(out(0, 0), 0.75, 1e-12);
  EXPECT_NEAR(out(0, 1), 0.25, 1e-12);
  const Matrix shifted = head_forward(spec, p, mat(1, 2, {std::log(3.0) + 7.5, 7.5}), Head::Target);
  EXPECT_NEAR((shifted - out).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(LtnForward, ZeroAlphaUniform) {
  const ModelSpec spec = make_model_spec(16, 2, 5, false);
  std::mt19937_64 rng(3);
  FlatParams p = init_params(spec, rng);
  p.set_group(Group::Alpha, Vector::Zero(p.size(Group::Alpha)));
  const std::vector<int> labels{0, 1, 1};
  const Matrix out = ltn_forward(spec, p, Matrix::Random(3, 16), labels);
  for (Index i = 0; i < out.size(); ++i) EXPECT_NEAR(out.data()[i], 0.2, 1e-15);
}

TEST(LtnForward, HandComputedTinyNetwork) {
  const ModelSpec spec = tiny_spec();
  FlatParams p = zeroed(spec);
  Vector alpha(p.size(Group::Alpha));
  // embed (2x2); ltn.0.W (4x2), b; ltn.1.W (2x2), b; ltn.2.W (2x2), b.
  alpha << 0.0, 0.0, 0.0, 1.0,                         // e(0)=(0,0), e(1)=(0,1)
      0.5, -0.5, 0.2, 0.1, -0.3, 0.4, 1.0, 0.6,        // ltn.0.W
      0.1, -0.1,                                       // ltn.0.b
      1.2, 0.0, -0.4, 0.9,                             // ltn.1.W
      0.0, 0.2,                                        // ltn.1.b
      0.7, -0.7, 0.3, 1.1,                             // ltn.2.W
      0.05, -0.05;                                     // ltn.2.b
  p.set_group(Group::Alpha, alpha);
  ad::Tape tape;
  const BoundParams bound = bind(tape, p, GroupSet{Group::Alpha}, GroupSet{});
  const std::vector<int> label{1};
  const Matrix out = ltn_forward(tape, bound, spec, mat(1, 2, {1.0, 0.0}), label).value();

  const double in[4] = {1.0, 0.0, 0.0, 1.0};
  const double w0[4][2] = {{0.5, -0.5}, {0.2, 0.1}, {-0.3, 0.4}, {1.0, 0.6}};
  double a[2];
  for (int j = 0; j < 2; ++j) {
    double s = j == 0 ? 0.1 : -0.1;
    for (int i = 0; i < 4; ++i) s += in[i] * w0[i][j];
    a[j] = std::tanh(s);
  }
  const double b1 = std::tanh(1.2 * a[0] - 0.4 * a[1] + 0.0);
  const double b2 = std::tanh(0.0 * a[0] + 0.9 * a[1] + 0.2);
  const double z1 = 0.7 * b1 + 0.3 * b2 + 0.05;
  const double z2 = -0.7 * b1 + 1.1 * b2 - 0.05;
  const double p1 = 1.0 / (1.0 + std::exp(z2 - z1));
  EXPECT_NEAR(out(0, 0), p1, 1e-15);
  EXPECT_NEAR(out(0, 1), 1.0 - p1, 1e-15);
}

TEST(LtnForward, DeterministicAndNormalized) {
  const ModelSpec spec = make_model_spec(16, 3, 7, true);
  std::mt19937_64 rng(8);
  FlatParams p = init_params(spec, rng);
  std::normal_distribution<double> n(0.0, 2.0);
  for (Index i = 0; i < p.group(Group::Alpha).size(); ++i) p.group(Group::Alpha)(i) = n(rng);
  Matrix x = Matrix::Random(40, 16);
  x.row(1) = x.row(0);
  std::vector<int> labels(40);
  for (int i = 0; i < 40; ++i) labels[static_cast<std::size_t>(i)] = i % 3;
  labels[1] = labels[0];
  const Matrix out = ltn_forward(spec, p, x, labels);
  EXPECT_EQ(out.row(0), out.row(1));
  for (Index r = 0; r < out.rows(); ++r) {
    EXPECT_NEAR(out.row(r).sum(), 1.0, 1e-12);
    EXPECT_GE(out.row(r).minCoeff(), 0.0);
  }
}

TEST(LtnForward, LabelOutOfRangeRejected) {
  const ModelSpec spec = make_model_spec(16, 2, 5, false);
  std::mt19937_64 rng(3);
  const FlatParams p = init_params(spec, rng);
  const std::vector<int> bad{2};
  EXPECT_THROW(ltn_forward(spec, p, Matrix::Random(1, 16), bad), std::invalid_argument);
  const std::vector<int> negative{-1};
  EXPECT_THROW(ltn_forward(spec, p, Matrix::Random(1, 16), negative), std::invalid_argument);
}

TEST(LtnForward, RepresentationGradientBlocked) {
  const ModelSpec spec = make_model_spec(4, 2, 3, false);
  std::mt19937_64 rng(12);
  const FlatParams p = init_params(spec, rng);
  ad::Tape tape;
  const BoundParams bound = bind(tape, p, p.groups(), GroupSet{Group::Theta, Group::Alpha});
  const Matrix h = encode(tape, bound, spec, tape.constant(Matrix::Random(3, 4)), false).value();
  const std::vector<int> labels{0, 1, 0};
  const ad::Var out = ad::sum(ad::log(ltn_forward(tape, bound, spec, h, labels)));
  const auto g = tape.gradient(out, bound.vars(Group::Theta));
  for (const auto& gi : g) EXPECT_EQ(gi.value().cwiseAbs().maxCoeff(), 0.0);
}
