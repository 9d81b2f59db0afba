#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>
#include <numbers>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/verifiers.hpp"

namespace ctrlsynth {
namespace {

const double kSqrtPi = std::sqrt(std::numbers::pi);

double quadrature(const GaussHermite& gh, double (*f)(double)) {
  double s = 0.0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) s += gh.weights[i] * f(gh.nodes[i]);
  return s;
}

TEST(GaussHermite, LowOrdersMatchClosedForm) {
  const auto one = gauss_hermite(1);
  ASSERT_EQ(one.nodes.size(), 1u);
  EXPECT_NEAR(one.nodes[0], 0.0, 1e-15);
  EXPECT_NEAR(one.weights[0], kSqrtPi, 1e-14);

  // H_2 roots are +-1/sqrt(2), each weighted sqrt(pi)/2.
  const auto two = gauss_hermite(2);
  EXPECT_NEAR(std::abs(two.nodes[0]), 1.0 / std::numbers::sqrt2, 1e-14);
  EXPECT_NEAR(two.nodes[0], -two.nodes[1], 1e-14);
  EXPECT_NEAR(two.weights[0], kSqrtPi / 2, 1e-14);
  EXPECT_NEAR(two.weights[1], kSqrtPi / 2, 1e-14);

  EXPECT_THROW(gauss_hermite(0), ConfigError);
}

TEST(GaussHermite, IntegratesGaussianMomentsExactly) {
  // int x^(2k) exp(-x^2) dx = Gamma(k + 1/2); odd moments vanish.
  const auto gh = gauss_hermite(20);
  EXPECT_NEAR(quadrature(gh, [](double) { return 1.0; }), kSqrtPi, 1e-13);
  EXPECT_NEAR(quadrature(gh, [](double x) { return x * x; }), kSqrtPi / 2, 1e-13);
  EXPECT_NEAR(quadrature(gh, [](double x) { return std::pow(x, 4); }), 3 * kSqrtPi / 4, 1e-12);
  EXPECT_NEAR(quadrature(gh, [](double x) { return std::pow(x, 10); }), std::tgamma(5.5), 1e-9);
  EXPECT_NEAR(quadrature(gh, [](double x) { return std::pow(x, 7); }), 0.0, 1e-11);
  // cos: int cos(x) exp(-x^2) dx = sqrt(pi) exp(-1/4).
  EXPECT_NEAR(quadrature(gh, [](double x) { return std::cos(x); }), kSqrtPi * std::exp(-0.25),
              1e-14);
}

TEST(Verifiers, Prop1GradientsAgree) {
  const auto r = verify_prop1({.instances = 100, .seed = 3});
  EXPECT_TRUE(r.pass) << r.to_json();
  EXPECT_LE(r.max_error, 1e-9);
  EXPECT_LE(r.details.at("value_identity_max_error"), 1e-12);
  EXPECT_LE(r.details.at("beta_half_decoder_max_error"), 1e-9);
  EXPECT_LE(r.details.at("on_codeword_value_max_error"), 1e-12);
  EXPECT_EQ(r.instances, 100u);
}

TEST(Verifiers, Prop2IdentityAndArgmaxAgreement) {
  const auto r = verify_prop2({.instances = 100, .seed = 4});
  EXPECT_TRUE(r.pass) << r.to_json();
  EXPECT_LE(r.details.at("weight1_identity_max_error"), 1e-12);
  EXPECT_GE(r.details.at("argmax_agreements"), 99.0);
  EXPECT_THROW(verify_prop2({}, 0.0), ConfigError);
  EXPECT_THROW(verify_prop2({}, -1.0), ConfigError);
}

TEST(Verifiers, Prop3MatchesGridAndFlagsFlatObjective) {
  const auto r = verify_prop3({.instances = 40, .seed = 5});
  EXPECT_TRUE(r.pass) << r.to_json();
  EXPECT_LE(r.max_error, 1e-6);
  EXPECT_LE(r.details.at("reencode_improvement_max"), 1e-6);
  EXPECT_EQ(r.details.at("box_prior_argmin_mismatch"), 0.0);
  // The data generator puts some optima on the box edge.
  EXPECT_GT(r.details.at("boundary_optima"), 0.0);
  ASSERT_EQ(r.flags.size(), 1u);
  EXPECT_EQ(r.flags[0], "flat objective");
}

TEST(Verifiers, Prop3OnATrainedHeuristicSystem) {
  CorpusConfig c;
  c.styles = 3;
  c.per_style = 10;
  c.min_len = 4;
  c.max_len = 6;
  c.style_dim = 2;
  const auto corpus = generate_corpus(c);
  TrainConfig t;
  t.max_epochs = 5;
  t.batch_size = 4;
  t.ff_units = 4;
  t.rnn_units = 3;
  t.latent_dim = 2;
  auto ck = train_system(make_system_spec(SystemId::kHzi, c, t), corpus, t);
  const auto r = verify_prop3_trained(ck.model, corpus, 0.05, 50, 20);
  EXPECT_EQ(r.instances, 20u);
  EXPECT_TRUE(r.pass) << r.to_json();
  // The table latents are far from converged after five epochs.
  EXPECT_GT(r.details.at("table_latent_first_pass_improvement"), r.max_error);

  auto bot = train_system(make_system_spec(SystemId::kBot, c, t), corpus, t);
  EXPECT_THROW(verify_prop3_trained(bot.model, corpus, 0.05, 10), ConfigError);
}

TEST(Verifiers, Prop4MonotoneConvergence) {
  const auto r = verify_prop4({.instances = 30, .seed = 6});
  EXPECT_TRUE(r.pass) << r.to_json();
  EXPECT_EQ(r.details.at("monotonicity_violations"), 0.0);
  EXPECT_LE(r.max_error, 1e-3);
}

TEST(Verifiers, ElboDecompositionIsExact) {
  const auto r = verify_elbo_decomposition({.instances = 100, .seed = 7});
  EXPECT_TRUE(r.pass) << r.to_json();
  EXPECT_LE(r.max_error, 1e-12);
  EXPECT_LE(r.details.at("bound_violation_max"), 1e-12);
}

TEST(Verifiers, ReportsAreDeterministicAndWellFormed) {
  const VerifierOptions opt{.instances = 10, .seed = 9};
  const auto a = verify_all(opt);
  const auto b = verify_all(opt);
  ASSERT_EQ(a.size(), 5u);
  const char* names[] = {"prop1", "prop2", "prop3", "prop4", "elbo"};
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].to_json(), b[i].to_json());
    EXPECT_EQ(a[i].proposition.rfind(names[i], 0), 0u) << a[i].proposition;
    const auto j = nlohmann::json::parse(a[i].to_json());
    for (const char* key : {"proposition", "instances", "max_error", "pass", "details", "flags"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_EQ(j["instances"].get<std::size_t>(), 10u);
  }
}

}  // namespace
}  // namespace ctrlsynth
