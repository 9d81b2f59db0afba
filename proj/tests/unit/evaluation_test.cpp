#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numeric>
#include <random>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/evaluation.hpp"
#include "test_util.hpp"

namespace ctrlsynth {
namespace {

std::vector<IndexAssignment> assign(const std::vector<int>& labels,
                                    const std::vector<std::size_t>& clusters) {
  std::vector<IndexAssignment> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({i, labels[i], clusters[i]});
  return out;
}

TEST(ClusterMetrics, PerfectAndIndependentPartitions) {
  const auto perfect = cluster_metrics(assign({0, 0, 1, 1}, {0, 0, 1, 1}));
  EXPECT_DOUBLE_EQ(perfect.purity, 1.0);
  EXPECT_NEAR(perfect.nmi, 1.0, 1e-15);

  const auto crossed = cluster_metrics(assign({0, 0, 1, 1}, {0, 1, 0, 1}));
  EXPECT_DOUBLE_EQ(crossed.purity, 0.5);
  EXPECT_NEAR(crossed.nmi, 0.0, 1e-15);
  EXPECT_EQ(crossed.label_clusters.at(0), 2u);
  EXPECT_NEAR(crossed.label_entropy.at(0), 1.0, 1e-15);

  EXPECT_THROW(cluster_metrics({}), ConfigError);
}

TEST(ClusterMetrics, HandEvaluatedMutualInformation) {
  // Joint counts (c0,A)=2, (c0,B)=1, (c1,B)=2 over 5 points.
  const auto m = cluster_metrics(assign({0, 0, 1, 1, 1}, {0, 0, 0, 1, 1}));
  const double h = -(0.6 * std::log2(0.6) + 0.4 * std::log2(0.4));
  const double mi = 0.4 * std::log2(0.4 / (0.6 * 0.4)) + 0.2 * std::log2(0.2 / (0.6 * 0.6)) +
                    0.4 * std::log2(0.4 / (0.4 * 0.6));
  EXPECT_NEAR(m.purity, 0.8, 1e-15);
  EXPECT_NEAR(m.cluster_entropy_bits, h, 1e-15);
  EXPECT_NEAR(m.label_entropy_bits, h, 1e-15);
  EXPECT_NEAR(m.mutual_information_bits, mi, 1e-15);
  EXPECT_NEAR(m.nmi, mi / h, 1e-15);
  EXPECT_NEAR(m.nmi, 0.43253, 1e-5);
  EXPECT_EQ(m.clusters_used, 2u);
  EXPECT_NEAR(m.label_entropy.at(1), -(std::log2(1.0 / 3) / 3 + 2 * std::log2(2.0 / 3) / 3),
              1e-15);
}

TEST(ClusterMetricsProperty, InvariantToClusterRelabelling) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
    const std::size_t clusters = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    std::vector<int> labels(n);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = std::uniform_int_distribution<int>(0, 4)(rng);
      idx[i] = std::uniform_int_distribution<std::size_t>(0, clusters - 1)(rng);
    }
    std::vector<std::size_t> perm(clusters);
    std::iota(perm.begin(), perm.end(), 100);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> relabelled(n);
    for (std::size_t i = 0; i < n; ++i) relabelled[i] = perm[idx[i]];
    const auto a = cluster_metrics(assign(labels, idx));
    const auto b = cluster_metrics(assign(labels, relabelled));
    EXPECT_EQ(a.purity, b.purity);
    EXPECT_NEAR(a.nmi, b.nmi, 1e-12);
    EXPECT_GE(a.nmi, -1e-12);
    EXPECT_LE(a.nmi, 1.0 + 1e-12);
    EXPECT_GE(a.purity, 1.0 / 5.0 - 1e-12);
  }
}

TEST(Confusion, Frobenius) {
  const Tensor i7 = Tensor::identity(7);
  EXPECT_EQ(confusion_frobenius(i7, i7), 0.0);
  Tensor uniform(7, 7);
  uniform.fill(1.0 / 7.0);
  EXPECT_NEAR(confusion_frobenius(uniform, i7), std::sqrt(6.0), 1e-14);
  EXPECT_THROW(confusion_frobenius(i7, Tensor::identity(6)), ShapeError);
}

TEST(ConfusionProperty, FrobeniusIsAMetric) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = testing::random_tensor(rng, 4, 4);
    const Tensor b = testing::random_tensor(rng, 4, 4);
    const Tensor c = testing::random_tensor(rng, 4, 4);
    EXPECT_EQ(confusion_frobenius(a, b), confusion_frobenius(b, a));
    EXPECT_EQ(confusion_frobenius(a, a), 0.0);
    EXPECT_GT(confusion_frobenius(a, b), 0.0);
    EXPECT_LE(confusion_frobenius(a, c),
              confusion_frobenius(a, b) + confusion_frobenius(b, c) + 1e-12);
  }
}

std::vector<LabeledPoint> points_1d(const std::vector<double>& xs, const std::vector<int>& labels) {
  std::vector<LabeledPoint> out;
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({i, labels[i], Tensor::row({xs[i]})});
  return out;
}

TEST(Knn, SeparatedClustersAgree) {
  std::vector<LabeledPoint> pts;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  for (int i = 0; i < 20; ++i) {
    const int label = i % 2;
    pts.push_back({static_cast<std::size_t>(i), label,
                   Tensor::row({10.0 * label + jitter(rng), jitter(rng)})});
  }
  const auto c = knn_disagreement(pts, 3);
  EXPECT_EQ(c.nearest_disagree, 0u);
  EXPECT_EQ(c.any_disagree, 0u);
  EXPECT_EQ(c.points, 20u);
}

TEST(Knn, AlternatingLatticeDisagreesEverywhere) {
  // Each point's nearest neighbours (distance 1) carry the other label.
  std::vector<double> xs;
  std::vector<int> labels;
  for (int i = 0; i < 11; ++i) {
    xs.push_back(i);
    labels.push_back(i % 2);
  }
  const auto pts = points_1d(xs, labels);
  const auto one = knn_disagreement(pts, 1);
  EXPECT_EQ(one.nearest_disagree, 11u);
  EXPECT_EQ(one.any_disagree, 11u);
  EXPECT_EQ(knn_disagreement_exhaustive(pts, 1).nearest_disagree, 11u);
}

TEST(Knn, RejectsBadK) {
  const auto pts = points_1d({0, 1, 2}, {0, 0, 1});
  EXPECT_THROW(knn_disagreement(pts, 3), ConfigError);
  EXPECT_THROW(knn_disagreement(pts, 0), ConfigError);
  EXPECT_THROW(knn_disagreement_exhaustive(pts, 5), ConfigError);
}

TEST(KnnProperty, SweepEqualsExhaustiveScan) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 300)(rng);
    const std::size_t dim = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    const bool lattice = trial % 2 == 0;  // integer coordinates produce many ties
    std::vector<LabeledPoint> pts;
    for (std::size_t i = 0; i < n; ++i) {
      Tensor z(1, dim);
      for (auto& v : z.storage()) {
        v = lattice ? static_cast<double>(std::uniform_int_distribution<int>(-3, 3)(rng))
                    : std::normal_distribution<double>(0.0, 1.0)(rng);
      }
      pts.push_back({i, std::uniform_int_distribution<int>(0, 3)(rng), z});
    }
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, std::min<std::size_t>(n - 1, 8))(rng);
    const auto fast = knn_disagreement(pts, k);
    const auto slow = knn_disagreement_exhaustive(pts, k);
    EXPECT_EQ(fast.nearest_disagree, slow.nearest_disagree) << "n=" << n << " k=" << k;
    EXPECT_EQ(fast.any_disagree, slow.any_disagree) << "n=" << n << " k=" << k;
  }
}

TEST(Pca, CollinearPointsHaveRankOne) {
  std::vector<Tensor> pts;
  for (int i = 0; i < 10; ++i) pts.push_back(Tensor::row({1.0 + i, 2.0 - 2.0 * i, 0.5 * i}));
  const auto r = pca_project(pts);
  EXPECT_NEAR(r.explained_ratio[0], 1.0, 1e-12);
  EXPECT_LE(r.explained_ratio[1], 1e-10);
  // Largest-magnitude loading of the first axis is positive: (1,-2,0.5) -> (-,+,-).
  EXPECT_GT(r.axes.at(0, 1), 0.0);
  EXPECT_THROW(pca_project(std::span(pts).first(2)), ConfigError);
}

TEST(PcaProperty, MatchesCovarianceEigendecomposition) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(5, 80)(rng);
    const std::size_t dim = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
    std::vector<Tensor> pts;
    std::vector<double> scale(dim);
    for (auto& s : scale) s = std::uniform_real_distribution<double>(0.2, 3.0)(rng);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor z(1, dim);
      for (std::size_t d = 0; d < dim; ++d) z[d] = scale[d] * std::normal_distribution<double>()(rng);
      pts.push_back(z);
    }
    const auto r = pca_project(pts);

    // Orthonormal axes.
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t b = 0; b < 2; ++b) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dot += r.axes.at(a, d) * r.axes.at(b, d);
        EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-10);
      }
    }

    // Oracle: eigenvectors of the sample covariance.
    Eigen::MatrixXd x(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dim; ++d) x(i, d) = pts[i][d];
    }
    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = c.transpose() * c;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const Eigen::Index top = static_cast<Eigen::Index>(dim) - 1;
    const double total = eig.eigenvalues().sum();
    EXPECT_NEAR(r.explained_ratio[0], eig.eigenvalues()(top) / total, 1e-10);
    EXPECT_NEAR(r.explained_ratio[1], eig.eigenvalues()(top - 1) / total, 1e-10);

    // Subspace angle between the two leading-axis planes: the projection of
    // each oracle axis onto the computed plane keeps unit length.
    for (Eigen::Index e = top - 1; e <= top; ++e) {
      const Eigen::VectorXd v = eig.eigenvectors().col(e);
      double norm2 = 0.0;
      for (std::size_t a = 0; a < 2; ++a) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dot += r.axes.at(a, d) * v(static_cast<Eigen::Index>(d));
        norm2 += dot * dot;
      }
      EXPECT_LE(std::acos(std::min(1.0, std::sqrt(norm2))), 1e-6);
    }

    // Sign convention.
    for (std::size_t a = 0; a < 2; ++a) {
      std::size_t lead = 0;
      for (std::size_t d = 1; d < dim; ++d) {
        if (std::abs(r.axes.at(a, d)) > std::abs(r.axes.at(a, lead))) lead = d;
      }
      EXPECT_GT(r.axes.at(a, lead), 0.0);
    }
  }
}

CorpusConfig eval_corpus(double noise = 0.1) {
  CorpusConfig c;
  c.styles = 3;
  c.per_style = 12;
  c.min_len = 4;
  c.max_len = 6;
  c.style_dim = 2;
  c.noise_std = noise;
  return c;
}

TrainConfig eval_train() {
  TrainConfig t;
  t.max_epochs = 3;
  t.batch_size = 4;
  t.latent_dim = 2;
  t.codebook_size = 5;
  t.ff_units = 4;
  t.rnn_units = 3;
  t.encode_steps = 3;
  return t;
}

TEST(OracleClassify, NoiseFreeNaturalDataIsIdentity) {
  const auto corpus = generate_corpus(eval_corpus(0.0));
  const auto m = oracle_classify(natural_outputs(corpus), corpus.require_truth());
  EXPECT_EQ(m, Tensor::identity(3));
}

TEST(OracleClassify, OffDiagonalMassShrinksWithNoise) {
  auto off_diagonal = [](double noise) {
    CorpusConfig c = eval_corpus(noise);
    c.per_style = 200;
    c.min_len = 1;
    c.max_len = 1;
    c.style_norm = 0.3;
    const auto corpus = generate_corpus(c);
    const auto m = oracle_classify(natural_outputs(corpus), corpus.require_truth());
    double off = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      double row = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        row += m.at(r, k);
        EXPECT_GE(m.at(r, k), 0.0);
        if (k != r) off += m.at(r, k);
      }
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
    return off;
  };
  const double loud = off_diagonal(0.3);
  const double quiet = off_diagonal(0.03);
  EXPECT_GT(loud, 0.0);
  EXPECT_LT(quiet, loud);
}

TEST(OracleClassify, MissingStyleIsAnError) {
  const auto corpus = generate_corpus(eval_corpus());
  auto outs = natural_outputs(corpus);
  std::erase_if(outs, [](const StyledOutput& o) { return o.label == 2; });
  EXPECT_THROW(oracle_classify(outs, corpus.require_truth()), ConfigError);
}

struct Trained {
  StyleCorpus corpus = generate_corpus(eval_corpus());
  std::vector<Checkpoint> checkpoints;
  Trained() {
    const auto t = eval_train();
    for (SystemId id : headline_systems()) {
      checkpoints.push_back(train_system(make_system_spec(id, corpus.config, t), corpus, t));
    }
  }
  Checkpoint& get(SystemId id) {
    for (auto& c : checkpoints) {
      if (c.model.spec.id == id) return c;
    }
    throw std::logic_error("missing system");
  }
};

Trained& trained() {
  static Trained t;
  return t;
}

TEST(ControlSchemes, PerUtteranceReusesStoredTestLatents) {
  auto& run = trained();
  Model& hzi = run.get(SystemId::kHzi).model;
  const LatentTable before = hzi.latents;
  const auto out = control_scheme_outputs(hzi, run.corpus, ControlScheme::kPerUtterance);
  const auto test = run.corpus.split(Split::kTest);
  ASSERT_EQ(out.latents.size(), test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    EXPECT_EQ(out.latents[i], hzi.latents.get(Split::kTest, test[i]->id));
    EXPECT_EQ(out.outputs[i].output,
              decode(hzi.decoder, test[i]->linguistic, &out.latents[i]));
  }
  EXPECT_EQ(hzi.latents, before);
}

TEST(ControlSchemes, PerStyleMeanOfConstantLatents) {
  auto& run = trained();
  Model hsi = run.get(SystemId::kHsi).model;
  const Tensor v = Tensor::row({0.25, -0.5});
  for (const Sequence* s : run.corpus.split(Split::kTrain)) {
    if (s->label == 1) hsi.latents.set(Split::kTrain, s->id, v);
  }
  const auto out = control_scheme_outputs(hsi, run.corpus, ControlScheme::kPerStyle);
  EXPECT_EQ(out.style_means.at(1), v);
  const auto test = run.corpus.split(Split::kTest);
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test[i]->label == 1) EXPECT_EQ(out.latents[i], v);
  }
}

TEST(ControlSchemes, VqPerStyleMeansAreQuantised) {
  auto& run = trained();
  Model& vqs = run.get(SystemId::kVqs).model;
  const auto out = control_scheme_outputs(vqs, run.corpus, ControlScheme::kPerStyle);
  const Tensor& book = vqs.codebook->vectors.value;
  for (const Tensor& z : out.latents) {
    const auto q = quantize(z, book);
    EXPECT_EQ(q.z_q, z);
  }
  const auto test = run.corpus.split(Split::kTest);
  for (std::size_t i = 0; i < test.size(); ++i) {
    EXPECT_EQ(out.latents[i], quantize(out.style_means.at(test[i]->label), book).z_q);
  }
}

TEST(ControlSchemes, BotAndUnknownSchemeAreRejected) {
  auto& run = trained();
  EXPECT_THROW(control_scheme_outputs(run.get(SystemId::kBot).model, run.corpus,
                                      ControlScheme::kPerStyle),
               ConfigError);
  EXPECT_THROW(parse_control_scheme("per-emotion"), ConfigError);
  EXPECT_EQ(parse_control_scheme("per-style"), ControlScheme::kPerStyle);
}

TEST(ControlSchemes, SingleStyleCorpusGivesOneLiveCodeword) {
  CorpusConfig c = eval_corpus();
  c.styles = 1;
  c.style_dim = 1;
  const auto corpus = generate_corpus(c);
  const auto t = eval_train();
  auto ck = train_system(make_system_spec(SystemId::kVqs, c, t), corpus, t);
  // Force one live codeword: every other codeword far away.
  auto& book = ck.model.codebook->vectors.value;
  for (std::size_t m = 1; m < book.rows(); ++m) {
    for (std::size_t d = 0; d < book.cols(); ++d) book.at(m, d) = 1e6;
  }
  const auto a = control_scheme_outputs(ck.model, corpus, ControlScheme::kPerUtterance);
  const auto b = control_scheme_outputs(ck.model, corpus, ControlScheme::kPerStyle);
  ASSERT_EQ(a.latents.size(), b.latents.size());
  for (std::size_t i = 0; i < a.latents.size(); ++i) EXPECT_EQ(a.latents[i], b.latents[i]);
}

TEST(MseTable, RowsMatchRecordedBestEpoch) {
  auto& run = trained();
  const auto table = mse_table(run.checkpoints, run.corpus);
  ASSERT_EQ(table.size(), 6u);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& ck = run.checkpoints[i];
    EXPECT_EQ(table[i].system, system_name(ck.model.spec.id));
    EXPECT_EQ(table[i].best_epoch, ck.epoch);
    EXPECT_EQ(table[i].test_mse, ck.best().test_mse);
    EXPECT_EQ(table[i].val_mse, ck.best().val_mse);
    EXPECT_EQ(table[i].params, parameter_count(ck.model));
  }
  EXPECT_EQ(metrics_table_csv(table).substr(0, 50),
            std::string("system,params,best_epoch,train_mse,val_mse,test_mse\n").substr(0, 50));
}

TEST(MseTable, DuplicateTrainingGivesIdenticalRows) {
  auto& run = trained();
  const auto t = eval_train();
  std::vector<Checkpoint> twice{
      train_system(make_system_spec(SystemId::kVqr, run.corpus.config, t), run.corpus, t),
      train_system(make_system_spec(SystemId::kVqr, run.corpus.config, t), run.corpus, t)};
  const auto table = mse_table(twice, run.corpus);
  EXPECT_EQ(metrics_table_csv({table[0]}), metrics_table_csv({table[1]}));
}

TEST(MseTable, MismatchedOrTamperedCheckpointsAreRejected) {
  auto& run = trained();
  auto other_config = eval_corpus();
  other_config.seed += 1;
  const auto other = generate_corpus(other_config);
  std::vector<Checkpoint> one{run.get(SystemId::kSup)};
  EXPECT_THROW(mse_table(one, other), ConfigError);
  for (auto& r : one[0].history) r.test_mse += 0.5;
  EXPECT_THROW(mse_table(one, run.corpus), CorruptFileError);
}

TEST(EvaluateRun, WritesEveryReportDeterministically) {
  auto& run = trained();
  const auto a = evaluate_run(run.checkpoints, run.corpus);
  const auto b = evaluate_run(run.checkpoints, run.corpus);
  EXPECT_EQ(a.files, b.files);
  for (const char* f : {"metrics_table.csv", "cluster_report.csv", "knn_report.csv",
                        "confusion_distances.csv", "confusion_NAT.csv", "confusion_BOT_none.csv",
                        "confusion_SUP_per-utterance.csv", "confusion_HSI_per-style.csv",
                        "scatter.csv", "learning_curves.svg", "scatter.svg"}) {
    EXPECT_TRUE(a.files.contains(f)) << f;
  }
  EXPECT_EQ(a.metrics.size(), 6u);
  EXPECT_TRUE(a.clusters.contains("VQS"));
  EXPECT_TRUE(a.clusters.contains("VQR"));
  EXPECT_TRUE(a.knn.contains("HZI"));
  EXPECT_TRUE(a.knn.contains("HSI"));
  // BOT once, five controllable systems under two schemes.
  EXPECT_EQ(a.confusion.size(), 11u);
  EXPECT_NE(a.files.at("cluster_report.csv").find("max(H(cluster), H(label))"), std::string::npos);
  EXPECT_NE(a.summary.find("HSI"), std::string::npos);

  StyleCorpus blind = run.corpus;
  blind.truth.reset();
  EXPECT_THROW(evaluate_run(run.checkpoints, blind), ConfigError);
}

}  // namespace
}  // namespace ctrlsynth
