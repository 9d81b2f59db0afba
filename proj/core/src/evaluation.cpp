#include "ctrlsynth/evaluation.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <sstream>
#include <utility>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/nets.hpp"
#include "ctrlsynth/objectives.hpp"

namespace ctrlsynth {

namespace {

double squared_distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void check_points(std::span<const LabeledPoint> points, std::size_t k) {
  if (k < 1 || k >= points.size()) {
    throw ConfigError("knn_disagreement: k must be in [1, " + std::to_string(points.size()) +
                      "), got " + std::to_string(k));
  }
  const std::size_t dim = points.front().z.size();
  if (dim == 0) throw ShapeError("knn_disagreement: empty latent vectors");
  for (const auto& p : points) {
    if (p.z.size() != dim) throw ShapeError("knn_disagreement: latents differ in dimension");
  }
}

// Neighbour ranking: distance first, then position.
using Ranked = std::pair<double, std::size_t>;

void tally(KnnCounts& counts, const LabeledPoint& self, std::span<const LabeledPoint> points,
           std::vector<Ranked>& nearest) {
  std::sort(nearest.begin(), nearest.end());
  if (points[nearest.front().second].label != self.label) ++counts.nearest_disagree;
  for (const auto& [d, j] : nearest) {
    if (points[j].label != self.label) {
      ++counts.any_disagree;
      break;
    }
  }
}

double plogp_sum_bits(const std::map<std::size_t, std::size_t>& counts, double n) {
  double h = 0.0;
  for (const auto& [key, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

// Latent before any quantisation: what an encoder emits, or the stored table value.
Tensor raw_latent(Model& model, const Sequence& seq) {
  switch (model.spec.scheme) {
    case LatentScheme::kCodebook:
    case LatentScheme::kGaussianPosterior:
      return encode(*model.encoder, seq.output, seq.linguistic);
    case LatentScheme::kLabels:
    case LatentScheme::kLatentTable:
      return *decoder_latent(model, seq);
    case LatentScheme::kNone:
      break;
  }
  throw ConfigError(std::string(system_name(model.spec.id)) + " has no latent input");
}

}  // namespace

std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const auto* p : model.weight_parameters()) n += p->value.size();
  return n;
}

MetricsTable mse_table(std::span<Checkpoint> checkpoints, const StyleCorpus& corpus) {
  const std::string fingerprint = corpus_fingerprint(corpus);
  MetricsTable table;
  for (Checkpoint& ck : checkpoints) {
    const std::string name = system_name(ck.model.spec.id);
    if (ck.corpus_fingerprint != fingerprint) {
      throw ConfigError("checkpoint " + name + " was trained on a different corpus");
    }
    MetricsRow row{name,
                   parameter_count(ck.model),
                   ck.epoch,
                   split_mse(ck.model, corpus, Split::kTrain),
                   split_mse(ck.model, corpus, Split::kVal),
                   split_mse(ck.model, corpus, Split::kTest)};
    const EpochRecord& rec = ck.best();
    for (auto [now, then] : {std::pair{row.train_mse, rec.train_mse}, {row.val_mse, rec.val_mse},
                             {row.test_mse, rec.test_mse}}) {
      if (std::abs(now - then) > 1e-9 * std::max(1.0, std::abs(then))) {
        throw CorruptFileError("checkpoint " + name +
                               " does not reproduce the MSE recorded at its best epoch");
      }
    }
    table.push_back(std::move(row));
  }
  return table;
}

std::string metrics_table_csv(const MetricsTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "system,params,best_epoch,train_mse,val_mse,test_mse\n";
  for (const auto& r : table) {
    out << r.system << ',' << r.params << ',' << r.best_epoch << ',' << r.train_mse << ','
        << r.val_mse << ',' << r.test_mse << '\n';
  }
  return out.str();
}

KnnCounts knn_disagreement_exhaustive(std::span<const LabeledPoint> points, std::size_t k) {
  check_points(points, k);
  KnnCounts counts{points.size(), k, 0, 0};
  std::vector<Ranked> all;
  for (std::size_t i = 0; i < points.size(); ++i) {
    all.clear();
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != i) all.emplace_back(squared_distance(points[i].z, points[j].z), j);
    }
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
    all.resize(k);
    tally(counts, points[i], points, all);
  }
  return counts;
}

KnnCounts knn_disagreement(std::span<const LabeledPoint> points, std::size_t k) {
  check_points(points, k);
  const std::size_t n = points.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::pair{points[a].z[0], a} < std::pair{points[b].z[0], b};
  });

  KnnCounts counts{n, k, 0, 0};
  std::priority_queue<Ranked> best;  // worst of the current k on top
  std::vector<Ranked> nearest;
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t i = order[pos];
    const double x0 = points[i].z[0];
    best = {};
    auto visit = [&](std::size_t j) {
      const double gap = points[j].z[0] - x0;
      // Once the first coordinate alone exceeds the k-th distance, so does
      // every point further along this direction.
      if (best.size() == k && gap * gap > best.top().first) return false;
      const Ranked cand{squared_distance(points[i].z, points[j].z), j};
      if (best.size() < k) {
        best.push(cand);
      } else if (cand < best.top()) {
        best.pop();
        best.push(cand);
      }
      return true;
    };
    for (std::size_t p = pos; p-- > 0;) {
      if (!visit(order[p])) break;
    }
    for (std::size_t p = pos + 1; p < n; ++p) {
      if (!visit(order[p])) break;
    }
    nearest.clear();
    for (; !best.empty(); best.pop()) nearest.push_back(best.top());
    tally(counts, points[i], points, nearest);
  }
  return counts;
}

ClusterMetrics cluster_metrics(std::span<const IndexAssignment> assignments) {
  if (assignments.empty()) throw ConfigError("cluster_metrics: no assignments");
  ClusterMetrics m;
  m.points = assignments.size();
  const double n = static_cast<double>(m.points);

  std::map<std::size_t, std::size_t> cluster_counts, label_counts;
  std::map<std::pair<std::size_t, int>, std::size_t> joint;
  std::map<int, std::map<std::size_t, std::size_t>> per_label;
  for (const auto& a : assignments) {
    ++cluster_counts[a.index];
    ++label_counts[static_cast<std::size_t>(a.label)];
    ++joint[{a.index, a.label}];
    ++per_label[a.label][a.index];
  }

  std::map<std::size_t, std::size_t> majority;
  for (const auto& [key, c] : joint) majority[key.first] = std::max(majority[key.first], c);
  std::size_t pure = 0;
  for (const auto& [cluster, c] : majority) pure += c;
  m.purity = static_cast<double>(pure) / n;

  m.cluster_entropy_bits = plogp_sum_bits(cluster_counts, n);
  m.label_entropy_bits = plogp_sum_bits(label_counts, n);
  for (const auto& [key, c] : joint) {
    const double pj = static_cast<double>(c) / n;
    const double pc = static_cast<double>(cluster_counts[key.first]) / n;
    const double pl = static_cast<double>(label_counts[static_cast<std::size_t>(key.second)]) / n;
    m.mutual_information_bits += pj * std::log2(pj / (pc * pl));
  }
  const double norm = std::max(m.cluster_entropy_bits, m.label_entropy_bits);
  m.nmi = norm > 0.0 ? m.mutual_information_bits / norm : 1.0;
  m.clusters_used = cluster_counts.size();

  for (const auto& [label, hist] : per_label) {
    std::vector<std::size_t> counts;
    std::size_t total = 0;
    for (const auto& [idx, c] : hist) {
      counts.push_back(c);
      total += c;
    }
    m.label_entropy[label] = entropy_bits(counts);
    m.label_clusters[label] = hist.size();
    m.label_counts[label] = total;
  }
  return m;
}

double confusion_frobenius(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("confusion_frobenius: shapes differ");
  return std::sqrt(squared_distance(a, b));
}

ConfusionMatrix oracle_classify(std::span<const StyledOutput> outputs,
                                const GeneratorTruth& truth) {
  const std::size_t styles = truth.styles.rows();
  Tensor counts(styles, styles);
  for (const auto& o : outputs) {
    if (o.tokens == nullptr) throw ConfigError("oracle_classify: output without tokens");
    if (o.label < 0 || static_cast<std::size_t>(o.label) >= styles) {
      throw ConfigError("oracle_classify: label out of range");
    }
    std::size_t best_k = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < styles; ++k) {
      const Tensor signature = truth.clean_output(*o.tokens, truth.style(k));
      if (!signature.same_shape(o.output)) throw ShapeError("oracle_classify: output shape");
      const double d = squared_distance(signature, o.output);
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    counts.at(static_cast<std::size_t>(o.label), best_k) += 1.0;
  }
  for (std::size_t r = 0; r < styles; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < styles; ++c) total += counts.at(r, c);
    if (total == 0.0) {
      throw ConfigError("oracle_classify: no outputs for style " + std::to_string(r));
    }
    for (std::size_t c = 0; c < styles; ++c) counts.at(r, c) /= total;
  }
  return counts;
}

std::vector<StyledOutput> natural_outputs(const StyleCorpus& corpus, Split split) {
  std::vector<StyledOutput> out;
  for (const Sequence* s : corpus.split(split)) {
    out.push_back({s->id, s->label, &s->tokens, s->output});
  }
  return out;
}

const char* control_scheme_name(ControlScheme s) {
  return s == ControlScheme::kPerUtterance ? "per-utterance" : "per-style";
}

ControlScheme parse_control_scheme(const std::string& name) {
  if (name == "per-utterance") return ControlScheme::kPerUtterance;
  if (name == "per-style") return ControlScheme::kPerStyle;
  throw ConfigError("unknown control scheme '" + name + "' (per-utterance, per-style)");
}

ControlOutputs control_scheme_outputs(Model& model, const StyleCorpus& corpus,
                                      ControlScheme scheme) {
  if (model.spec.scheme == LatentScheme::kNone) {
    throw ConfigError(std::string(system_name(model.spec.id)) + " takes no control input");
  }
  ControlOutputs result;
  if (scheme == ControlScheme::kPerStyle) {
    std::map<int, std::size_t> counts;
    for (const Sequence* s : corpus.split(Split::kTrain)) {
      const Tensor z = raw_latent(model, *s);
      auto [it, fresh] = result.style_means.try_emplace(s->label, z);
      if (!fresh) {
        for (std::size_t i = 0; i < z.size(); ++i) it->second[i] += z[i];
      }
      ++counts[s->label];
    }
    for (auto& [label, sum] : result.style_means) {
      for (auto& v : sum.storage()) v /= static_cast<double>(counts[label]);
    }
  }
  for (const Sequence* s : corpus.split(Split::kTest)) {
    Tensor z;
    if (scheme == ControlScheme::kPerUtterance) {
      z = *decoder_latent(model, *s);
    } else {
      const auto it = result.style_means.find(s->label);
      if (it == result.style_means.end()) {
        throw ConfigError("per-style control: no training sequences of style " +
                          std::to_string(s->label));
      }
      z = model.spec.scheme == LatentScheme::kCodebook
              ? quantize(it->second, model.codebook->vectors.value).z_q
              : it->second;
    }
    result.outputs.push_back({s->id, s->label, &s->tokens, decode(model.decoder, s->linguistic, &z)});
    result.latents.push_back(std::move(z));
  }
  return result;
}

std::vector<LabeledPoint> split_latents(Model& model, const StyleCorpus& corpus, Split split) {
  std::vector<LabeledPoint> points;
  for (const Sequence* s : corpus.split(split)) {
    points.push_back({s->id, s->label, raw_latent(model, *s)});
  }
  return points;
}

std::vector<IndexAssignment> code_assignments(Model& model, const StyleCorpus& corpus,
                                              Split split) {
  if (!model.codebook || !model.encoder) {
    throw ConfigError(std::string(system_name(model.spec.id)) + " has no codebook");
  }
  std::vector<IndexAssignment> out;
  for (const Sequence* s : corpus.split(split)) {
    const Tensor z_e = encode(*model.encoder, s->output, s->linguistic);
    out.push_back({s->id, s->label, quantize(z_e, model.codebook->vectors.value).index});
  }
  return out;
}

PcaResult pca_project(std::span<const Tensor> points) {
  if (points.size() < 3) throw ConfigError("pca_project: need at least 3 points");
  const std::size_t dim = points.front().size();
  if (dim == 0) throw ShapeError("pca_project: empty vectors");
  const auto rows = static_cast<Eigen::Index>(points.size());
  const auto cols = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd x(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Tensor& p = points[static_cast<std::size_t>(r)];
    if (p.size() != dim) throw ShapeError("pca_project: vectors differ in dimension");
    for (Eigen::Index c = 0; c < cols; ++c) x(r, c) = p[static_cast<std::size_t>(c)];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double total = sv.squaredNorm();

  PcaResult r;
  r.axes = Tensor(2, dim);
  r.coords = Tensor(points.size(), 2);
  const Eigen::Index comps = std::min<Eigen::Index>(2, sv.size());
  for (Eigen::Index a = 0; a < comps; ++a) {
    Eigen::VectorXd axis = svd.matrixV().col(a);
    Eigen::Index lead = 0;
    for (Eigen::Index c = 1; c < cols; ++c) {
      if (std::abs(axis(c)) > std::abs(axis(lead))) lead = c;
    }
    if (axis(lead) < 0) axis = -axis;
    const Eigen::VectorXd proj = x * axis;
    const auto ai = static_cast<std::size_t>(a);
    for (Eigen::Index c = 0; c < cols; ++c) r.axes.at(ai, static_cast<std::size_t>(c)) = axis(c);
    for (Eigen::Index i = 0; i < rows; ++i) r.coords.at(static_cast<std::size_t>(i), ai) = proj(i);
    r.explained_ratio[ai] = total > 0.0 ? sv(a) * sv(a) / total : 0.0;
  }
  return r;
}

}  // namespace ctrlsynth
