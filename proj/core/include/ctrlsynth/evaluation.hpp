#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctrlsynth/quantizer.hpp"
#include "ctrlsynth/synthdata.hpp"
#include "ctrlsynth/tensor.hpp"
#include "ctrlsynth/trainer.hpp"

namespace ctrlsynth {

// -- MSE table ---------------------------------------------------------------

struct MetricsRow {
  std::string system;
  std::size_t params = 0;
  std::size_t best_epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double test_mse = 0.0;
};
using MetricsTable = std::vector<MetricsRow>;

/// Evaluates each checkpoint's best state on all three splits. Throws
/// ConfigError when a checkpoint was trained on another corpus, and
/// CorruptFileError when it no longer reproduces its recorded MSEs.
MetricsTable mse_table(std::span<Checkpoint> checkpoints, const StyleCorpus& corpus);

/// system,params,best_epoch,train_mse,val_mse,test_mse
std::string metrics_table_csv(const MetricsTable& table);

/// Total number of weights (decoder, encoder, codebook); latent tables excluded.
std::size_t parameter_count(const Model& model);

// -- latent-space structure ----------------------------------------------------

struct LabeledPoint {
  std::size_t id = 0;
  int label = 0;
  Tensor z;
};

struct KnnCounts {
  std::size_t points = 0;
  std::size_t k = 0;
  /// Points whose nearest neighbour carries another label.
  std::size_t nearest_disagree = 0;
  /// Points with another label anywhere among their k nearest neighbours.
  std::size_t any_disagree = 0;
};

/// Exact Euclidean k-NN by a sweep along the first coordinate that stops once
/// that coordinate alone rules out every remaining point. Neighbour ties go
/// to the lower position in `points`. Throws ConfigError unless 1 <= k < N.
KnnCounts knn_disagreement(std::span<const LabeledPoint> points, std::size_t k);

/// Same counts from the plain O(N^2) scan; the reference for the sweep.
KnnCounts knn_disagreement_exhaustive(std::span<const LabeledPoint> points, std::size_t k);

struct ClusterMetrics {
  std::size_t points = 0;
  double purity = 0.0;
  /// I(cluster; label) / max(H(cluster), H(label)), in bits. Two single-block
  /// partitions count as identical (1.0).
  double nmi = 0.0;
  double mutual_information_bits = 0.0;
  double cluster_entropy_bits = 0.0;
  double label_entropy_bits = 0.0;
  /// Distinct cluster indices in use.
  std::size_t clusters_used = 0;
  /// label -> entropy (bits) of the cluster indices within that label
  std::map<int, double> label_entropy;
  /// label -> distinct cluster indices within that label
  std::map<int, std::size_t> label_clusters;
  /// label -> number of points
  std::map<int, std::size_t> label_counts;
};

/// Throws ConfigError for an empty assignment list.
ClusterMetrics cluster_metrics(std::span<const IndexAssignment> assignments);

// -- confusion matrices --------------------------------------------------------

/// K x K, rows = prompted style, columns = classified style, rows sum to 1.
using ConfusionMatrix = Tensor;

/// Frobenius norm of a - b; ShapeError on mismatched shapes.
double confusion_frobenius(const Tensor& a, const Tensor& b);

/// A decoded or natural sequence together with its prompted style.
struct StyledOutput {
  std::size_t id = 0;
  int label = 0;
  const std::vector<int>* tokens = nullptr;
  Tensor output;
};

/// Classifies each output by the nearest noise-free style signature
/// truth.clean_output(tokens, s_k) in squared error (ties to the lower k).
/// Throws ConfigError if a style has no outputs.
ConfusionMatrix oracle_classify(std::span<const StyledOutput> outputs, const GeneratorTruth& truth);

/// Test-split natural outputs, for the natural-data reference matrix.
std::vector<StyledOutput> natural_outputs(const StyleCorpus& corpus, Split split = Split::kTest);

// -- control schemes -------------------------------------------------------------

enum class ControlScheme { kPerUtterance, kPerStyle };
const char* control_scheme_name(ControlScheme s);
/// "per-utterance" or "per-style"; ConfigError otherwise.
ControlScheme parse_control_scheme(const std::string& name);

struct ControlOutputs {
  /// Decoder input per test sequence, in split order.
  std::vector<Tensor> latents;
  std::vector<StyledOutput> outputs;
  /// label -> mean training latent (per-style scheme only), before quantisation.
  std::map<int, Tensor> style_means;
};

/// Decodes the test split under one control scheme. Per-utterance uses each
/// sequence's own latent (stored table, encoder, or label). Per-style uses the
/// mean training latent of the sequence's style; VQ systems average encoder
/// outputs and quantise the mean. BOT has no control input: ConfigError.
ControlOutputs control_scheme_outputs(Model& model, const StyleCorpus& corpus,
                                      ControlScheme scheme);

/// Encoder outputs (VQ and CVAE systems) or table latents (heuristic systems)
/// for a split; labels-only systems give their label vectors.
std::vector<LabeledPoint> split_latents(Model& model, const StyleCorpus& corpus, Split split);

/// Codeword index per sequence of a split (VQ systems only).
std::vector<IndexAssignment> code_assignments(Model& model, const StyleCorpus& corpus,
                                              Split split);

// -- projection --------------------------------------------------------------------

struct PcaResult {
  /// N x 2 coordinates on the two leading axes (zero column when D = 1).
  Tensor coords;
  /// 2 x D orthonormal axes; each has its largest-magnitude loading positive.
  Tensor axes;
  std::array<double, 2> explained_ratio{};
};

/// Throws ConfigError for fewer than 3 points and ShapeError for ragged input.
PcaResult pca_project(std::span<const Tensor> points);

// -- full report -----------------------------------------------------------------

struct EvalOptions {
  std::vector<ControlScheme> schemes{ControlScheme::kPerUtterance, ControlScheme::kPerStyle};
  std::size_t knn_k = 5;
};

struct ConfusionRow {
  std::string system;
  std::string scheme;
  double to_identity = 0.0;
  double to_natural = 0.0;
};

struct EvalReport {
  MetricsTable metrics;
  std::map<std::string, ClusterMetrics> clusters;
  std::map<std::string, KnnCounts> knn;
  std::vector<ConfusionRow> confusion;
  double natural_to_identity = 0.0;
  /// file name -> content, for everything the eval command writes.
  std::map<std::string, std::string> files;
  /// Human-readable tables for stdout.
  std::string summary;
};

/// Every analysis over a set of trained checkpoints. The corpus must carry its
/// truth block (for the oracle classifier).
EvalReport evaluate_run(std::span<Checkpoint> checkpoints, const StyleCorpus& corpus,
                        const EvalOptions& options = {});

}  // namespace ctrlsynth
