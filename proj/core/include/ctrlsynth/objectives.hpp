#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctrlsynth/autodiff.hpp"
#include "ctrlsynth/nets.hpp"
#include "ctrlsynth/tensor.hpp"

namespace ctrlsynth {

/// Objective hyperparameters. All objectives are minimised.
struct HyperParams {
  /// Commitment weight of the VQ-VAE objective.
  double beta = 0.25;
  /// Quantisation-noise variance of the GMM-quantised VAE; 0.5 gives weight 1.
  double quant_variance = 0.5;
  /// Isotropic output-noise variance; features are normalised, so it stays 1.
  double output_variance = 1.0;
  /// Half-width of a box prior on the latent; unset means a flat prior.
  std::optional<double> latent_box;
};

struct ObjectiveValue {
  struct Term {
    std::string name;
    double value = 0.0;
  };
  double total = 0.0;
  std::vector<Term> terms;

  double term(const std::string& name) const;
};

/// Node ids of an objective built into a graph.
struct ObjectiveNodes {
  ad::NodeId total = 0;
  std::vector<std::pair<std::string, ad::NodeId>> terms;
  /// Codeword chosen by the quantiser, for VQ objectives.
  std::optional<std::size_t> code_index;
  /// Latent actually fed to the decoder, when there is one.
  std::optional<ad::NodeId> latent;
  /// Encoder output, for amortised objectives.
  std::optional<ad::NodeId> encoder_output;

  ObjectiveValue value(const ad::Graph& g) const;
};

using DecoderFn =
    std::function<ad::NodeId(ad::Graph&, ad::NodeId linguistic, std::optional<ad::NodeId> latent)>;
using EncoderFn =
    std::function<EncoderNet::Output(ad::Graph&, ad::NodeId output_seq, ad::NodeId linguistic)>;

DecoderFn decoder_fn(DecoderNet& net);
EncoderFn encoder_fn(EncoderNet& net);

/// A (linguistic, output) pair; both have one row per frame.
struct SequenceView {
  const Tensor& linguistic;
  const Tensor& output;
};

// -- plain evaluation ------------------------------------------------------

/// Mean over frames of the per-frame squared Euclidean error.
double frame_mse(const Tensor& prediction, const Tensor& target);

/// Per-frame average Gaussian log-likelihood, ln N(x_t; x^_t, variance I) averaged over t.
double gaussian_frame_loglik(const Tensor& prediction, const Tensor& target, double variance);

// -- graph builders --------------------------------------------------------
//
// Every likelihood term is the sequence negative log-likelihood divided by the
// number of frames, matching per-frame MSE training:
//   nll = frame_se / (2 variance) + (p / 2) ln(2 pi variance).

ad::NodeId build_frame_mse(ad::Graph& g, ad::NodeId prediction, ad::NodeId target);
ad::NodeId build_frame_nll(ad::Graph& g, ad::NodeId prediction, ad::NodeId target,
                           double variance);

/// BOT when `label_vector` is null, SUP otherwise: frame MSE of the decoder output.
ObjectiveNodes build_supervised_objective(ad::Graph& g, const DecoderFn& decoder,
                                          const SequenceView& seq, const Tensor* label_vector);

/// Frame MSE with the latent taken from a learnable parameter.
ObjectiveNodes build_heuristic_objective(ad::Graph& g, const DecoderFn& decoder,
                                         const SequenceView& seq, ad::Parameter& latent);

/// nll(decode(st(z_e, z_q))) + |sg(z_e) - z_q|^2 + beta |z_e - sg(z_q)|^2.
ObjectiveNodes build_vq_vae_objective(ad::Graph& g, const DecoderFn& decoder,
                                      const EncoderFn& encoder, ad::Parameter& codebook,
                                      const SequenceView& seq, const HyperParams& hp);

/// nll(decode(st(z_e, z_q))) + |z_e - z_q|^2 / (2 quant_variance). No stop-gradients.
ObjectiveNodes build_gmmq_objective(ad::Graph& g, const DecoderFn& decoder,
                                    const EncoderFn& encoder, ad::Parameter& codebook,
                                    const SequenceView& seq, const HyperParams& hp);

/// nll(decode(st(z_e, z_q))) + |z_e - z_q|^2. No stop-gradients.
ObjectiveNodes build_vq1_objective(ad::Graph& g, const DecoderFn& decoder,
                                   const EncoderFn& encoder, ad::Parameter& codebook,
                                   const SequenceView& seq, const HyperParams& hp);

/// Negated per-frame ELBO with a standard-normal prior, Monte-Carlo over the
/// reparameterised samples z = mu + exp(logvar / 2) * noise[i].
ObjectiveNodes build_cvae_objective(ad::Graph& g, const DecoderFn& decoder,
                                    const EncoderFn& encoder, const SequenceView& seq,
                                    std::span<const Tensor> noise, const HyperParams& hp);

// -- convenience wrappers (build, evaluate, discard) -----------------------

ObjectiveValue supervised_loss(DecoderNet& decoder, const SequenceView& seq,
                               const Tensor* label_vector);
ObjectiveValue heuristic_loss(const DecoderFn& decoder, const SequenceView& seq,
                              const Tensor& latent);
ObjectiveValue vq_vae_loss(DecoderNet& decoder, EncoderNet& encoder, ad::Parameter& codebook,
                           const SequenceView& seq, const HyperParams& hp);
ObjectiveValue gmmq_loss(DecoderNet& decoder, EncoderNet& encoder, ad::Parameter& codebook,
                         const SequenceView& seq, const HyperParams& hp);
ObjectiveValue vq1_loss(DecoderNet& decoder, EncoderNet& encoder, ad::Parameter& codebook,
                        const SequenceView& seq, const HyperParams& hp);
ObjectiveValue cvae_elbo(DecoderNet& decoder, EncoderNet& encoder, const SequenceView& seq,
                         std::span<const Tensor> noise, const HyperParams& hp);

// -- latent-only optimisation ----------------------------------------------

struct EncodeResult {
  Tensor z;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool worsened = false;
};

/// Encoder of the heuristic systems: `steps` SGD updates of the latent alone,
/// with decoder weights frozen. The latent gradient sums over frames
/// (the sequence squared error), and with a box prior each iterate is
/// projected back onto the box. Losses are frame MSE. Emits a warning on
/// stderr when the final loss exceeds the initial one; throws NumericError
/// on a non-finite gradient.
EncodeResult heuristic_encode(const DecoderFn& decoder, const SequenceView& seq,
                              const Tensor& z_init, std::size_t steps, double lr,
                              std::optional<double> box = std::nullopt);

/// Warnings go to stderr unless silenced (tests silence them).
void set_warnings_enabled(bool enabled);
void warn(const std::string& message);

}  // namespace ctrlsynth
