#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ctrlsynth/objectives.hpp"
#include "ctrlsynth/trainer.hpp"

namespace ctrlsynth {

/// Outcome of one proposition check over a batch of random instances.
struct PropositionReport {
  std::string proposition;
  std::size_t instances = 0;
  /// Largest error of the headline quantity (see each verifier).
  double max_error = 0.0;
  bool pass = false;
  /// Secondary measurements, e.g. agreement counts or per-check maxima.
  std::map<std::string, double> details;
  std::vector<std::string> flags;

  /// {proposition, instances, max_error, pass, details, flags}
  std::string to_json() const;
};

struct VerifierOptions {
  std::size_t instances = 100;
  std::uint64_t seed = 1;
};

/// VQ-VAE objective at beta = 1 against the single-distance objective:
/// max |gradient difference| over decoder, encoder and codebook parameters.
/// Passes at <= 1e-9. Also records the value identity vq = vq1 + |z_e - z_q|^2,
/// that decoder gradients still agree at beta = 0.5, and that the values
/// coincide when z_e sits on a codeword.
PropositionReport verify_prop1(const VerifierOptions& opt = {});

/// (a) weight-1 GMM-quantised objective equals the single-distance objective
/// in value and gradient (<= 1e-12); (b) the exhaustive minimiser of
/// nll(decode(e)) + |z_e - e|^2 / (2 var) over codewords agrees with quantize()
/// on >= 99% of near-converged instances; (c) doubling the variance halves the
/// penalty. max_error is the largest (a)/(c) discrepancy.
PropositionReport verify_prop2(const VerifierOptions& opt = {}, double quant_variance = 0.5);

/// D = 1 latent optimisation against a dense grid (step 1e-3) over a box:
/// heuristic_encode's loss is within 1e-6 of the grid optimum; re-encoding
/// after convergence improves by <= 1e-6; a decoder that ignores z is flagged
/// "flat objective"; box-constrained and box-prior argmin sets coincide.
PropositionReport verify_prop3(const VerifierOptions& opt = {});

/// Prop. 3 on a trained heuristic system: each of the first `sequences`
/// training sequences is encoded to convergence with the system's latent step
/// size, then re-encoded once more; max_error is the largest improvement of
/// that last pass (passes at <= 1e-6). Iterates stay in the box |z_i| <= box,
/// since a saturating decoder may have no finite maximiser.
PropositionReport verify_prop3_trained(Model& model, const StyleCorpus& corpus, double latent_lr,
                                       std::size_t encode_steps, std::size_t sequences = 20,
                                       double box = 4.0);

/// Shrinking-variance Gaussian posteriors: the ELBO-optimal location mu*(s)
/// approaches heuristic_encode's estimate monotonically over s in
/// {1e-1, 1e-2, 1e-3}, ending within 1e-3. Linear-Gaussian instances use the
/// closed form; tanh instances use Gauss-Hermite quadrature.
PropositionReport verify_prop4(const VerifierOptions& opt = {});

/// ln f(x) = KL(q || posterior) + ELBO(q) on enumerable discrete-latent models
/// (<= 1e-12), ELBO <= evidence always, tight at the exact posterior.
PropositionReport verify_elbo_decomposition(const VerifierOptions& opt = {});

/// Every verifier in a fixed order.
std::vector<PropositionReport> verify_all(const VerifierOptions& opt = {});

/// Gauss-Hermite nodes and weights for integrals of f(x) exp(-x^2).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussHermite gauss_hermite(std::size_t order);

}  // namespace ctrlsynth
