#include "ctrlsynth/verifiers.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/quantizer.hpp"
#include "json_util.hpp"

namespace ctrlsynth {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ArchConfig instance_arch(std::size_t latent_dim) {
  ArchConfig a;
  a.linguistic_dim = 3;
  a.output_dim = 2;
  a.latent_dim = latent_dim;
  a.ff_units = 4;
  a.rnn_units = 3;
  return a;
}

Tensor uniform(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

struct RandomSequence {
  Tensor linguistic;
  Tensor output;
  SequenceView view() const { return {linguistic, output}; }
};

RandomSequence random_sequence(std::mt19937_64& rng, const ArchConfig& arch) {
  const std::size_t frames = std::uniform_int_distribution<std::size_t>(2, 5)(rng);
  return {uniform(rng, frames, arch.linguistic_dim, -1, 1),
          uniform(rng, frames, arch.output_dim, -1, 1)};
}

void track_max(double& slot, double v) { slot = std::max(slot, v); }

double max_grad_diff(const ad::ParamGrads& a, const ad::ParamGrads& b) {
  if (a.size() != b.size()) return kInf;
  double m = 0.0;
  for (const auto& [name, ga] : a) {
    const auto it = b.find(name);
    if (it == b.end() || !ga.same_shape(it->second)) return kInf;
    for (std::size_t i = 0; i < ga.size(); ++i) m = std::max(m, std::abs(ga[i] - it->second[i]));
  }
  return m;
}

struct Evaluated {
  ObjectiveValue value;
  ad::ParamGrads grads;
  std::optional<std::size_t> code;
};

template <typename Build>
Evaluated evaluate(Build&& build) {
  ad::Graph g;
  const ObjectiveNodes nodes = build(g);
  g.forward_pending();
  Evaluated e{nodes.value(g), g.backward(nodes.total), nodes.code_index};
  return e;
}

// Scalar-latent decoder x_t = act(l_t W + z v + c_t), with act the identity
// or tanh. `loss` evaluates its frame MSE directly, without the graph.
struct ScalarModel {
  Tensor l, w, v, c, x;
  bool saturating = false;

  DecoderFn decoder() const {
    return [m = *this](ad::Graph& g, ad::NodeId lin, std::optional<ad::NodeId> z) {
      const std::size_t frames = g.node(lin).rows;
      const ad::NodeId pre = g.add(
          g.add(g.matmul(lin, g.constant(m.w)), g.matmul(g.tile_rows(*z, frames), g.constant(m.v))),
          g.constant(m.c));
      return m.saturating ? g.tanh(pre) : pre;
    };
  }

  double loss(double z) const {
    double se = 0.0;
    for (std::size_t t = 0; t < x.rows(); ++t) {
      for (std::size_t d = 0; d < x.cols(); ++d) {
        double pre = z * v[d] + c.at(t, d);
        for (std::size_t k = 0; k < l.cols(); ++k) pre += l.at(t, k) * w.at(k, d);
        const double e = x.at(t, d) - (saturating ? std::tanh(pre) : pre);
        se += e * e;
      }
    }
    return se / static_cast<double>(x.rows());
  }

  SequenceView view() const { return {l, x}; }
};

ScalarModel random_scalar_model(std::mt19937_64& rng, bool saturating) {
  const std::size_t frames = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
  ScalarModel m;
  m.saturating = saturating;
  m.l = uniform(rng, frames, 3, -1, 1);
  m.w = uniform(rng, 3, 2, saturating ? -0.5 : -1, saturating ? 0.5 : 1);
  m.v = uniform(rng, 1, 2, 0.3, 1.0);
  m.c = Tensor(frames, 2);
  return m;
}

// Runs heuristic_encode in rounds until a round improves by less than `tol`.
EncodeResult encode_to_convergence(const DecoderFn& dec, const SequenceView& seq, Tensor z,
                                   double lr, std::optional<double> box, double tol,
                                   std::size_t max_rounds = 200) {
  EncodeResult r = heuristic_encode(dec, seq, z, 50, lr, box);
  const double first = r.initial_loss;
  for (std::size_t i = 1; i < max_rounds && r.initial_loss - r.final_loss > tol; ++i) {
    r = heuristic_encode(dec, seq, r.z, 50, lr, box);
  }
  r.initial_loss = first;
  return r;
}

PropositionReport new_report(std::string name, const VerifierOptions& opt) {
  PropositionReport r;
  r.proposition = std::move(name);
  r.instances = opt.instances;
  return r;
}

}  // namespace

std::string PropositionReport::to_json() const {
  detail::Json j{{"proposition", proposition},
                 {"instances", instances},
                 {"max_error", max_error},
                 {"pass", pass},
                 {"details", details},
                 {"flags", flags}};
  return j.dump(2);
}

PropositionReport verify_prop1(const VerifierOptions& opt) {
  PropositionReport r = new_report("prop1_beta1_gradient_equivalence", opt);
  std::mt19937_64 rng(opt.seed);
  double value_identity = 0.0, theta_at_half = 0.0, on_codeword = 0.0;
  HyperParams hp;
  hp.beta = 1.0;
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const ArchConfig arch = instance_arch(2);
    DecoderNet dec(arch, rng);
    EncoderNet enc(arch, n % 2 ? EncoderOrder::kReversed : EncoderOrder::kSame, false, rng);
    Codebook book(5, arch.latent_dim, rng);
    const auto seq = random_sequence(rng, arch);
    const auto vq = evaluate([&](ad::Graph& g) {
      return build_vq_vae_objective(g, decoder_fn(dec), encoder_fn(enc), book.vectors, seq.view(),
                                    hp);
    });
    const auto one = evaluate([&](ad::Graph& g) {
      return build_vq1_objective(g, decoder_fn(dec), encoder_fn(enc), book.vectors, seq.view(), hp);
    });
    track_max(r.max_error, max_grad_diff(vq.grads, one.grads));
    const double d = one.value.term("quantisation");
    track_max(value_identity, std::abs(vq.value.total - (one.value.total + d)));

    // Away from beta = 1 the encoder gradients part ways, the decoder's do not.
    HyperParams half = hp;
    half.beta = 0.5;
    const auto vq_half = evaluate([&](ad::Graph& g) {
      return build_vq_vae_objective(g, decoder_fn(dec), encoder_fn(enc), book.vectors, seq.view(),
                                    half);
    });
    ad::ParamGrads theta_half, theta_one;
    for (const auto* p : dec.parameters()) {
      theta_half.emplace(p->name, vq_half.grads.at(p->name));
      theta_one.emplace(p->name, one.grads.at(p->name));
    }
    track_max(theta_at_half, max_grad_diff(theta_half, theta_one));

    // Moving a codeword onto z_e makes the two values coincide.
    const Tensor z_e = encode(enc, seq.output, seq.linguistic);
    Codebook snapped(book.vectors.value);
    const std::size_t m = quantize(z_e, snapped.vectors.value).index;
    for (std::size_t c = 0; c < z_e.size(); ++c) snapped.vectors.value.at(m, c) = z_e[c];
    track_max(on_codeword,
              std::abs(vq_vae_loss(dec, enc, snapped.vectors, seq.view(), hp).total -
                       vq1_loss(dec, enc, snapped.vectors, seq.view(), hp).total));
  }
  r.details["value_identity_max_error"] = value_identity;
  r.details["beta_half_decoder_max_error"] = theta_at_half;
  r.details["on_codeword_value_max_error"] = on_codeword;
  r.pass = r.max_error <= 1e-9 && value_identity <= 1e-12 && theta_at_half <= 1e-9 &&
           on_codeword <= 1e-12;
  return r;
}

PropositionReport verify_prop2(const VerifierOptions& opt, double quant_variance) {
  if (!(quant_variance > 0)) throw ConfigError("verify_prop2: variance must be positive");
  PropositionReport r = new_report("prop2_gmm_quantisation_limit", opt);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  double identity = 0.0, scaling = 0.0;
  std::size_t agree = 0;
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const ArchConfig arch = instance_arch(2);
    DecoderNet dec(arch, rng);
    EncoderNet enc(arch, EncoderOrder::kSame, false, rng);
    Codebook book(6, arch.latent_dim, rng);
    const auto seq = random_sequence(rng, arch);

    // (a) weight-1 identity in value and gradient.
    HyperParams unit_weight;
    unit_weight.quant_variance = 0.5;
    const auto gm = evaluate([&](ad::Graph& g) {
      return build_gmmq_objective(g, decoder_fn(dec), encoder_fn(enc), book.vectors, seq.view(),
                                  unit_weight);
    });
    const auto one = evaluate([&](ad::Graph& g) {
      return build_vq1_objective(g, decoder_fn(dec), encoder_fn(enc), book.vectors, seq.view(),
                                 unit_weight);
    });
    track_max(identity, std::abs(gm.value.total - one.value.total));
    track_max(identity, max_grad_diff(gm.grads, one.grads));

    // (c) the penalty is inversely proportional to the variance.
    HyperParams at_var, at_double;
    at_var.quant_variance = quant_variance;
    at_double.quant_variance = 2 * quant_variance;
    const double p1 = gmmq_loss(dec, enc, book.vectors, seq.view(), at_var).term("quantisation");
    const double p2 = gmmq_loss(dec, enc, book.vectors, seq.view(), at_double).term("quantisation");
    track_max(scaling, std::abs(p2 - 0.5 * p1));

    // (b) near-converged instance: well separated codewords, an encoder output
    // close to one of them, and data the decoder explains from that codeword.
    Tensor words = uniform(rng, 6, arch.latent_dim, -3, 3);
    const std::size_t target = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
    Tensor z_e = Tensor::row({words.at(target, 0) + 0.05 * unit(rng),
                              words.at(target, 1) + 0.05 * unit(rng)});
    const Tensor z_true = Tensor::row({words.at(target, 0), words.at(target, 1)});
    Tensor x = decode(dec, seq.linguistic, &z_true);
    for (auto& v : x.storage()) v += 0.05 * unit(rng);
    double best = kInf;
    std::size_t best_e = 0;
    for (std::size_t e = 0; e < words.rows(); ++e) {
      const Tensor we = Tensor::row({words.at(e, 0), words.at(e, 1)});
      const Tensor pred = decode(dec, seq.linguistic, &we);
      double dist = 0.0;
      for (std::size_t i = 0; i < we.size(); ++i) dist += (z_e[i] - we[i]) * (z_e[i] - we[i]);
      const double nll = -gaussian_frame_loglik(pred, x, 1.0);
      const double obj = nll + dist / (2.0 * quant_variance);
      if (obj < best) {
        best = obj;
        best_e = e;
      }
    }
    if (best_e == quantize(z_e, words).index) ++agree;
  }
  r.max_error = std::max(identity, scaling);
  r.details["weight1_identity_max_error"] = identity;
  r.details["penalty_scaling_max_error"] = scaling;
  r.details["argmax_agreements"] = static_cast<double>(agree);
  r.pass = identity <= 1e-12 && scaling <= 1e-12 &&
           static_cast<double>(agree) >= 0.99 * static_cast<double>(opt.instances);
  return r;
}

PropositionReport verify_prop3(const VerifierOptions& opt) {
  PropositionReport r = new_report("prop3_latent_argmax_encoder", opt);
  std::mt19937_64 rng(opt.seed);
  constexpr double kBox = 2.0;
  constexpr double kStep = 1e-3;
  const auto half = static_cast<std::int64_t>(std::llround(2 * kBox / kStep));
  double reencode = 0.0, box_mismatch = 0.0;
  std::size_t boundary_optima = 0;

  for (std::size_t n = 0; n < opt.instances; ++n) {
    // Linear and tanh decoders alternate. Data come from a latent drawn a
    // little wider than the box, so some optima sit on its edge.
    ScalarModel m = random_scalar_model(rng, n % 2 == 1);
    const double z_gen = std::uniform_real_distribution<double>(-2.5, 2.5)(rng);
    m.x = Tensor(m.l.rows(), 2);
    for (std::size_t t = 0; t < m.l.rows(); ++t) {
      for (std::size_t d = 0; d < 2; ++d) {
        double pre = z_gen * m.v[d];
        for (std::size_t k = 0; k < 3; ++k) pre += m.l.at(t, k) * m.w.at(k, d);
        m.x.at(t, d) = (m.saturating ? std::tanh(pre) : pre) +
                       std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      }
    }

    // Box-constrained grid search, and an unconstrained search over twice the
    // width under the box prior, whose negative log density is +inf outside.
    double grid_best = kInf, prior_best = kInf;
    double grid_arg = 0.0, prior_arg = 0.0;
    for (std::int64_t i = -half; i <= half; ++i) {
      const double z = kStep * static_cast<double>(i);
      const bool inside = std::abs(z) <= kBox + 1e-12;
      const double loss = m.loss(z);
      if (inside && loss < grid_best) {
        grid_best = loss;
        grid_arg = z;
      }
      const double penalised = inside ? loss : kInf;
      if (penalised < prior_best) {
        prior_best = penalised;
        prior_arg = z;
      }
    }
    track_max(box_mismatch, std::abs(grid_arg - prior_arg));
    if (std::abs(grid_arg) >= kBox - kStep / 2) ++boundary_optima;

    // Step size below the inverse curvature of the summed squared error in z.
    double vv = 0.0;
    for (double c : m.v.values()) vv += c * c;
    const double lr = 0.25 / (static_cast<double>(m.l.rows()) * vv);
    const DecoderFn dec = m.decoder();
    const auto enc = encode_to_convergence(dec, m.view(), Tensor(1, 1), lr, kBox, 1e-15);
    track_max(r.max_error, std::abs(enc.final_loss - grid_best));
    const auto again = heuristic_encode(dec, m.view(), enc.z, 50, lr, kBox);
    track_max(reencode, again.initial_loss - again.final_loss);
  }

  // A decoder that ignores z ties every grid point.
  {
    ScalarModel m = random_scalar_model(rng, false);
    m.v = Tensor(1, 2);
    m.x = uniform(rng, m.l.rows(), 2, -1, 1);
    double lo = kInf, hi = -kInf;
    for (std::int64_t i = -half / 2; i <= half / 2; ++i) {
      const double loss = m.loss(kStep * static_cast<double>(i));
      lo = std::min(lo, loss);
      hi = std::max(hi, loss);
    }
    if (hi - lo == 0.0) r.flags.push_back("flat objective");
    const auto enc = heuristic_encode(m.decoder(), m.view(), Tensor::row({0.7}), 50, 0.1);
    r.details["flat_encode_moved"] = std::abs(enc.z[0] - 0.7);
  }

  r.details["reencode_improvement_max"] = reencode;
  r.details["box_prior_argmin_mismatch"] = box_mismatch;
  r.details["boundary_optima"] = static_cast<double>(boundary_optima);
  r.pass = r.max_error <= 1e-6 && reencode <= 1e-6 && box_mismatch == 0.0 &&
           r.details["flat_encode_moved"] == 0.0 &&
           std::find(r.flags.begin(), r.flags.end(), "flat objective") != r.flags.end();
  return r;
}

PropositionReport verify_prop3_trained(Model& model, const StyleCorpus& corpus, double latent_lr,
                                       std::size_t encode_steps, std::size_t sequences,
                                       double box) {
  if (model.latents.size() == 0) {
    throw ConfigError("verify_prop3_trained: system has no latent table");
  }
  const auto train = corpus.split(Split::kTrain);
  PropositionReport r = new_report("prop3_trained_reencode", {});
  r.instances = std::min(sequences, train.size());
  const DecoderFn dec = decoder_fn(model.decoder);
  double largest_first_pass = 0.0;
  std::size_t unconverged = 0;
  for (std::size_t i = 0; i < r.instances; ++i) {
    const Sequence& s = *train[i];
    const SequenceView view{s.linguistic, s.output};
    EncodeResult enc = heuristic_encode(dec, view, model.latents.get(Split::kTrain, s.id),
                                        encode_steps, latent_lr, box);
    track_max(largest_first_pass, enc.initial_loss - enc.final_loss);
    std::size_t round = 0;
    for (; round < 2000 && enc.initial_loss - enc.final_loss > 1e-9; ++round) {
      enc = heuristic_encode(dec, view, enc.z, encode_steps, latent_lr, box);
    }
    if (enc.initial_loss - enc.final_loss > 1e-9) ++unconverged;
    const auto again = heuristic_encode(dec, view, enc.z, encode_steps, latent_lr, box);
    track_max(r.max_error, again.initial_loss - again.final_loss);
  }
  r.details["table_latent_first_pass_improvement"] = largest_first_pass;
  r.details["box"] = box;
  r.details["unconverged"] = static_cast<double>(unconverged);
  // A nearly flat objective can exhaust the round budget; the check then
  // fails rather than treating an unfinished descent as converged.
  if (unconverged > 0) r.flags.push_back("not converged within 2000 rounds");
  r.pass = r.max_error <= 1e-6;
  return r;
}

GaussHermite gauss_hermite(std::size_t order) {
  if (order == 0) throw ConfigError("gauss_hermite: order must be positive");
  // Golub-Welsch: eigenvalues of the Jacobi matrix are the nodes, squared
  // first eigenvector components times sqrt(pi) the weights.
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(order),
                                                 static_cast<Eigen::Index>(order));
  for (std::size_t i = 1; i < order; ++i) {
    const double b = std::sqrt(static_cast<double>(i) / 2.0);
    jacobi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) = b;
    jacobi(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(i)) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  GaussHermite gh;
  for (std::size_t i = 0; i < order; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    gh.nodes.push_back(solver.eigenvalues()(k));
    const double v0 = solver.eigenvectors()(0, k);
    gh.weights.push_back(std::sqrt(std::numbers::pi) * v0 * v0);
  }
  return gh;
}

namespace {

// E_q[frame MSE] for q = N(mu, s^2) over the scalar latent.
double expected_loss(const ScalarModel& m, double mu, double s, const GaussHermite& gh) {
  double e = 0.0;
  for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
    e += gh.weights[i] * m.loss(mu + std::numbers::sqrt2 * s * gh.nodes[i]);
  }
  return e / std::sqrt(std::numbers::pi);
}

// Golden-section minimisation on [lo, hi].
template <typename F>
double golden_min(F&& f, double lo, double hi, double tol) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / 2.0;
}

}  // namespace

PropositionReport verify_prop4(const VerifierOptions& opt) {
  PropositionReport r = new_report("prop4_shrinking_posterior_map", opt);
  std::mt19937_64 rng(opt.seed);
  const std::vector<double> schedule{1e-1, 1e-2, 1e-3};
  const GaussHermite gh = gauss_hermite(20);
  std::size_t monotone_failures = 0;
  double shift_error = 0.0, entropy_spread = 0.0;

  for (std::size_t n = 0; n < opt.instances; ++n) {
    ScalarModel m = random_scalar_model(rng, n % 2 == 1);
    m.c = uniform(rng, m.l.rows(), 2, -0.5, 0.5);
    m.x = uniform(rng, m.l.rows(), 2, -0.8, 0.8);
    double vv = 0.0;
    for (double c : m.v.values()) vv += c * c;
    const double lr = 0.25 / (static_cast<double>(m.l.rows()) * vv);
    const auto enc =
        encode_to_convergence(m.decoder(), m.view(), Tensor(1, 1), lr, std::nullopt, 1e-16, 2000);
    const double z_hat = enc.z[0];

    std::vector<double> distances;
    for (double s : schedule) {
      double mu_star = 0.0;
      if (!m.saturating) {
        // E_q|r_t - z v|^2 = |r_t - mu v|^2 + s^2 |v|^2 with r_t the residual
        // without the latent, so mu* is the least-squares fit for every s.
        double num = 0.0;
        for (std::size_t t = 0; t < m.l.rows(); ++t) {
          for (std::size_t d = 0; d < 2; ++d) {
            double resid = m.x.at(t, d) - m.c.at(t, d);
            for (std::size_t k = 0; k < 3; ++k) resid -= m.l.at(t, k) * m.w.at(k, d);
            num += resid * m.v[d];
          }
        }
        mu_star = num / (static_cast<double>(m.l.rows()) * vv);
      } else {
        mu_star = golden_min([&](double mu) { return expected_loss(m, mu, s, gh); }, z_hat - 0.5,
                             z_hat + 0.5, 1e-10);
      }
      distances.push_back(std::abs(mu_star - z_hat));
    }
    for (std::size_t i = 1; i < distances.size(); ++i) {
      if (distances[i] > distances[i - 1] + 1e-9) ++monotone_failures;
    }
    track_max(r.max_error, distances.back());

    if (m.saturating) {
      // A constant added to the log-prior moves the objective, not its argmin.
      auto objective = [&](double mu) { return expected_loss(m, mu, schedule[0], gh); };
      const double plain = golden_min(objective, z_hat - 0.5, z_hat + 0.5, 1e-10);
      const double shifted =
          golden_min([&](double mu) { return objective(mu) + 3.25; }, z_hat - 0.5, z_hat + 0.5,
                     1e-10);
      track_max(shift_error, std::abs(shifted - plain));
    }
  }

  // Entropy of a location family, by quadrature of -ln q at two locations.
  for (double s : schedule) {
    auto entropy = [&](double mu) {
      double h = 0.0;
      for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
        const double z = mu + std::numbers::sqrt2 * s * gh.nodes[i];
        const double log_q =
            -0.5 * std::log(2 * std::numbers::pi * s * s) - (z - mu) * (z - mu) / (2 * s * s);
        h -= gh.weights[i] * log_q;
      }
      return h / std::sqrt(std::numbers::pi);
    };
    track_max(entropy_spread, std::abs(entropy(0.0) - entropy(1.7)));
  }

  r.details["monotonicity_violations"] = static_cast<double>(monotone_failures);
  r.details["prior_shift_argmin_error"] = shift_error;
  r.details["entropy_location_spread"] = entropy_spread;
  // Golden-section search resolves an argmin only to about sqrt(machine eps)
  // of the bracket, since objective values near the minimum tie.
  r.pass = monotone_failures == 0 && r.max_error <= 1e-3 && shift_error <= 1e-6 &&
           entropy_spread <= 1e-12;
  return r;
}

PropositionReport verify_elbo_decomposition(const VerifierOptions& opt) {
  PropositionReport r = new_report("elbo_decomposition", opt);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  double bound_violation = 0.0, tight = 0.0;
  for (std::size_t n = 0; n < opt.instances; ++n) {
    const std::size_t states = std::uniform_int_distribution<std::size_t>(2, 16)(rng);
    const std::size_t dim = 3;
    // Prior, Gaussian likelihood per state, and an arbitrary q.
    std::vector<double> log_prior(states), log_lik(states), log_q(states);
    auto normalise = [](std::vector<double>& logits) {
      const double m = *std::max_element(logits.begin(), logits.end());
      double s = 0.0;
      for (double v : logits) s += std::exp(v - m);
      const double lse = m + std::log(s);
      for (double& v : logits) v -= lse;
      return lse;
    };
    for (auto& v : log_prior) v = unit(rng);
    normalise(log_prior);
    std::vector<double> x(dim);
    for (auto& v : x) v = unit(rng);
    for (std::size_t k = 0; k < states; ++k) {
      double se = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double m = 1.5 * unit(rng);
        se += (x[d] - m) * (x[d] - m);
      }
      log_lik[k] = -0.5 * se - 0.5 * static_cast<double>(dim) * std::log(2 * std::numbers::pi);
    }
    std::vector<double> joint(states);
    for (std::size_t k = 0; k < states; ++k) joint[k] = log_prior[k] + log_lik[k];
    std::vector<double> log_post = joint;
    const double evidence = normalise(log_post);

    auto elbo_kl = [&](const std::vector<double>& lq) {
      double elbo = 0.0, kl = 0.0;
      for (std::size_t k = 0; k < states; ++k) {
        const double q = std::exp(lq[k]);
        elbo += q * (joint[k] - lq[k]);
        kl += q * (lq[k] - log_post[k]);
      }
      return std::pair{elbo, kl};
    };
    for (auto& v : log_q) v = 2.0 * unit(rng);
    normalise(log_q);
    const auto [elbo, kl] = elbo_kl(log_q);
    track_max(r.max_error, std::abs(evidence - (kl + elbo)));
    track_max(bound_violation, elbo - evidence);
    const auto [elbo_post, kl_post] = elbo_kl(log_post);
    track_max(tight, std::max(std::abs(kl_post), std::abs(elbo_post - evidence)));
  }
  r.details["bound_violation_max"] = bound_violation;
  r.details["exact_posterior_gap_max"] = tight;
  r.pass = r.max_error <= 1e-12 && bound_violation <= 1e-12 && tight <= 1e-12;
  return r;
}

std::vector<PropositionReport> verify_all(const VerifierOptions& opt) {
  return {verify_prop1(opt), verify_prop2(opt), verify_prop3(opt), verify_prop4(opt),
          verify_elbo_decomposition(opt)};
}

}  // namespace ctrlsynth
