#include "ctrlsynth/objectives.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <numbers>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/quantizer.hpp"

namespace ctrlsynth {

namespace {

std::atomic<bool> g_warnings_enabled{true};

void check_lengths(const SequenceView& seq, const char* who) {
  if (seq.linguistic.rows() != seq.output.rows()) {
    throw ShapeError(std::string(who) + ": linguistic sequence has " +
                     std::to_string(seq.linguistic.rows()) + " frames, output has " +
                     std::to_string(seq.output.rows()));
  }
}

struct QuantizedPath {
  ad::NodeId x;
  ad::NodeId z_e;
  ad::NodeId z_q;
  ad::NodeId nll;
  std::size_t index;
};

QuantizedPath build_quantized_path(ad::Graph& g, const DecoderFn& decoder,
                                   const EncoderFn& encoder, ad::Parameter& codebook,
                                   const SequenceView& seq, const HyperParams& hp) {
  check_lengths(seq, "vq objective");
  if (codebook.value.empty()) throw ConfigError("vq objective: empty codebook");
  const ad::NodeId l = g.constant(seq.linguistic);
  const ad::NodeId x = g.constant(seq.output);
  const ad::NodeId z_e = encoder(g, x, l).mean;
  g.forward_pending();
  const Quantized q = quantize(g.value(z_e), codebook.value);
  const ad::NodeId z_q = g.gather_row(g.parameter(codebook), q.index);
  const ad::NodeId prediction = decoder(g, l, g.straight_through(z_e, z_q));
  return {x, z_e, z_q, build_frame_nll(g, prediction, x, hp.output_variance), q.index};
}

ad::NodeId add_terms(ad::Graph& g, const std::vector<std::pair<std::string, ad::NodeId>>& terms) {
  ad::NodeId total = terms.front().second;
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i].second);
  return total;
}

ObjectiveValue evaluate(ad::Graph& g, const ObjectiveNodes& nodes) {
  g.forward_pending();
  return nodes.value(g);
}

}  // namespace

double ObjectiveValue::term(const std::string& name) const {
  for (const auto& t : terms) {
    if (t.name == name) return t.value;
  }
  throw ConfigError("objective has no term '" + name + "'");
}

ObjectiveValue ObjectiveNodes::value(const ad::Graph& g) const {
  ObjectiveValue v;
  v.total = g.value(total).item();
  for (const auto& [name, id] : terms) v.terms.push_back({name, g.value(id).item()});
  return v;
}

DecoderFn decoder_fn(DecoderNet& net) {
  return [&net](ad::Graph& g, ad::NodeId l, std::optional<ad::NodeId> z) {
    return net.build(g, l, z);
  };
}

EncoderFn encoder_fn(EncoderNet& net) {
  return [&net](ad::Graph& g, ad::NodeId x, ad::NodeId l) { return net.build(g, x, l); };
}

double frame_mse(const Tensor& prediction, const Tensor& target) {
  if (!prediction.same_shape(target)) {
    throw ShapeError("frame_mse: " + shape_string(prediction.shape()) + " vs " +
                     shape_string(target.shape()));
  }
  double se = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    se += d * d;
  }
  return se / static_cast<double>(prediction.rows());
}

double gaussian_frame_loglik(const Tensor& prediction, const Tensor& target, double variance) {
  if (variance <= 0) throw ConfigError("gaussian_frame_loglik: variance must be positive");
  const double p = static_cast<double>(target.cols());
  return -frame_mse(prediction, target) / (2.0 * variance) -
         0.5 * p * std::log(2.0 * std::numbers::pi * variance);
}

ad::NodeId build_frame_mse(ad::Graph& g, ad::NodeId prediction, ad::NodeId target) {
  const double frames = static_cast<double>(g.node(target).rows);
  return g.scale(g.squared_distance(prediction, target), 1.0 / frames);
}

ad::NodeId build_frame_nll(ad::Graph& g, ad::NodeId prediction, ad::NodeId target,
                           double variance) {
  if (variance <= 0) throw ConfigError("output variance must be positive");
  const double p = static_cast<double>(g.node(target).cols);
  const ad::NodeId mse = build_frame_mse(g, prediction, target);
  const ad::NodeId normaliser =
      g.constant(Tensor::scalar(0.5 * p * std::log(2.0 * std::numbers::pi * variance)));
  return g.add(g.scale(mse, 1.0 / (2.0 * variance)), normaliser);
}

ObjectiveNodes build_supervised_objective(ad::Graph& g, const DecoderFn& decoder,
                                          const SequenceView& seq, const Tensor* label_vector) {
  check_lengths(seq, "supervised objective");
  const ad::NodeId l = g.constant(seq.linguistic);
  const ad::NodeId x = g.constant(seq.output);
  std::optional<ad::NodeId> z;
  if (label_vector != nullptr) z = g.constant(*label_vector);
  const ad::NodeId mse = build_frame_mse(g, decoder(g, l, z), x);
  ObjectiveNodes nodes;
  nodes.total = mse;
  nodes.terms = {{"mse", mse}};
  nodes.latent = z;
  return nodes;
}

ObjectiveNodes build_heuristic_objective(ad::Graph& g, const DecoderFn& decoder,
                                         const SequenceView& seq, ad::Parameter& latent) {
  check_lengths(seq, "heuristic objective");
  if (!latent.value.all_finite()) throw NumericError("heuristic objective: non-finite latent");
  const ad::NodeId l = g.constant(seq.linguistic);
  const ad::NodeId x = g.constant(seq.output);
  const ad::NodeId z = g.parameter(latent);
  const ad::NodeId mse = build_frame_mse(g, decoder(g, l, z), x);
  ObjectiveNodes nodes;
  nodes.total = mse;
  nodes.terms = {{"mse", mse}};
  nodes.latent = z;
  return nodes;
}

ObjectiveNodes build_vq_vae_objective(ad::Graph& g, const DecoderFn& decoder,
                                      const EncoderFn& encoder, ad::Parameter& codebook,
                                      const SequenceView& seq, const HyperParams& hp) {
  if (hp.beta < 0) throw ConfigError("vq objective: beta must be non-negative");
  const auto path = build_quantized_path(g, decoder, encoder, codebook, seq, hp);
  const ad::NodeId codebook_term = g.squared_distance(g.stop_gradient(path.z_e), path.z_q);
  const ad::NodeId commitment_term =
      g.scale(g.squared_distance(path.z_e, g.stop_gradient(path.z_q)), hp.beta);
  ObjectiveNodes nodes;
  nodes.terms = {{"nll", path.nll}, {"codebook", codebook_term}, {"commitment", commitment_term}};
  nodes.total = add_terms(g, nodes.terms);
  nodes.code_index = path.index;
  nodes.latent = path.z_q;
  nodes.encoder_output = path.z_e;
  return nodes;
}

ObjectiveNodes build_gmmq_objective(ad::Graph& g, const DecoderFn& decoder,
                                    const EncoderFn& encoder, ad::Parameter& codebook,
                                    const SequenceView& seq, const HyperParams& hp) {
  if (hp.quant_variance <= 0) throw ConfigError("gmmq objective: variance must be positive");
  const auto path = build_quantized_path(g, decoder, encoder, codebook, seq, hp);
  const ad::NodeId penalty =
      g.scale(g.squared_distance(path.z_e, path.z_q), 1.0 / (2.0 * hp.quant_variance));
  ObjectiveNodes nodes;
  nodes.terms = {{"nll", path.nll}, {"quantisation", penalty}};
  nodes.total = add_terms(g, nodes.terms);
  nodes.code_index = path.index;
  nodes.latent = path.z_q;
  nodes.encoder_output = path.z_e;
  return nodes;
}

ObjectiveNodes build_vq1_objective(ad::Graph& g, const DecoderFn& decoder,
                                   const EncoderFn& encoder, ad::Parameter& codebook,
                                   const SequenceView& seq, const HyperParams& hp) {
  const auto path = build_quantized_path(g, decoder, encoder, codebook, seq, hp);
  const ad::NodeId penalty = g.squared_distance(path.z_e, path.z_q);
  ObjectiveNodes nodes;
  nodes.terms = {{"nll", path.nll}, {"quantisation", penalty}};
  nodes.total = add_terms(g, nodes.terms);
  nodes.code_index = path.index;
  nodes.latent = path.z_q;
  nodes.encoder_output = path.z_e;
  return nodes;
}

ObjectiveNodes build_cvae_objective(ad::Graph& g, const DecoderFn& decoder,
                                    const EncoderFn& encoder, const SequenceView& seq,
                                    std::span<const Tensor> noise, const HyperParams& hp) {
  check_lengths(seq, "cvae objective");
  if (noise.empty()) throw ConfigError("cvae objective: at least one sample required");
  const ad::NodeId l = g.constant(seq.linguistic);
  const ad::NodeId x = g.constant(seq.output);
  const auto enc = encoder(g, x, l);
  if (!enc.logvar) throw ConfigError("cvae objective: encoder has no variance head");
  const ad::NodeId sigma = g.exp(g.scale(*enc.logvar, 0.5));
  std::optional<ad::NodeId> nll_sum;
  for (const Tensor& eps : noise) {
    const ad::NodeId z = g.add(enc.mean, g.mul(sigma, g.constant(eps)));
    const ad::NodeId nll = build_frame_nll(g, decoder(g, l, z), x, hp.output_variance);
    nll_sum = nll_sum ? g.add(*nll_sum, nll) : nll;
  }
  const double frames = static_cast<double>(seq.output.rows());
  const ad::NodeId expected_nll = g.scale(*nll_sum, 1.0 / static_cast<double>(noise.size()));
  const ad::NodeId kl = g.scale(g.gaussian_kl(enc.mean, *enc.logvar), 1.0 / frames);
  ObjectiveNodes nodes;
  nodes.terms = {{"nll", expected_nll}, {"kl", kl}};
  nodes.total = add_terms(g, nodes.terms);
  nodes.latent = enc.mean;
  nodes.encoder_output = enc.mean;
  return nodes;
}

ObjectiveValue supervised_loss(DecoderNet& decoder, const SequenceView& seq,
                               const Tensor* label_vector) {
  if (decoder.arch().latent_dim > 0 && label_vector == nullptr) {
    throw ConfigError("supervised_loss: label vector required for a decoder with latent input");
  }
  ad::Graph g;
  return evaluate(g, build_supervised_objective(g, decoder_fn(decoder), seq, label_vector));
}

ObjectiveValue heuristic_loss(const DecoderFn& decoder, const SequenceView& seq,
                              const Tensor& latent) {
  ad::Parameter z{"latent", latent};
  ad::Graph g;
  return evaluate(g, build_heuristic_objective(g, decoder, seq, z));
}

ObjectiveValue vq_vae_loss(DecoderNet& decoder, EncoderNet& encoder, ad::Parameter& codebook,
                           const SequenceView& seq, const HyperParams& hp) {
  ad::Graph g;
  return evaluate(g, build_vq_vae_objective(g, decoder_fn(decoder), encoder_fn(encoder), codebook,
                                            seq, hp));
}

ObjectiveValue gmmq_loss(DecoderNet& decoder, EncoderNet& encoder, ad::Parameter& codebook,
                         const SequenceView& seq, const HyperParams& hp) {
  ad::Graph g;
  return evaluate(g, build_gmmq_objective(g, decoder_fn(decoder), encoder_fn(encoder), codebook,
                                          seq, hp));
}

ObjectiveValue vq1_loss(DecoderNet& decoder, EncoderNet& encoder, ad::Parameter& codebook,
                        const SequenceView& seq, const HyperParams& hp) {
  ad::Graph g;
  return evaluate(g, build_vq1_objective(g, decoder_fn(decoder), encoder_fn(encoder), codebook,
                                         seq, hp));
}

ObjectiveValue cvae_elbo(DecoderNet& decoder, EncoderNet& encoder, const SequenceView& seq,
                         std::span<const Tensor> noise, const HyperParams& hp) {
  ad::Graph g;
  return evaluate(g, build_cvae_objective(g, decoder_fn(decoder), encoder_fn(encoder), seq, noise,
                                          hp));
}

EncodeResult heuristic_encode(const DecoderFn& decoder, const SequenceView& seq,
                              const Tensor& z_init, std::size_t steps, double lr,
                              std::optional<double> box) {
  if (lr < 0) throw ConfigError("heuristic_encode: learning rate must be non-negative");
  ad::Parameter z{"latent", z_init};
  ad::Graph g;
  const auto obj = build_heuristic_objective(g, decoder, seq, z);
  const double frames = static_cast<double>(seq.output.rows());
  const ad::Parameter* wrt[] = {&z};
  EncodeResult result;
  g.forward();
  result.initial_loss = g.value(obj.total).item();
  for (std::size_t s = 0; s < steps; ++s) {
    if (s > 0) g.forward();
    const Tensor grad = g.backward(obj.total, wrt).at("latent");
    if (!grad.all_finite()) {
      throw NumericError("heuristic_encode: non-finite latent gradient at step " +
                         std::to_string(s));
    }
    for (std::size_t i = 0; i < z.value.size(); ++i) {
      double v = z.value[i] - lr * frames * grad[i];
      if (box) v = std::clamp(v, -*box, *box);
      z.value[i] = v;
    }
  }
  g.forward();
  result.final_loss = g.value(obj.total).item();
  result.z = z.value;
  if (result.final_loss > result.initial_loss) {
    result.worsened = true;
    warn("heuristic_encode: loss rose from " + std::to_string(result.initial_loss) + " to " +
         std::to_string(result.final_loss));
  }
  return result;
}

void set_warnings_enabled(bool enabled) { g_warnings_enabled = enabled; }

void warn(const std::string& message) {
  if (g_warnings_enabled) std::cerr << "warning: " << message << "\n";
}

}  // namespace ctrlsynth
