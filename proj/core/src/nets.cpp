#include "ctrlsynth/nets.hpp"

#include <cmath>

#include "ctrlsynth/error.hpp"

namespace ctrlsynth {

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(fan_in, fan_out);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

Tensor one_hot(std::span<const int> tokens, std::size_t vocab) {
  if (tokens.empty()) throw ShapeError("one_hot: empty token sequence");
  Tensor t(tokens.size(), vocab);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab) {
      throw ShapeError("one_hot: token " + std::to_string(tokens[i]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    t.at(i, static_cast<std::size_t>(tokens[i])) = 1.0;
  }
  return t;
}

DenseLayer::DenseLayer(const std::string& name, std::size_t in, std::size_t out,
                       std::mt19937_64& rng)
    : weight{name + ".weight", glorot_uniform(in, out, rng)},
      bias{name + ".bias", Tensor(1, out)} {}

ad::NodeId DenseLayer::apply(ad::Graph& g, ad::NodeId x) {
  return g.add(g.matmul(x, g.parameter(weight)), g.parameter(bias));
}

BiRecurrentLayer::BiRecurrentLayer(const std::string& name, std::size_t in, std::size_t units,
                                   std::mt19937_64& rng)
    : fwd_input(name + ".fwd.input", in, units, rng),
      fwd_recurrent{name + ".fwd.recurrent", glorot_uniform(units, units, rng)},
      bwd_input(name + ".bwd.input", in, units, rng),
      bwd_recurrent{name + ".bwd.recurrent", glorot_uniform(units, units, rng)} {}

namespace {

std::vector<ad::NodeId> run_direction(ad::Graph& g, ad::NodeId projected, std::size_t steps,
                                      ad::Parameter& recurrent, bool reverse) {
  const ad::NodeId u = g.parameter(recurrent);
  std::vector<ad::NodeId> states(steps);
  std::optional<ad::NodeId> prev;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    ad::NodeId pre = g.row(projected, t);
    if (prev) pre = g.add(pre, g.matmul(*prev, u));
    prev = g.tanh(pre);
    states[t] = *prev;
  }
  return states;
}

}  // namespace

ad::NodeId BiRecurrentLayer::apply(ad::Graph& g, ad::NodeId x) {
  const std::size_t steps = g.node(x).rows;
  const auto fwd = run_direction(g, fwd_input.apply(g, x), steps, fwd_recurrent, false);
  const auto bwd = run_direction(g, bwd_input.apply(g, x), steps, bwd_recurrent, true);
  return g.concat_cols(g.stack_rows(fwd), g.stack_rows(bwd));
}

DecoderNet::DecoderNet(const ArchConfig& arch, std::mt19937_64& rng, const std::string& prefix)
    : arch_(arch),
      ff1_(prefix + ".ff1", arch.linguistic_dim + arch.latent_dim, arch.ff_units, rng),
      ff2_(prefix + ".ff2", arch.ff_units, arch.ff_units, rng),
      rnn_(prefix + ".rnn", arch.ff_units, arch.rnn_units, rng),
      out_(prefix + ".out", 2 * arch.rnn_units, arch.output_dim, rng) {}

ad::NodeId DecoderNet::build(ad::Graph& g, ad::NodeId linguistic,
                             std::optional<ad::NodeId> latent) {
  const auto& ln = g.node(linguistic);
  if (ln.cols != arch_.linguistic_dim) {
    throw ShapeError("decoder: linguistic input has " + std::to_string(ln.cols) +
                     " features, expected " + std::to_string(arch_.linguistic_dim));
  }
  ad::NodeId input = linguistic;
  if (arch_.latent_dim > 0) {
    if (!latent) throw ShapeError("decoder: latent input required");
    const auto& zn = g.node(*latent);
    if (zn.rows != 1 || zn.cols != arch_.latent_dim) {
      throw ShapeError("decoder: latent is " + std::to_string(zn.rows) + "x" +
                       std::to_string(zn.cols) + ", expected 1x" +
                       std::to_string(arch_.latent_dim));
    }
    input = g.concat_cols(linguistic, g.tile_rows(*latent, ln.rows));
  }
  ad::NodeId h = g.sigmoid(ff1_.apply(g, input));
  h = g.sigmoid(ff2_.apply(g, h));
  h = rnn_.apply(g, h);
  return out_.apply(g, h);
}

std::vector<ad::Parameter*> DecoderNet::parameters() {
  return {&ff1_.weight,          &ff1_.bias,
          &ff2_.weight,          &ff2_.bias,
          &rnn_.fwd_input.weight, &rnn_.fwd_input.bias,
          &rnn_.fwd_recurrent,   &rnn_.bwd_input.weight,
          &rnn_.bwd_input.bias,  &rnn_.bwd_recurrent,
          &out_.weight,          &out_.bias};
}

std::vector<const ad::Parameter*> DecoderNet::parameters() const {
  auto ps = const_cast<DecoderNet*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t DecoderNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

EncoderNet::EncoderNet(const ArchConfig& arch, EncoderOrder order, bool variance_head,
                       std::mt19937_64& rng, const std::string& prefix)
    : arch_(arch), order_(order) {
  if (arch.latent_dim == 0) throw ConfigError("encoder: latent_dim must be positive");
  const std::size_t in = arch.output_dim + arch.linguistic_dim;
  if (order == EncoderOrder::kSame) {
    ff1_ = DenseLayer(prefix + ".ff1", in, arch.ff_units, rng);
    ff2_ = DenseLayer(prefix + ".ff2", arch.ff_units, arch.ff_units, rng);
    rnn_ = BiRecurrentLayer(prefix + ".rnn", arch.ff_units, arch.rnn_units, rng);
    proj_ = DenseLayer(prefix + ".proj", 2 * arch.rnn_units, arch.latent_dim, rng);
    if (variance_head) {
      logvar_ = DenseLayer(prefix + ".logvar", 2 * arch.rnn_units, arch.latent_dim, rng);
    }
  } else {
    rnn_ = BiRecurrentLayer(prefix + ".rnn", in, arch.rnn_units, rng);
    ff1_ = DenseLayer(prefix + ".ff1", 2 * arch.rnn_units, arch.ff_units, rng);
    ff2_ = DenseLayer(prefix + ".ff2", arch.ff_units, arch.ff_units, rng);
    proj_ = DenseLayer(prefix + ".proj", arch.ff_units, arch.latent_dim, rng);
    if (variance_head) {
      logvar_ = DenseLayer(prefix + ".logvar", arch.ff_units, arch.latent_dim, rng);
    }
  }
}

EncoderNet::Output EncoderNet::build(ad::Graph& g, ad::NodeId output_seq, ad::NodeId linguistic) {
  const auto& xn = g.node(output_seq);
  const auto& ln = g.node(linguistic);
  if (xn.rows != ln.rows) {
    throw ShapeError("encoder: output sequence has " + std::to_string(xn.rows) +
                     " frames but linguistic sequence has " + std::to_string(ln.rows));
  }
  if (xn.cols != arch_.output_dim || ln.cols != arch_.linguistic_dim) {
    throw ShapeError("encoder: feature dimensions do not match the architecture");
  }
  ad::NodeId h = g.concat_cols(output_seq, linguistic);
  if (order_ == EncoderOrder::kSame) {
    h = g.sigmoid(ff1_.apply(g, h));
    h = g.sigmoid(ff2_.apply(g, h));
    h = rnn_.apply(g, h);
  } else {
    h = rnn_.apply(g, h);
    h = g.sigmoid(ff1_.apply(g, h));
    h = g.sigmoid(ff2_.apply(g, h));
  }
  const ad::NodeId pooled = g.mean_rows(h);
  Output out{proj_.apply(g, pooled), std::nullopt};
  if (logvar_) out.logvar = logvar_->apply(g, pooled);
  return out;
}

std::vector<ad::Parameter*> EncoderNet::parameters() {
  std::vector<ad::Parameter*> ps{&ff1_.weight,           &ff1_.bias,
                                 &ff2_.weight,           &ff2_.bias,
                                 &rnn_.fwd_input.weight, &rnn_.fwd_input.bias,
                                 &rnn_.fwd_recurrent,    &rnn_.bwd_input.weight,
                                 &rnn_.bwd_input.bias,   &rnn_.bwd_recurrent,
                                 &proj_.weight,          &proj_.bias};
  if (logvar_) {
    ps.push_back(&logvar_->weight);
    ps.push_back(&logvar_->bias);
  }
  return ps;
}

std::vector<const ad::Parameter*> EncoderNet::parameters() const {
  auto ps = const_cast<EncoderNet*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::size_t EncoderNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

Tensor decode(DecoderNet& decoder, const Tensor& linguistic, const Tensor* latent) {
  ad::Graph g;
  const ad::NodeId l = g.constant(linguistic);
  std::optional<ad::NodeId> z;
  if (decoder.arch().latent_dim > 0) {
    if (latent == nullptr) throw ShapeError("decode: latent required");
    if (!latent->all_finite()) throw NumericError("decode: non-finite latent");
    z = g.constant(*latent);
  }
  const ad::NodeId out = decoder.build(g, l, z);
  g.forward();
  return g.value(out);
}

Tensor encode(EncoderNet& encoder, const Tensor& output_seq, const Tensor& linguistic) {
  if (output_seq.rows() != linguistic.rows()) {
    throw ShapeError("encode: output sequence has " + std::to_string(output_seq.rows()) +
                     " frames but linguistic sequence has " + std::to_string(linguistic.rows()));
  }
  ad::Graph g;
  const auto out = encoder.build(g, g.constant(output_seq), g.constant(linguistic));
  g.forward();
  return g.value(out.mean);
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "'");
}

void LatentTable::set(Split split, std::size_t id, Tensor z) {
  tables_[static_cast<int>(split)][id] = std::move(z);
}

const Tensor& LatentTable::get(Split split, std::size_t id) const {
  const auto& m = tables_[static_cast<int>(split)];
  auto it = m.find(id);
  if (it == m.end()) {
    throw ConfigError(std::string("latent table has no ") + split_name(split) + " entry for id " +
                      std::to_string(id));
  }
  return it->second;
}

Tensor& LatentTable::get(Split split, std::size_t id) {
  return const_cast<Tensor&>(std::as_const(*this).get(split, id));
}

bool LatentTable::contains(Split split, std::size_t id) const {
  return tables_[static_cast<int>(split)].contains(id);
}

std::size_t LatentTable::size() const {
  return tables_[0].size() + tables_[1].size() + tables_[2].size();
}

}  // namespace ctrlsynth
