#include "ctrlsynth/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "ctrlsynth/io.hpp"
#include "json_util.hpp"

namespace ctrlsynth {

using detail::Json;

namespace {

struct SystemInfo {
  SystemId id;
  const char* name;
};

constexpr SystemInfo kSystems[] = {
    {SystemId::kBot, "BOT"}, {SystemId::kSup, "SUP"}, {SystemId::kVqs, "VQS"},
    {SystemId::kVqr, "VQR"}, {SystemId::kHzi, "HZI"}, {SystemId::kHsi, "HSI"},
    {SystemId::kCvae, "CVAE"},
};

bool is_heuristic(SystemId id) { return id == SystemId::kHzi || id == SystemId::kHsi; }

// Runs fn(i) for i in [0, n) on up to `threads` workers with a static partition.
// Callers write results into per-index slots, so reductions stay in index order.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Tensor label_vector(int label, std::size_t styles) {
  Tensor t(1, styles);
  t[static_cast<std::size_t>(label)] = 1.0;
  return t;
}

struct SequenceGrad {
  double loss = 0.0;
  ad::ParamGrads grads;
  Tensor latent_grad;
};

SequenceGrad sequence_gradient(Model& model, const Sequence& seq, const HyperParams& hp,
                               std::span<const Tensor> noise) {
  ad::Graph g;
  const SequenceView view{seq.linguistic, seq.output};
  const auto dec = decoder_fn(model.decoder);
  std::optional<ad::Parameter> latent;
  Tensor label;
  ObjectiveNodes nodes;
  switch (model.spec.id) {
    case SystemId::kBot:
      nodes = build_supervised_objective(g, dec, view, nullptr);
      break;
    case SystemId::kSup:
      label = label_vector(seq.label, model.spec.arch.latent_dim);
      nodes = build_supervised_objective(g, dec, view, &label);
      break;
    case SystemId::kVqs:
    case SystemId::kVqr:
      nodes = build_vq_vae_objective(g, dec, encoder_fn(*model.encoder), model.codebook->vectors,
                                     view, hp);
      break;
    case SystemId::kHzi:
    case SystemId::kHsi:
      latent.emplace(ad::Parameter{"latent", model.latents.get(Split::kTrain, seq.id)});
      nodes = build_heuristic_objective(g, dec, view, *latent);
      break;
    case SystemId::kCvae:
      nodes = build_cvae_objective(g, dec, encoder_fn(*model.encoder), view, noise, hp);
      break;
  }
  g.forward_pending();
  SequenceGrad out;
  out.loss = g.value(nodes.total).item();
  out.grads = g.backward(nodes.total);
  if (latent) {
    // The latent descends the sequence squared error, T times the frame-MSE gradient.
    auto node = out.grads.extract("latent");
    out.latent_grad = std::move(node.mapped());
    for (auto& v : out.latent_grad.storage()) v *= static_cast<double>(seq.output.rows());
  }
  return out;
}

void reencode_heldout(Model& model, const StyleCorpus& corpus, const TrainConfig& config) {
  std::vector<const Sequence*> held;
  for (Split s : {Split::kVal, Split::kTest}) {
    const auto part = corpus.split(s);
    held.insert(held.end(), part.begin(), part.end());
  }
  std::vector<Tensor> updated(held.size());
  parallel_for(held.size(), config.threads, [&](std::size_t i) {
    const Sequence& seq = *held[i];
    updated[i] = heuristic_encode(decoder_fn(model.decoder), {seq.linguistic, seq.output},
                                  model.latents.get(seq.split, seq.id), config.encode_steps,
                                  config.latent_lr)
                     .z;
  });
  for (std::size_t i = 0; i < held.size(); ++i) {
    model.latents.set(held[i]->split, held[i]->id, std::move(updated[i]));
  }
}

Json arch_to_json(const ArchConfig& a) {
  return Json{{"linguistic_dim", a.linguistic_dim}, {"output_dim", a.output_dim},
              {"latent_dim", a.latent_dim},         {"ff_units", a.ff_units},
              {"rnn_units", a.rnn_units}};
}

ArchConfig arch_from_json(const Json& j) {
  ArchConfig a;
  a.linguistic_dim = j.at("linguistic_dim").get<std::size_t>();
  a.output_dim = j.at("output_dim").get<std::size_t>();
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.ff_units = j.at("ff_units").get<std::size_t>();
  a.rnn_units = j.at("rnn_units").get<std::size_t>();
  return a;
}

Json spec_to_json(const SystemSpec& s) {
  Json j{{"system", system_name(s.id)},
         {"arch", arch_to_json(s.arch)},
         {"scheme", scheme_name(s.scheme)},
         {"variance_head", s.variance_head},
         {"init_rule", s.init_rule},
         {"codebook_size", s.codebook_size}};
  if (s.encoder_order) {
    j["encoder_order"] = *s.encoder_order == EncoderOrder::kSame ? "same" : "reversed";
  } else {
    j["encoder_order"] = nullptr;
  }
  return j;
}

SystemSpec spec_from_json(const Json& j) {
  SystemSpec s;
  s.id = parse_system(j.at("system").get<std::string>());
  s.arch = arch_from_json(j.at("arch"));
  const auto scheme = j.at("scheme").get<std::string>();
  bool known = false;
  for (auto candidate : {LatentScheme::kNone, LatentScheme::kLabels, LatentScheme::kCodebook,
                         LatentScheme::kLatentTable, LatentScheme::kGaussianPosterior}) {
    if (scheme == scheme_name(candidate)) {
      s.scheme = candidate;
      known = true;
    }
  }
  if (!known) throw CorruptFileError("checkpoint: unknown latent scheme '" + scheme + "'");
  s.variance_head = j.at("variance_head").get<bool>();
  s.init_rule = j.at("init_rule").get<std::string>();
  s.codebook_size = j.at("codebook_size").get<std::size_t>();
  const auto& order = j.at("encoder_order");
  if (!order.is_null()) {
    s.encoder_order =
        order.get<std::string>() == "same" ? EncoderOrder::kSame : EncoderOrder::kReversed;
  }
  return s;
}

Json config_to_json(const TrainConfig& c) {
  return Json{{"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"batch_size", c.batch_size},
              {"adam",
               {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2},
                {"eps", c.adam.eps}}},
              {"latent_lr", c.latent_lr},
              {"encode_steps", c.encode_steps},
              {"codebook_size", c.codebook_size},
              {"latent_dim", c.latent_dim},
              {"beta", c.beta},
              {"cvae_samples", c.cvae_samples},
              {"ff_units", c.ff_units},
              {"rnn_units", c.rnn_units},
              {"seed", c.seed}};
}

}  // namespace

const char* system_name(SystemId id) {
  for (const auto& s : kSystems) {
    if (s.id == id) return s.name;
  }
  return "?";
}

SystemId parse_system(const std::string& name) {
  for (const auto& s : kSystems) {
    if (name == s.name) return s.id;
  }
  throw ConfigError("unknown system '" + name + "' (expected BOT, SUP, VQS, VQR, HZI, HSI or CVAE)");
}

const std::vector<SystemId>& headline_systems() {
  static const std::vector<SystemId> kHeadline{SystemId::kBot, SystemId::kSup, SystemId::kVqs,
                                               SystemId::kVqr, SystemId::kHzi, SystemId::kHsi};
  return kHeadline;
}

const char* scheme_name(LatentScheme s) {
  switch (s) {
    case LatentScheme::kNone: return "none";
    case LatentScheme::kLabels: return "labels";
    case LatentScheme::kCodebook: return "codebook";
    case LatentScheme::kLatentTable: return "latent-table";
    case LatentScheme::kGaussianPosterior: return "gaussian-posterior";
  }
  return "?";
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("train config: " + field + " " + why);
  };
  auto rate = [&](const char* field, double v) {
    if (!(v >= 0) || !std::isfinite(v)) fail(field, "must be finite and >= 0");
  };
  if (max_epochs < 1) fail("max_epochs", "must be at least 1");
  if (patience < 1) fail("patience", "must be at least 1");
  if (batch_size < 1) fail("batch_size", "must be at least 1");
  rate("adam.lr", adam.lr);
  rate("latent_lr", latent_lr);
  rate("beta", beta);
  if (!(adam.beta1 >= 0 && adam.beta1 < 1)) fail("adam.beta1", "must be in [0, 1)");
  if (!(adam.beta2 >= 0 && adam.beta2 < 1)) fail("adam.beta2", "must be in [0, 1)");
  if (!(adam.eps > 0)) fail("adam.eps", "must be positive");
  if (codebook_size < 1) fail("codebook_size", "must be at least 1");
  if (latent_dim < 1) fail("latent_dim", "must be at least 1");
  if (cvae_samples < 1) fail("cvae_samples", "must be at least 1");
  if (ff_units < 1) fail("ff_units", "must be at least 1");
  if (rnn_units < 1) fail("rnn_units", "must be at least 1");
  if (threads < 1) fail("threads", "must be at least 1");
}

std::string TrainConfig::to_json() const { return config_to_json(*this).dump(); }

TrainConfig TrainConfig::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  auto read = [&](const Json& obj, const char* key, auto& field, const std::string& prefix) {
    if (!obj.contains(key)) return;
    try {
      obj.at(key).get_to(field);
    } catch (const Json::exception&) {
      throw ConfigError("train config: field " + prefix + key + " has the wrong type");
    }
  };
  static const std::vector<std::string> kKnown{
      "max_epochs",    "patience",   "batch_size", "adam",         "latent_lr",
      "encode_steps",  "codebook_size", "latent_dim", "beta",      "cvae_samples",
      "ff_units",      "rnn_units",  "seed"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
      throw ConfigError("train config: unknown field " + key);
    }
  }
  read(j, "max_epochs", c.max_epochs, "");
  read(j, "patience", c.patience, "");
  read(j, "batch_size", c.batch_size, "");
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    read(a, "lr", c.adam.lr, "adam.");
    read(a, "beta1", c.adam.beta1, "adam.");
    read(a, "beta2", c.adam.beta2, "adam.");
    read(a, "eps", c.adam.eps, "adam.");
  }
  read(j, "latent_lr", c.latent_lr, "");
  read(j, "encode_steps", c.encode_steps, "");
  read(j, "codebook_size", c.codebook_size, "");
  read(j, "latent_dim", c.latent_dim, "");
  read(j, "beta", c.beta, "");
  read(j, "cvae_samples", c.cvae_samples, "");
  read(j, "ff_units", c.ff_units, "");
  read(j, "rnn_units", c.rnn_units, "");
  read(j, "seed", c.seed, "");
  c.validate();
  return c;
}

SystemSpec make_system_spec(SystemId id, const CorpusConfig& corpus, const TrainConfig& config) {
  SystemSpec s;
  s.id = id;
  s.arch.linguistic_dim = corpus.vocab;
  s.arch.output_dim = corpus.output_dim;
  s.arch.latent_dim = config.latent_dim;
  s.arch.ff_units = config.ff_units;
  s.arch.rnn_units = config.rnn_units;
  switch (id) {
    case SystemId::kBot:
      s.arch.latent_dim = 0;
      break;
    case SystemId::kSup:
      s.arch.latent_dim = corpus.styles;
      s.scheme = LatentScheme::kLabels;
      s.init_rule = "labels";
      break;
    case SystemId::kVqs:
    case SystemId::kVqr:
      s.scheme = LatentScheme::kCodebook;
      s.encoder_order = id == SystemId::kVqs ? EncoderOrder::kSame : EncoderOrder::kReversed;
      s.init_rule = "encoder";
      s.codebook_size = config.codebook_size;
      break;
    case SystemId::kHzi:
      s.scheme = LatentScheme::kLatentTable;
      s.init_rule = "zeros";
      break;
    case SystemId::kHsi:
      s.scheme = LatentScheme::kLatentTable;
      s.init_rule = "signed-one-hot";
      if (corpus.styles > 2 * config.latent_dim) {
        throw ConfigError("HSI needs latent_dim >= styles / 2 for an injective initialisation");
      }
      break;
    case SystemId::kCvae:
      s.scheme = LatentScheme::kGaussianPosterior;
      s.encoder_order = EncoderOrder::kSame;
      s.variance_head = true;
      s.init_rule = "encoder";
      break;
  }
  return s;
}

Tensor signed_one_hot(int label, std::size_t dim) {
  if (label < 0 || static_cast<std::size_t>(label) >= 2 * dim) {
    throw ConfigError("signed_one_hot: label " + std::to_string(label) + " needs more than " +
                      std::to_string(dim) + " dimensions");
  }
  Tensor t(1, dim);
  const auto k = static_cast<std::size_t>(label);
  if (k < dim) {
    t[k] = 0.1;
  } else {
    t[k - dim] = -0.1;
  }
  return t;
}

std::vector<ad::Parameter*> Model::weight_parameters() {
  auto ps = decoder.parameters();
  if (encoder) {
    const auto enc = encoder->parameters();
    ps.insert(ps.end(), enc.begin(), enc.end());
  }
  if (codebook) ps.push_back(&codebook->vectors);
  return ps;
}

std::vector<const ad::Parameter*> Model::weight_parameters() const {
  const auto ps = const_cast<Model*>(this)->weight_parameters();
  return {ps.begin(), ps.end()};
}

Model make_model(const SystemSpec& spec, const StyleCorpus& corpus, std::mt19937_64& rng) {
  if (spec.arch.linguistic_dim != corpus.config.vocab ||
      spec.arch.output_dim != corpus.config.output_dim) {
    throw ConfigError(std::string("system ") + system_name(spec.id) +
                      " does not match the corpus dimensions");
  }
  if (spec.scheme == LatentScheme::kCodebook && spec.codebook_size == 0) {
    throw ConfigError("codebook system needs a positive codebook size");
  }
  Model m;
  m.spec = spec;
  m.decoder = DecoderNet(spec.arch, rng);
  if (spec.encoder_order) {
    m.encoder = EncoderNet(spec.arch, *spec.encoder_order, spec.variance_head, rng);
  }
  if (spec.scheme == LatentScheme::kCodebook) {
    m.codebook = Codebook(spec.codebook_size, spec.arch.latent_dim, rng);
  }
  if (spec.scheme == LatentScheme::kLatentTable) {
    for (const auto& seq : corpus.sequences) {
      Tensor z = spec.id == SystemId::kHsi ? signed_one_hot(seq.label, spec.arch.latent_dim)
                                           : Tensor(1, spec.arch.latent_dim);
      m.latents.set(seq.split, seq.id, std::move(z));
    }
  }
  return m;
}

void adam_step(std::span<ad::Parameter* const> params, const ad::ParamGrads& grads,
               AdamState& state, const AdamHyper& hyper) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (ad::Parameter* p : params) {
    const auto it = grads.find(p->name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (!g.same_shape(p->value)) {
      throw ShapeError("adam_step: gradient of " + p->name + " has the wrong shape");
    }
    auto& m = state.m[p->name];
    auto& v = state.v[p->name];
    if (m.empty()) {
      m = Tensor(g.rows(), g.cols());
      v = Tensor(g.rows(), g.cols());
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p->value[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

void sgd_step(Tensor& w, const Tensor& g, double lr) {
  if (!w.same_shape(g)) throw ShapeError("sgd_step: gradient has the wrong shape");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
}

const EpochRecord& Checkpoint::best() const {
  for (const auto& r : history) {
    if (r.epoch == epoch) return r;
  }
  throw CorruptFileError("checkpoint history has no record for epoch " + std::to_string(epoch));
}

std::optional<Tensor> decoder_latent(Model& model, const Sequence& seq) {
  switch (model.spec.scheme) {
    case LatentScheme::kNone:
      return std::nullopt;
    case LatentScheme::kLabels:
      return label_vector(seq.label, model.spec.arch.latent_dim);
    case LatentScheme::kCodebook:
      return quantize(encode(*model.encoder, seq.output, seq.linguistic),
                      model.codebook->vectors.value)
          .z_q;
    case LatentScheme::kLatentTable:
      return model.latents.get(seq.split, seq.id);
    case LatentScheme::kGaussianPosterior:
      return encode(*model.encoder, seq.output, seq.linguistic);
  }
  return std::nullopt;
}

double split_mse(Model& model, const StyleCorpus& corpus, Split split) {
  const auto seqs = corpus.split(split);
  if (seqs.empty()) return 0.0;
  double se = 0.0;
  std::size_t frames = 0;
  for (const Sequence* seq : seqs) {
    const auto z = decoder_latent(model, *seq);
    const Tensor pred = decode(model.decoder, seq->linguistic, z ? &*z : nullptr);
    se += frame_mse(pred, seq->output) * static_cast<double>(seq->output.rows());
    frames += seq->output.rows();
  }
  return se / static_cast<double>(frames);
}

std::string corpus_fingerprint(const StyleCorpus& corpus) {
  StyleCorpus bare;
  bare.config = corpus.config;
  bare.sequences = corpus.sequences;
  return sha256_hex(corpus_to_json(bare));
}

Checkpoint train_system(const SystemSpec& spec, const StyleCorpus& corpus,
                        const TrainConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const SystemSpec& s = spec;
  Model model = make_model(s, corpus, rng);
  HyperParams hp;
  hp.beta = config.beta;

  std::vector<const Sequence*> train = corpus.split(Split::kTrain);
  if (train.empty()) throw ConfigError("corpus has no training sequences");
  if (corpus.split(Split::kVal).empty()) throw ConfigError("corpus has no validation sequences");

  auto params = model.weight_parameters();
  AdamState adam;
  std::normal_distribution<double> unit(0.0, 1.0);

  Checkpoint best;
  best.config = config;
  best.corpus_fingerprint = corpus_fingerprint(corpus);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<EpochRecord> history;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, train.size() - start);
      std::vector<std::vector<Tensor>> noise(n);
      if (s.id == SystemId::kCvae) {
        for (auto& samples : noise) {
          for (std::size_t k = 0; k < config.cvae_samples; ++k) {
            Tensor e(1, s.arch.latent_dim);
            for (auto& v : e.storage()) v = unit(rng);
            samples.push_back(std::move(e));
          }
        }
      }
      std::vector<SequenceGrad> results(n);
      parallel_for(n, config.threads, [&](std::size_t i) {
        results[i] = sequence_gradient(model, *train[start + i], hp, noise[i]);
      });
      ad::ParamGrads batch;
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        loss += results[i].loss;
        for (auto& [name, g] : results[i].grads) {
          auto [it, inserted] = batch.try_emplace(name, g);
          if (!inserted) {
            for (std::size_t k = 0; k < g.size(); ++k) it->second[k] += g[k];
          }
        }
      }
      if (!std::isfinite(loss)) throw DivergenceError(epoch, "non-finite training loss");
      const double inv = 1.0 / static_cast<double>(n);
      for (auto& [name, g] : batch) {
        for (auto& v : g.storage()) v *= inv;
      }
      adam_step(params, batch, adam, config.adam);
      if (is_heuristic(s.id)) {
        for (std::size_t i = 0; i < n; ++i) {
          sgd_step(model.latents.get(Split::kTrain, train[start + i]->id), results[i].latent_grad,
                   config.latent_lr);
        }
      }
    }
    if (is_heuristic(s.id)) reencode_heldout(model, corpus, config);

    EpochRecord rec{epoch, split_mse(model, corpus, Split::kTrain),
                    split_mse(model, corpus, Split::kVal), split_mse(model, corpus, Split::kTest)};
    if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.val_mse) ||
        !std::isfinite(rec.test_mse)) {
      throw DivergenceError(epoch, "non-finite evaluation MSE");
    }
    history.push_back(rec);
    if (rec.val_mse < best_val) {
      best_val = rec.val_mse;
      since_best = 0;
      best.model = model;
      best.epoch = epoch;
      std::ostringstream state;
      state << rng;
      best.rng_state = state.str();
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  best.history = std::move(history);
  return best;
}

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  Json params = Json::object();
  const auto& m = ckpt.model;
  for (const auto* p : m.decoder.parameters()) params[p->name] = detail::tensor_to_json(p->value);
  if (m.encoder) {
    for (const auto* p : m.encoder->parameters()) {
      params[p->name] = detail::tensor_to_json(p->value);
    }
  }
  Json tables = Json::object();
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    Json entries = Json::array();
    for (const auto& [id, z] : m.latents.entries(s)) entries.push_back({id, z.storage()});
    tables[split_name(s)] = std::move(entries);
  }
  Json history = Json::array();
  for (const auto& r : ckpt.history) {
    history.push_back({{"epoch", r.epoch},
                       {"train_mse", r.train_mse},
                       {"val_mse", r.val_mse},
                       {"test_mse", r.test_mse}});
  }
  Json j{{"version", Checkpoint::kVersion},
         {"spec", spec_to_json(m.spec)},
         {"config", config_to_json(ckpt.config)},
         {"epoch", ckpt.epoch},
         {"params", std::move(params)},
         {"codebook", m.codebook ? detail::tensor_to_json(m.codebook->vectors.value) : Json()},
         {"latent_tables", std::move(tables)},
         {"history", std::move(history)},
         {"rng_state", ckpt.rng_state},
         {"corpus", ckpt.corpus_fingerprint}};
  return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
  const Json j = detail::parse_json(text, "checkpoint");
  Checkpoint c;
  try {
    const int version = j.at("version").get<int>();
    if (version != Checkpoint::kVersion) {
      throw CorruptFileError("checkpoint schema version " + std::to_string(version) +
                             " is not supported (expected " +
                             std::to_string(Checkpoint::kVersion) + ")");
    }
    try {
      c.config = TrainConfig::from_json(j.at("config").dump());
    } catch (const ConfigError& e) {
      throw CorruptFileError(std::string("checkpoint: ") + e.what());
    }
    Model& m = c.model;
    m.spec = spec_from_json(j.at("spec"));
    std::mt19937_64 dummy(0);
    m.decoder = DecoderNet(m.spec.arch, dummy);
    if (m.spec.encoder_order) {
      m.encoder = EncoderNet(m.spec.arch, *m.spec.encoder_order, m.spec.variance_head, dummy);
    }
    const auto& params = j.at("params");
    std::vector<ad::Parameter*> net_params = m.decoder.parameters();
    if (m.encoder) {
      const auto enc = m.encoder->parameters();
      net_params.insert(net_params.end(), enc.begin(), enc.end());
    }
    if (params.size() != net_params.size()) {
      throw CorruptFileError("checkpoint: expected " + std::to_string(net_params.size()) +
                             " parameters, found " + std::to_string(params.size()));
    }
    for (ad::Parameter* p : net_params) {
      if (!params.contains(p->name)) {
        throw CorruptFileError("checkpoint: missing parameter " + p->name);
      }
      Tensor t = detail::tensor_from_json(params.at(p->name), "checkpoint parameter " + p->name);
      if (!t.same_shape(p->value)) {
        throw CorruptFileError("checkpoint: parameter " + p->name + " has the wrong shape");
      }
      p->value = std::move(t);
    }
    if (!j.at("codebook").is_null()) {
      m.codebook = Codebook(detail::tensor_from_json(j.at("codebook"), "checkpoint codebook"));
    } else if (m.spec.scheme == LatentScheme::kCodebook) {
      throw CorruptFileError("checkpoint: codebook system without a codebook");
    }
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
      for (const auto& e : j.at("latent_tables").at(split_name(s))) {
        m.latents.set(s, e.at(0).get<std::size_t>(),
                      Tensor::row(e.at(1).get<std::vector<double>>()));
      }
    }
    c.epoch = j.at("epoch").get<std::size_t>();
    for (const auto& r : j.at("history")) {
      c.history.push_back({r.at("epoch").get<std::size_t>(), r.at("train_mse").get<double>(),
                           r.at("val_mse").get<double>(), r.at("test_mse").get<double>()});
    }
    c.rng_state = j.at("rng_state").get<std::string>();
    c.corpus_fingerprint = j.at("corpus").get<std::string>();
  } catch (const Json::exception& e) {
    throw CorruptFileError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_text_file(path));
}

std::string learning_curve_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_mse,val_mse,test_mse\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_mse << ',' << r.val_mse << ',' << r.test_mse << '\n';
  }
  return out.str();
}

}  // namespace ctrlsynth
