#include "ctrlsynth/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/io.hpp"
#include "json_util.hpp"

namespace ctrlsynth {

using detail::Json;

namespace {

// Independent streams so the truth does not depend on how many sequences are drawn.
enum Stream : std::uint64_t { kTruthStream = 1, kDataStream = 2, kSplitStream = 3 };

std::mt19937_64 stream_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Tensor t(rows, cols);
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

Json matrix_rows(const Tensor& t) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row_span(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Tensor matrix_from_rows(const Json& j, std::size_t cols, const std::string& what) {
  if (!j.is_array()) throw CorruptFileError(what + ": expected an array of rows");
  Tensor t(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (row.size() != cols) {
      throw CorruptFileError(what + ": row " + std::to_string(r) + " has " +
                             std::to_string(row.size()) + " values, expected " +
                             std::to_string(cols));
    }
    std::copy(row.begin(), row.end(), t.storage().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return t;
}

// Largest-remainder apportionment of n items over the split fractions.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = fractions[s] * static_cast<double>(n);
    counts[s] = static_cast<std::size_t>(std::floor(exact));
    remainder[s] = exact - static_cast<double>(counts[s]);
    assigned += counts[s];
  }
  while (assigned < n) {
    const auto it = std::max_element(remainder.begin(), remainder.end());
    ++counts[static_cast<std::size_t>(it - remainder.begin())];
    *it = -1.0;
    ++assigned;
  }
  return counts;
}

}  // namespace

void CorpusConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("corpus config: " + field + " " + why);
  };
  if (styles < 1) fail("styles", "must be at least 1");
  if (per_style < 1) fail("per_style", "must be at least 1");
  if (vocab < 1) fail("vocab", "must be at least 1");
  if (min_len < 1) fail("min_len", "must be at least 1");
  if (max_len < min_len) fail("max_len", "must not be below min_len");
  if (embed_dim < 1) fail("embed_dim", "must be at least 1");
  if (output_dim < 1) fail("output_dim", "must be at least 1");
  if (style_dim < 1) fail("style_dim", "must be at least 1");
  if (style_dim + 1 < styles) {
    fail("style_dim", "must be at least styles - 1 (" + std::to_string(styles - 1) +
                          ") to place the styles on a simplex");
  }
  if (!(style_norm >= 0) || !std::isfinite(style_norm)) fail("style_norm", "must be >= 0");
  if (!(noise_std >= 0) || !std::isfinite(noise_std)) fail("noise_std", "must be >= 0");
  if (!(jitter >= 0) || !std::isfinite(jitter)) fail("jitter", "must be >= 0");
  double total = 0.0;
  for (double f : split_fractions) {
    if (!(f >= 0)) fail("split_fractions", "must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    fail("split_fractions", "must sum to 1 (got " + std::to_string(total) + ")");
  }
}

std::string CorpusConfig::to_json() const {
  const Json j{{"styles", styles},           {"per_style", per_style},
               {"vocab", vocab},             {"min_len", min_len},
               {"max_len", max_len},         {"embed_dim", embed_dim},
               {"output_dim", output_dim},   {"style_dim", style_dim},
               {"style_norm", style_norm},   {"noise_std", noise_std},
               {"jitter", jitter},           {"split_fractions", split_fractions},
               {"seed", seed}};
  return j.dump();
}

CorpusConfig CorpusConfig::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("corpus config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("corpus config must be a JSON object");
  CorpusConfig c;
  auto read = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const Json::exception&) {
      throw ConfigError(std::string("corpus config: field ") + key + " has the wrong type");
    }
  };
  for (const auto& [key, _] : j.items()) {
    static const std::vector<std::string> kKnown{
        "styles",    "per_style",  "vocab",     "min_len",    "max_len",
        "embed_dim", "output_dim", "style_dim", "style_norm", "noise_std",
        "jitter",    "split_fractions", "seed"};
    if (std::find(kKnown.begin(), kKnown.end(), key) == kKnown.end()) {
      throw ConfigError("corpus config: unknown field " + key);
    }
  }
  read("styles", c.styles);
  read("per_style", c.per_style);
  read("vocab", c.vocab);
  read("min_len", c.min_len);
  read("max_len", c.max_len);
  read("embed_dim", c.embed_dim);
  read("output_dim", c.output_dim);
  read("style_dim", c.style_dim);
  read("style_norm", c.style_norm);
  read("noise_std", c.noise_std);
  read("jitter", c.jitter);
  read("split_fractions", c.split_fractions);
  read("seed", c.seed);
  c.validate();
  return c;
}

Tensor GeneratorTruth::style(std::size_t k) const {
  const auto row = styles.row_span(k);
  return Tensor::row({row.begin(), row.end()});
}

Tensor GeneratorTruth::clean_output(std::span<const int> tokens, const Tensor& s) const {
  const std::size_t p = a.cols();
  std::vector<double> style_shift(p, 0.0);
  for (std::size_t j = 0; j < b.rows(); ++j) {
    for (std::size_t c = 0; c < p; ++c) style_shift[c] += s[j] * b.at(j, c);
  }
  Tensor x(tokens.size(), p);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto e = emb.row_span(static_cast<std::size_t>(tokens[t]));
    for (std::size_t c = 0; c < p; ++c) {
      double v = style_shift[c];
      for (std::size_t i = 0; i < e.size(); ++i) v += e[i] * a.at(i, c);
      x.at(t, c) = std::tanh(v);
    }
  }
  return x;
}

const Sequence& StyleCorpus::by_id(std::size_t id) const {
  if (id < sequences.size() && sequences[id].id == id) return sequences[id];
  for (const auto& s : sequences) {
    if (s.id == id) return s;
  }
  throw ConfigError("corpus has no sequence with id " + std::to_string(id));
}

std::vector<const Sequence*> StyleCorpus::split(Split s) const {
  std::vector<const Sequence*> out;
  for (const auto& seq : sequences) {
    if (seq.split == s) out.push_back(&seq);
  }
  return out;
}

const GeneratorTruth& StyleCorpus::require_truth() const {
  if (!truth) throw ConfigError("corpus was loaded without its truth block");
  return *truth;
}

GeneratorTruth make_truth(const CorpusConfig& config) {
  config.validate();
  auto rng = stream_rng(config.seed, kTruthStream);
  GeneratorTruth t;
  t.emb = gaussian(config.vocab, config.embed_dim, 1.0, rng);
  t.a = gaussian(config.embed_dim, config.output_dim,
                 1.0 / std::sqrt(static_cast<double>(config.embed_dim)), rng);
  t.b = gaussian(config.style_dim, config.output_dim,
                 1.0 / std::sqrt(static_cast<double>(config.style_dim)), rng);
  // Regular simplex: centred one-hot vertices expressed in the Helmert basis
  // of the sum-zero subspace, rescaled to the requested norm.
  const std::size_t k = config.styles;
  t.styles = Tensor(k, config.style_dim);
  if (k > 1) {
    const double scale =
        config.style_norm / std::sqrt(static_cast<double>(k - 1) / static_cast<double>(k));
    for (std::size_t j = 1; j < k; ++j) {
      const double norm = std::sqrt(static_cast<double>(j * (j + 1)));
      for (std::size_t v = 0; v < k; ++v) {
        double h = 0.0;
        if (v < j) h = 1.0 / norm;
        if (v == j) h = -static_cast<double>(j) / norm;
        t.styles.at(v, j - 1) = scale * h;
      }
    }
  }
  return t;
}

StyleCorpus generate_corpus(const CorpusConfig& config) {
  config.validate();
  StyleCorpus corpus;
  corpus.config = config;
  corpus.truth = make_truth(config);
  const GeneratorTruth& truth = *corpus.truth;
  auto rng = stream_rng(config.seed, kDataStream);
  auto split_rng = stream_rng(config.seed, kSplitStream);
  std::uniform_int_distribution<std::size_t> length(config.min_len, config.max_len);
  std::uniform_int_distribution<int> token(0, static_cast<int>(config.vocab) - 1);
  std::normal_distribution<double> unit(0.0, 1.0);

  const auto counts = split_counts(config.per_style, config.split_fractions);
  corpus.sequences.reserve(config.styles * config.per_style);
  for (std::size_t k = 0; k < config.styles; ++k) {
    std::vector<Split> splits;
    for (int s = 0; s < 3; ++s) splits.insert(splits.end(), counts[s], static_cast<Split>(s));
    std::shuffle(splits.begin(), splits.end(), split_rng);
    for (std::size_t i = 0; i < config.per_style; ++i) {
      Sequence seq;
      seq.id = corpus.sequences.size();
      seq.split = splits[i];
      seq.label = static_cast<int>(k);
      seq.tokens.resize(length(rng));
      for (auto& tok : seq.tokens) tok = token(rng);
      Tensor s = truth.style(k);
      if (config.jitter > 0) {
        for (auto& v : s.storage()) v += config.jitter * unit(rng);
      }
      seq.output = truth.clean_output(seq.tokens, s);
      if (config.noise_std > 0) {
        for (auto& v : seq.output.storage()) v += config.noise_std * unit(rng);
      }
      seq.linguistic = one_hot(seq.tokens, config.vocab);
      corpus.sequences.push_back(std::move(seq));
    }
  }
  return corpus;
}

double mse_floor(const CorpusConfig& config) {
  return static_cast<double>(config.output_dim) * config.noise_std * config.noise_std;
}

double between_style_gap(const CorpusConfig& config, std::size_t samples, std::uint64_t mc_seed) {
  const GeneratorTruth truth = make_truth(config);
  std::mt19937_64 rng(mc_seed);
  std::uniform_int_distribution<int> token(0, static_cast<int>(config.vocab) - 1);
  std::uniform_int_distribution<std::size_t> style(0, config.styles - 1);
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t p = config.output_dim;
  // Per token: count, sum and sum of squares of the noise-free output.
  std::vector<std::size_t> n(config.vocab, 0);
  std::vector<std::vector<double>> sum(config.vocab, std::vector<double>(p, 0.0));
  std::vector<double> sumsq(config.vocab, 0.0);
  for (std::size_t i = 0; i < samples; ++i) {
    const int v = token(rng);
    Tensor s = truth.style(style(rng));
    if (config.jitter > 0) {
      for (auto& c : s.storage()) c += config.jitter * unit(rng);
    }
    const Tensor x = truth.clean_output(std::span<const int>(&v, 1), s);
    ++n[v];
    for (std::size_t c = 0; c < p; ++c) {
      sum[v][c] += x[c];
      sumsq[v] += x[c] * x[c];
    }
  }
  // Frequency-weighted unbiased within-token variance, summed over output dims.
  double gap = 0.0;
  std::size_t used = 0;
  for (std::size_t v = 0; v < config.vocab; ++v) {
    if (n[v] < 2) continue;
    const double nv = static_cast<double>(n[v]);
    double mean_sq = 0.0;
    for (double s : sum[v]) mean_sq += s * s;
    const double var = (sumsq[v] - mean_sq / nv) / (nv - 1.0);
    gap += nv * std::max(var, 0.0);
    used += n[v];
  }
  return used == 0 ? 0.0 : gap / static_cast<double>(used);
}

std::string corpus_to_json(const StyleCorpus& corpus) {
  Json seqs = Json::array();
  for (const auto& s : corpus.sequences) {
    seqs.push_back({{"id", s.id},
                    {"split", split_name(s.split)},
                    {"label", s.label},
                    {"l", s.tokens},
                    {"x", matrix_rows(s.output)}});
  }
  Json j{{"config", Json::parse(corpus.config.to_json())}, {"sequences", std::move(seqs)}};
  if (corpus.truth) {
    j["truth"] = {{"s_k", matrix_rows(corpus.truth->styles)},
                  {"A", matrix_rows(corpus.truth->a)},
                  {"B", matrix_rows(corpus.truth->b)},
                  {"emb", matrix_rows(corpus.truth->emb)}};
  }
  return j.dump();
}

void save_corpus(const StyleCorpus& corpus, const std::filesystem::path& path) {
  write_text_file(path, corpus_to_json(corpus));
}

StyleCorpus corpus_from_json(const std::string& text, TruthAccess access) {
  const Json j = detail::parse_json(text, "corpus");
  StyleCorpus corpus;
  try {
    corpus.config = CorpusConfig::from_json(j.at("config").dump());
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("corpus: ") + e.what());
  } catch (const Json::exception& e) {
    throw CorruptFileError(std::string("corpus: ") + e.what());
  }
  const auto& cfg = corpus.config;
  try {
    for (const auto& js : j.at("sequences")) {
      Sequence s;
      s.id = js.at("id").get<std::size_t>();
      s.split = parse_split(js.at("split").get<std::string>());
      s.label = js.at("label").get<int>();
      s.tokens = js.at("l").get<std::vector<int>>();
      s.output = matrix_from_rows(js.at("x"), cfg.output_dim, "corpus sequence " +
                                                                  std::to_string(s.id));
      if (s.output.rows() != s.tokens.size()) {
        throw CorruptFileError("corpus sequence " + std::to_string(s.id) +
                               ": token and frame counts differ");
      }
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= cfg.styles) {
        throw CorruptFileError("corpus sequence " + std::to_string(s.id) + ": label out of range");
      }
      s.linguistic = one_hot(s.tokens, cfg.vocab);
      corpus.sequences.push_back(std::move(s));
    }
    if (access == TruthAccess::kWith) {
      const auto& t = j.at("truth");
      GeneratorTruth truth;
      truth.styles = matrix_from_rows(t.at("s_k"), cfg.style_dim, "truth.s_k");
      truth.a = matrix_from_rows(t.at("A"), cfg.output_dim, "truth.A");
      truth.b = matrix_from_rows(t.at("B"), cfg.output_dim, "truth.B");
      truth.emb = matrix_from_rows(t.at("emb"), cfg.embed_dim, "truth.emb");
      corpus.truth = std::move(truth);
    }
  } catch (const Json::exception& e) {
    throw CorruptFileError(std::string("corpus: ") + e.what());
  } catch (const ShapeError& e) {
    throw CorruptFileError(std::string("corpus: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptFileError(std::string("corpus: ") + e.what());
  }
  return corpus;
}

StyleCorpus load_corpus(const std::filesystem::path& path, TruthAccess access) {
  return corpus_from_json(read_text_file(path), access);
}

}  // namespace ctrlsynth
