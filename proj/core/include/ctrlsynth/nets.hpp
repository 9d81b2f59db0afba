#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ctrlsynth/autodiff.hpp"
#include "ctrlsynth/tensor.hpp"

namespace ctrlsynth {

/// Layer sizes shared by decoder and encoders.
struct ArchConfig {
  std::size_t linguistic_dim = 20;
  std::size_t output_dim = 12;
  /// Width of the per-sequence control vector; 0 means no latent input.
  std::size_t latent_dim = 4;
  std::size_t ff_units = 32;
  /// Units per direction of the bidirectional recurrent layer.
  std::size_t rnn_units = 16;
};

/// Uniform on +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

/// T x vocab one-hot encoding of a token sequence.
Tensor one_hot(std::span<const int> tokens, std::size_t vocab);

struct DenseLayer {
  ad::Parameter weight;  // in x out
  ad::Parameter bias;    // 1 x out

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  ad::NodeId apply(ad::Graph& g, ad::NodeId x);
};

/// Vanilla tanh recurrence run in both directions; outputs [forward ; backward].
struct BiRecurrentLayer {
  DenseLayer fwd_input;
  ad::Parameter fwd_recurrent;
  DenseLayer bwd_input;
  ad::Parameter bwd_recurrent;

  BiRecurrentLayer() = default;
  BiRecurrentLayer(const std::string& name, std::size_t in, std::size_t units,
                   std::mt19937_64& rng);
  ad::NodeId apply(ad::Graph& g, ad::NodeId x);
  std::size_t output_dim() const { return 2 * fwd_recurrent.value.cols(); }
};

/// Maps per-frame [l_t ; z] to the mean output frame:
/// two sigmoid feedforward layers, a bidirectional recurrent layer, a linear output.
class DecoderNet {
 public:
  DecoderNet() = default;
  DecoderNet(const ArchConfig& arch, std::mt19937_64& rng, const std::string& prefix = "decoder");

  /// `latent` must be 1 x latent_dim when the decoder has a latent input.
  ad::NodeId build(ad::Graph& g, ad::NodeId linguistic, std::optional<ad::NodeId> latent);

  const ArchConfig& arch() const { return arch_; }
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;

 private:
  ArchConfig arch_;
  DenseLayer ff1_;
  DenseLayer ff2_;
  BiRecurrentLayer rnn_;
  DenseLayer out_;
};

enum class EncoderOrder {
  kSame,      // feedforward then recurrent, as in the decoder
  kReversed,  // recurrent then feedforward
};

/// Maps ([x_t ; l_t])_t to one latent vector through a mean-pooling layer.
class EncoderNet {
 public:
  struct Output {
    ad::NodeId mean;
    std::optional<ad::NodeId> logvar;
  };

  EncoderNet() = default;
  EncoderNet(const ArchConfig& arch, EncoderOrder order, bool variance_head, std::mt19937_64& rng,
             const std::string& prefix = "encoder");

  Output build(ad::Graph& g, ad::NodeId output_seq, ad::NodeId linguistic);

  EncoderOrder order() const { return order_; }
  bool has_variance_head() const { return logvar_.has_value(); }
  const ArchConfig& arch() const { return arch_; }
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t parameter_count() const;

 private:
  ArchConfig arch_;
  EncoderOrder order_ = EncoderOrder::kSame;
  DenseLayer ff1_;
  DenseLayer ff2_;
  BiRecurrentLayer rnn_;
  DenseLayer proj_;
  std::optional<DenseLayer> logvar_;
};

/// Mean output sequence for (l, z). `z` is ignored when the decoder has no latent input.
Tensor decode(DecoderNet& decoder, const Tensor& linguistic, const Tensor* latent);
/// Encoder mean for (x, l); throws ShapeError when the lengths differ.
Tensor encode(EncoderNet& encoder, const Tensor& output_seq, const Tensor& linguistic);

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
const char* split_name(Split s);
Split parse_split(const std::string& name);

/// One learnable control vector per corpus sequence, grouped by split.
class LatentTable {
 public:
  using Map = std::map<std::size_t, Tensor>;

  void set(Split split, std::size_t id, Tensor z);
  const Tensor& get(Split split, std::size_t id) const;
  Tensor& get(Split split, std::size_t id);
  bool contains(Split split, std::size_t id) const;
  const Map& entries(Split split) const { return tables_[static_cast<int>(split)]; }
  std::size_t size() const;

  friend bool operator==(const LatentTable&, const LatentTable&) = default;

 private:
  std::array<Map, 3> tables_;
};

}  // namespace ctrlsynth
