#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "artistembed/dsp.hpp"
#include "artistembed/nn/layers.hpp"

namespace artistembed::model {

using nn::Matrix;
using nn::Mode;
using nn::Tensor;
using nn::Vector;

enum class HeadKind { none, artist_softmax, tag };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& name);

/// Backbone layout plus output head. Block i is conv(kernels[i]) -> batch
/// norm -> ReLU -> max pool(pools[i]) with channels[i] output channels.
struct ArchSpec {
  int n_mels = dsp::kMelBins;
  int context_frames = dsp::kContextFrames;
  std::vector<int> channels{128, 128, 256, 256, 256};
  std::vector<int> kernels{4, 4, 4, 4, 4};
  std::vector<int> pools{4, 4, 2, 2, 2};
  int embedding_dim = 256;
  HeadKind head = HeadKind::none;
  int head_size = 0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.99;
  double dropout = 0.5;

  /// Throws "bad architecture" naming the violated invariant.
  void validate() const;

  static ArchSpec with_head(HeadKind kind, int size);
};

void to_json(nlohmann::json& j, const ArchSpec& spec);
void from_json(const nlohmann::json& j, ArchSpec& spec);

template <class T>
struct ConvBlock {
  nn::Conv1d<T> conv;
  nn::BatchNorm1d<T> bn;
  nn::Relu<T> relu;
  nn::MaxPool1d<T> pool;
};

/// The five-block 1-D convolutional network with a 256-d last hidden layer
/// and an optional dense output head.
template <class T>
class ArtistNetT {
 public:
  ArtistNetT() = default;

  /// He-uniform conv/dense weights from `seed`; zero biases; batch-norm
  /// gamma = 1, beta = 0, running statistics (0, 1).
  static ArtistNetT build(const ArchSpec& spec, std::uint64_t seed);

  const ArchSpec& spec() const { return spec_; }
  bool has_head() const { return spec_.head != HeadKind::none; }

  /// input: n_mels x (batch * context_frames). Returns embedding_dim x batch.
  Matrix<T> forward_backbone(const Tensor<T>& input, Mode mode);
  /// Accumulates parameter gradients; returns d(loss)/d(input).
  Tensor<T> backward_backbone(const Matrix<T>& d_embedding);

  /// Dropout (training only) followed by the dense head. Throws "no head".
  Matrix<T> forward_head(const Matrix<T>& embedding, Mode mode, nn::Rng& rng);
  Matrix<T> backward_head(const Matrix<T>& d_logits);

  /// Single-window helpers. `mel` must be standardised with exactly
  /// context_frames frames.
  Vector<T> forward_embedding(const dsp::MelSpectrogram& mel, Mode mode = Mode::infer);
  Vector<T> forward_logits(const dsp::MelSpectrogram& mel, Mode mode, nn::Rng& rng);

  /// Learnable parameters in checkpoint order.
  std::vector<nn::Param<T>*> params();
  void zero_grad();
  std::size_t parameter_count() const;

  std::vector<ConvBlock<T>>& blocks() { return blocks_; }
  const std::vector<ConvBlock<T>>& blocks() const { return blocks_; }
  nn::Dense<T>& head() { return head_; }
  const nn::Dense<T>& head() const { return head_; }
  nn::Dropout<T>& head_dropout() { return dropout_; }

  /// Copies every parameter and running statistic into another precision.
  template <class U>
  ArtistNetT<U> cast() const;

 private:
  template <class U>
  friend class ArtistNetT;

  ArchSpec spec_;
  std::vector<ConvBlock<T>> blocks_;
  nn::Dense<T> head_;
  nn::Dropout<T> dropout_{0.5};
};

using ArtistNet = ArtistNetT<float>;

/// Packs standardised windows into one backbone input tensor.
template <class T>
Tensor<T> make_input(std::span<const dsp::MelSpectrogram* const> mels, int n_mels, int frames);

/// Inference-mode embeddings (embedding_dim x n) of standardised windows,
/// evaluated `chunk` windows at a time.
Matrix<float> embed_windows(ArtistNet& net, std::span<const dsp::MelSpectrogram> mels, std::size_t chunk = 64);

// ---------------------------------------------------------------------------
// Checkpoint file:
//   "AEMB" | u32 format_version | u32 header_bytes | JSON header |
//   little-endian float32 parameter blob
// The blob holds, per block: conv weight (out x in*kernel, column-major),
// conv bias, bn gamma, bn beta, bn running_mean, bn running_var; then head
// weight (column-major) and head bias when a head is present. The header
// records the blob length and its FNV-1a 64 digest.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ArtistNet net;
  dsp::NormStats stats;
  nlohmann::json dsp_flags;
  nlohmann::json metadata;
};

/// The DSP conventions stamped into every checkpoint.
nlohmann::json dsp_convention();

std::vector<std::uint8_t> serialize(const ArtistNet& net, const dsp::NormStats& stats,
                                    const nlohmann::json& metadata);
/// Throws "corrupt checkpoint", "checkpoint version mismatch",
/// "checkpoint shape mismatch" or "incompatible dsp convention".
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save(const ArtistNet& net, const dsp::NormStats& stats, const nlohmann::json& metadata,
          const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t value);

}  // namespace artistembed::model
