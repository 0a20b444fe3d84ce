#include "artistembed/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "artistembed/error.hpp"

namespace artistembed::model {

using nlohmann::json;

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::none: return "none";
    case HeadKind::artist_softmax: return "artist_softmax";
    case HeadKind::tag: return "tag";
  }
  return "none";
}

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "none") return HeadKind::none;
  if (name == "artist_softmax") return HeadKind::artist_softmax;
  if (name == "tag") return HeadKind::tag;
  throw Error("bad architecture", "unknown head '" + name + "'");
}

void ArchSpec::validate() const {
  const auto fail = [](const std::string& why) { throw Error("bad architecture", why); };
  if (n_mels < 1 || context_frames < 1) fail("input dimensions must be positive");
  if (channels.empty()) fail("no convolution blocks");
  if (kernels.size() != channels.size() || pools.size() != channels.size()) {
    fail("channels, kernels and pools must have one entry per block");
  }
  long frames = 1;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1 || kernels[i] < 1) fail("block " + std::to_string(i) + " has a non-positive size");
    if (pools[i] < 1) fail("block " + std::to_string(i) + " has pool width < 1");
    frames *= pools[i];
  }
  if (frames != context_frames) {
    fail("pool widths multiply to " + std::to_string(frames) + ", not " + std::to_string(context_frames));
  }
  if (channels.back() != embedding_dim) fail("last block width must equal embedding_dim");
  if (head == HeadKind::none && head_size != 0) fail("head_size given without a head");
  if (head != HeadKind::none && head_size < 1) fail("head requires head_size >= 1");
  if (!(bn_eps > 0.0) || !(bn_momentum >= 0.0 && bn_momentum < 1.0)) fail("batch norm settings");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

ArchSpec ArchSpec::with_head(HeadKind kind, int size) {
  ArchSpec spec;
  spec.head = kind;
  spec.head_size = kind == HeadKind::none ? 0 : size;
  return spec;
}

void to_json(json& j, const ArchSpec& s) {
  j = json{{"n_mels", s.n_mels},           {"context_frames", s.context_frames},
           {"channels", s.channels},       {"kernels", s.kernels},
           {"pools", s.pools},             {"embedding_dim", s.embedding_dim},
           {"head", to_string(s.head)},    {"head_size", s.head_size},
           {"bn_eps", s.bn_eps},           {"bn_momentum", s.bn_momentum},
           {"dropout", s.dropout}};
}

void from_json(const json& j, ArchSpec& s) {
  static const std::vector<std::string> known{"n_mels",  "context_frames", "channels",    "kernels",
                                              "pools",   "embedding_dim",  "head",        "head_size",
                                              "bn_eps",  "bn_momentum",    "dropout"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error("bad architecture", "unknown key '" + key + "'");
    }
  }
  ArchSpec d;
  s.n_mels = j.value("n_mels", d.n_mels);
  s.context_frames = j.value("context_frames", d.context_frames);
  s.channels = j.value("channels", d.channels);
  s.kernels = j.value("kernels", d.kernels);
  s.pools = j.value("pools", d.pools);
  s.embedding_dim = j.value("embedding_dim", d.embedding_dim);
  s.head = head_kind_from_string(j.value("head", std::string("none")));
  s.head_size = j.value("head_size", d.head_size);
  s.bn_eps = j.value("bn_eps", d.bn_eps);
  s.bn_momentum = j.value("bn_momentum", d.bn_momentum);
  s.dropout = j.value("dropout", d.dropout);
}

// ---------------------------------------------------------------------------

template <class T>
ArtistNetT<T> ArtistNetT<T>::build(const ArchSpec& spec, std::uint64_t seed) {
  spec.validate();
  ArtistNetT net;
  net.spec_ = spec;
  std::mt19937_64 rng(seed);
  const auto he_uniform = [&rng](Matrix<T>& w, double fan_in) {
    std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
  };
  int in = spec.n_mels;
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    ConvBlock<T> block{nn::Conv1d<T>(in, spec.channels[i], spec.kernels[i]),
                       nn::BatchNorm1d<T>(spec.channels[i], spec.bn_eps, spec.bn_momentum), nn::Relu<T>{},
                       nn::MaxPool1d<T>(spec.pools[i])};
    he_uniform(block.conv.weight.value, static_cast<double>(in) * spec.kernels[i]);
    net.blocks_.push_back(std::move(block));
    in = spec.channels[i];
  }
  net.dropout_ = nn::Dropout<T>(spec.dropout);
  if (spec.head != HeadKind::none) {
    net.head_ = nn::Dense<T>(spec.embedding_dim, spec.head_size);
    he_uniform(net.head_.weight.value, spec.embedding_dim);
  }
  return net;
}

template <class T>
Matrix<T> ArtistNetT<T>::forward_backbone(const Tensor<T>& input, Mode mode) {
  nn::require_shape(input.channels() == spec_.n_mels && input.frames == spec_.context_frames,
                    "network input must be " + std::to_string(spec_.n_mels) + " x " +
                        std::to_string(spec_.context_frames));
  Tensor<T> x = input;
  for (auto& block : blocks_) {
    x = block.conv.forward(x);
    x = block.bn.forward(x, mode);
    x = block.relu.forward(x);
    x = block.pool.forward(x);
  }
  return std::move(x.values);
}

template <class T>
Tensor<T> ArtistNetT<T>::backward_backbone(const Matrix<T>& d_embedding) {
  Tensor<T> dx{d_embedding, d_embedding.cols(), 1};
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    dx = it->pool.backward(dx);
    dx = it->relu.backward(dx);
    dx = it->bn.backward(dx);
    dx = it->conv.backward(dx);
  }
  return dx;
}

template <class T>
Matrix<T> ArtistNetT<T>::forward_head(const Matrix<T>& embedding, Mode mode, nn::Rng& rng) {
  if (!has_head()) throw Error("no head");
  return head_.forward(dropout_.forward(embedding, mode, rng));
}

template <class T>
Matrix<T> ArtistNetT<T>::backward_head(const Matrix<T>& d_logits) {
  if (!has_head()) throw Error("no head");
  return dropout_.backward(head_.backward(d_logits));
}

template <class T>
Tensor<T> make_input(std::span<const dsp::MelSpectrogram* const> mels, int n_mels, int frames) {
  Tensor<T> input = Tensor<T>::zeros(n_mels, static_cast<Eigen::Index>(mels.size()), frames);
  for (std::size_t b = 0; b < mels.size(); ++b) {
    const auto& mel = *mels[b];
    if (!mel.standardized) throw Error("shape error", "network input must be standardized");
    nn::require_shape(mel.values.rows() == n_mels && mel.values.cols() == frames,
                      "window is " + std::to_string(mel.values.rows()) + " x " + std::to_string(mel.values.cols()) +
                          ", expected " + std::to_string(n_mels) + " x " + std::to_string(frames));
    input.sample(static_cast<Eigen::Index>(b)) = mel.values.cast<T>();
  }
  return input;
}

template <class T>
Vector<T> ArtistNetT<T>::forward_embedding(const dsp::MelSpectrogram& mel, Mode mode) {
  const dsp::MelSpectrogram* one[] = {&mel};
  return forward_backbone(make_input<T>(one, spec_.n_mels, spec_.context_frames), mode).col(0);
}

template <class T>
Vector<T> ArtistNetT<T>::forward_logits(const dsp::MelSpectrogram& mel, Mode mode, nn::Rng& rng) {
  if (!has_head()) throw Error("no head");
  const Matrix<T> embedding = forward_embedding(mel, mode);
  return forward_head(embedding, mode, rng).col(0);
}

template <class T>
std::vector<nn::Param<T>*> ArtistNetT<T>::params() {
  std::vector<nn::Param<T>*> out;
  for (auto& block : blocks_) {
    out.push_back(&block.conv.weight);
    out.push_back(&block.conv.bias);
    out.push_back(&block.bn.gamma);
    out.push_back(&block.bn.beta);
  }
  if (has_head()) {
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
  }
  return out;
}

template <class T>
void ArtistNetT<T>::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

template <class T>
std::size_t ArtistNetT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& block : blocks_) {
    n += block.conv.weight.size() + block.conv.bias.size() + block.bn.gamma.size() + block.bn.beta.size();
  }
  if (has_head()) n += head_.weight.size() + head_.bias.size();
  return n;
}

template <class T>
template <class U>
ArtistNetT<U> ArtistNetT<T>::cast() const {
  ArtistNetT<U> out = ArtistNetT<U>::build(spec_, 0);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& src = blocks_[i];
    auto& dst = out.blocks_[i];
    dst.conv.weight = nn::Param<U>(src.conv.weight.value.template cast<U>());
    dst.conv.bias = nn::Param<U>(src.conv.bias.value.template cast<U>());
    dst.bn.gamma = nn::Param<U>(src.bn.gamma.value.template cast<U>());
    dst.bn.beta = nn::Param<U>(src.bn.beta.value.template cast<U>());
    dst.bn.running_mean = src.bn.running_mean.template cast<U>();
    dst.bn.running_var = src.bn.running_var.template cast<U>();
  }
  if (has_head()) {
    out.head_.weight = nn::Param<U>(head_.weight.value.template cast<U>());
    out.head_.bias = nn::Param<U>(head_.bias.value.template cast<U>());
  }
  return out;
}

Matrix<float> embed_windows(ArtistNet& net, std::span<const dsp::MelSpectrogram> mels, std::size_t chunk) {
  Matrix<float> out(net.spec().embedding_dim, static_cast<Eigen::Index>(mels.size()));
  std::vector<const dsp::MelSpectrogram*> group;
  for (std::size_t start = 0; start < mels.size(); start += chunk) {
    group.clear();
    for (std::size_t i = start; i < std::min(mels.size(), start + chunk); ++i) group.push_back(&mels[i]);
    const auto input = make_input<float>(group, net.spec().n_mels, net.spec().context_frames);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(group.size())) =
        net.forward_backbone(input, Mode::infer);
  }
  return out;
}

template class ArtistNetT<float>;
template class ArtistNetT<double>;
template ArtistNetT<double> ArtistNetT<float>::cast<double>() const;
template ArtistNetT<float> ArtistNetT<double>::cast<float>() const;
template Tensor<float> make_input<float>(std::span<const dsp::MelSpectrogram* const>, int, int);
template Tensor<double> make_input<double>(std::span<const dsp::MelSpectrogram* const>, int, int);

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'A', 'E', 'M', 'B'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

void put_floats(std::vector<std::uint8_t>& out, const float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, data + i, 4);
    put_u32(out, bits);
  }
}

// Visits every stored array of a network in blob order.
template <class Net, class Fn>
void for_each_array(Net& net, Fn&& fn) {
  for (auto& block : net.blocks()) {
    fn(block.conv.weight.value);
    fn(block.conv.bias.value);
    fn(block.bn.gamma.value);
    fn(block.bn.beta.value);
    fn(block.bn.running_mean);
    fn(block.bn.running_var);
  }
  if (net.has_head()) {
    fn(net.head().weight.value);
    fn(net.head().bias.value);
  }
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << value;
  return out.str();
}

json dsp_convention() {
  return json{{"sample_rate", dsp::kSampleRate},
              {"n_fft", dsp::kFftSize},
              {"hop", dsp::kHopSize},
              {"n_mels", dsp::kMelBins},
              {"window", "hann-periodic"},
              {"spectrum", "power"},
              {"center", false},
              {"mel_scale", "htk"},
              {"log", "ln"},
              {"log_floor", dsp::kLogFloor}};
}

std::vector<std::uint8_t> serialize(const ArtistNet& net, const dsp::NormStats& stats, const json& metadata) {
  std::vector<std::uint8_t> blob;
  std::size_t floats = 0;
  for_each_array(net, [&](const auto& a) {
    put_floats(blob, a.data(), static_cast<std::size_t>(a.size()));
    floats += static_cast<std::size_t>(a.size());
  });

  json header{{"arch", net.spec()},
              {"norm_stats", {{"mean", stats.mean}, {"std", stats.std}}},
              {"dsp", dsp_convention()},
              {"metadata", metadata},
              {"parameter_floats", floats},
              {"blob_fnv1a64", hex64(fnv1a64(blob))}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error("corrupt checkpoint", "missing AEMB magic");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw Error("checkpoint version mismatch",
                "file has version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::uint32_t header_bytes = get_u32(bytes.data() + 8);
  if (bytes.size() < 12ull + header_bytes) throw Error("corrupt checkpoint", "truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_bytes);
  } catch (const json::exception& e) {
    throw Error("corrupt checkpoint", std::string("header: ") + e.what());
  }

  Checkpoint ckpt;
  std::size_t declared = 0;
  std::string digest;
  try {
    ArchSpec arch = header.at("arch").get<ArchSpec>();
    ckpt.net = ArtistNet::build(arch, 0);
    ckpt.stats = {header.at("norm_stats").at("mean").get<double>(), header.at("norm_stats").at("std").get<double>()};
    ckpt.dsp_flags = header.at("dsp");
    ckpt.metadata = header.value("metadata", json::object());
    declared = header.at("parameter_floats").get<std::size_t>();
    digest = header.at("blob_fnv1a64").get<std::string>();
  } catch (const json::exception& e) {
    throw Error("corrupt checkpoint", std::string("header: ") + e.what());
  }
  if (ckpt.dsp_flags != dsp_convention()) throw Error("incompatible dsp convention", ckpt.dsp_flags.dump());

  const auto blob = bytes.subspan(12 + header_bytes);
  if (blob.size() != declared * 4) {
    throw Error("corrupt checkpoint", "parameter blob has " + std::to_string(blob.size()) + " bytes, header declares " +
                                          std::to_string(declared * 4));
  }
  if (hex64(fnv1a64(blob)) != digest) throw Error("corrupt checkpoint", "parameter digest mismatch");

  std::size_t expected = 0;
  for_each_array(ckpt.net, [&](const auto& a) { expected += static_cast<std::size_t>(a.size()); });
  if (expected != declared) {
    throw Error("checkpoint shape mismatch", "architecture needs " + std::to_string(expected) +
                                                 " floats, file holds " + std::to_string(declared));
  }
  std::size_t offset = 0;
  for_each_array(ckpt.net, [&](auto& a) {
    for (Eigen::Index i = 0; i < a.size(); ++i, offset += 4) {
      const std::uint32_t bits = get_u32(blob.data() + offset);
      std::memcpy(a.data() + i, &bits, 4);
    }
  });
  for (auto& block : ckpt.net.blocks()) {
    if ((block.bn.running_var.array() < 0.0f).any()) throw Error("corrupt checkpoint", "negative running variance");
  }
  if (!(ckpt.stats.std > 0.0)) throw Error("corrupt checkpoint", "non-positive normalisation std");
  return ckpt;
}

void save(const ArtistNet& net, const dsp::NormStats& stats, const json& metadata, const std::filesystem::path& path) {
  const auto bytes = serialize(net, stats, metadata);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write checkpoint", path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint", path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace artistembed::model
