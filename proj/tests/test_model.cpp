#include <doctest.h>

#include <cstring>
#include <random>

#include "artistembed/error.hpp"
#include "artistembed/model.hpp"
#include "support.hpp"

using namespace artistembed;
using model::ArchSpec;
using model::ArtistNet;
using model::HeadKind;
using nlohmann::json;

namespace {

dsp::MelSpectrogram random_window(std::mt19937_64& rng, int mels = 128, int frames = 128) {
  return {testsupport::random_matrix<double>(mels, frames, rng, -2.0, 2.0), true};
}

dsp::MelSpectrogram white_noise_window(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd v(128, 128);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = n(rng);
  return {v, true};
}

// Independent tally of weights and biases for conv -> bn blocks plus a head.
std::size_t layer_shape_oracle(const ArchSpec& s) {
  std::size_t n = 0;
  int in = s.n_mels;
  for (std::size_t i = 0; i < s.channels.size(); ++i) {
    const std::size_t out = static_cast<std::size_t>(s.channels[i]);
    n += out * static_cast<std::size_t>(in) * static_cast<std::size_t>(s.kernels[i]) + out;
    n += 2 * out;
    in = s.channels[i];
  }
  if (s.head != HeadKind::none) n += static_cast<std::size_t>(s.head_size) * (s.embedding_dim + 1);
  return n;
}

}  // namespace

TEST_CASE("default architecture parameter count") {
  const ArchSpec spec;
  spec.validate();
  auto net = ArtistNet::build(spec, 1);
  CHECK(layer_shape_oracle(spec) == 789504);
  CHECK(net.parameter_count() == 789504);
  CHECK_FALSE(net.has_head());
  CHECK(net.params().size() == 20);

  auto with_head = ArtistNet::build(ArchSpec::with_head(HeadKind::artist_softmax, 500), 1);
  CHECK(with_head.parameter_count() == 789504 + 500 * 257);
}

TEST_CASE("architecture invariants are enforced") {
  ArchSpec s;
  s.pools = {4, 4, 2, 2, 1};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("bad architecture"), Error);
  s = ArchSpec{};
  s.channels.back() = 128;
  CHECK_THROWS_WITH_AS(ArtistNet::build(s, 0), doctest::Contains("bad architecture"), Error);
  s = ArchSpec{};
  s.kernels.pop_back();
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("bad architecture"), Error);
}

TEST_CASE("seeded initialisation") {
  const auto spec = testsupport::small_spec();
  auto a = ArtistNet::build(spec, 42);
  auto b = ArtistNet::build(spec, 42);
  auto c = ArtistNet::build(spec, 43);
  CHECK(testsupport::flatten_params(a) == testsupport::flatten_params(b));
  CHECK(testsupport::flatten_params(a) != testsupport::flatten_params(c));
  for (const auto& block : a.blocks()) {
    CHECK((block.bn.gamma.value.array() == 1.0f).all());
    CHECK((block.bn.beta.value.array() == 0.0f).all());
    CHECK((block.bn.running_mean.array() == 0.0f).all());
    CHECK((block.bn.running_var.array() == 1.0f).all());
    CHECK((block.conv.bias.value.array() == 0.0f).all());
    // He-uniform bound sqrt(6 / fan_in).
    const double bound = std::sqrt(6.0 / static_cast<double>(block.conv.weight.value.cols()));
    CHECK(block.conv.weight.value.cwiseAbs().maxCoeff() <= bound);
  }
}

TEST_CASE("forward embedding shape, sign and determinism") {
  auto net = ArtistNet::build(ArchSpec{}, 5);
  const auto x = white_noise_window(1);
  const auto e1 = net.forward_embedding(x, nn::Mode::infer);
  const auto e2 = net.forward_embedding(x, nn::Mode::infer);
  CHECK(e1.size() == 256);
  CHECK(e1 == e2);
  CHECK(e1.minCoeff() >= 0.0f);
  CHECK(e1.allFinite());

  std::mt19937_64 rng(2);
  dsp::MelSpectrogram wrong = random_window(rng, 128, 127);
  CHECK_THROWS_WITH_AS(net.forward_embedding(wrong), doctest::Contains("shape error"), Error);
  CHECK_THROWS_WITH_AS(net.forward_embedding(random_window(rng, 64, 128)), doctest::Contains("shape error"), Error);
}

TEST_CASE("batched embedding equals single-window embedding") {
  auto net = ArtistNet::build(testsupport::small_spec(), 3);
  std::mt19937_64 rng(3);
  std::vector<dsp::MelSpectrogram> windows;
  for (int i = 0; i < 5; ++i) windows.push_back(random_window(rng));
  const auto batch = model::embed_windows(net, windows, 2);
  for (int i = 0; i < 5; ++i) {
    const auto single = net.forward_embedding(windows[static_cast<std::size_t>(i)]);
    CHECK((batch.col(i) - single).cwiseAbs().maxCoeff() <= 1e-6f);
  }
}

TEST_CASE("logits and heads") {
  auto net = ArtistNet::build(ArchSpec::with_head(HeadKind::artist_softmax, 500), 8);
  const auto x = white_noise_window(4);
  nn::Rng rng(1);
  CHECK(net.forward_logits(x, nn::Mode::infer, rng).size() == 500);
  CHECK(net.forward_logits(x, nn::Mode::infer, rng) == net.forward_logits(x, nn::Mode::infer, rng));
  // Dropout on the head path draws its mask from the caller's generator.
  const auto e = net.forward_backbone(model::make_input<float>(std::vector{&x, &x}, 128, 128), nn::Mode::infer);
  nn::Rng r1(9), r2(9), r3(10);
  const auto l1 = net.forward_head(e, nn::Mode::train, r1);
  CHECK(l1 == net.forward_head(e, nn::Mode::train, r2));
  CHECK(l1 != net.forward_head(e, nn::Mode::train, r3));

  auto headless = ArtistNet::build(ArchSpec{}, 8);
  CHECK_THROWS_WITH_AS(headless.forward_logits(x, nn::Mode::infer, rng), doctest::Contains("no head"), Error);
}

TEST_CASE("embedding does not depend on the head") {
  const auto base = testsupport::small_spec();
  auto none = ArtistNet::build(base, 11);
  auto artist_spec = base;
  artist_spec.head = HeadKind::artist_softmax;
  artist_spec.head_size = 7;
  auto tag_spec = base;
  tag_spec.head = HeadKind::tag;
  tag_spec.head_size = 3;
  auto artist = ArtistNet::build(artist_spec, 11);
  auto tag = ArtistNet::build(tag_spec, 11);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 3; ++i) {
    const auto x = random_window(rng);
    const auto e = none.forward_embedding(x);
    CHECK(artist.forward_embedding(x) == e);
    CHECK(tag.forward_embedding(x) == e);
  }
}

TEST_CASE("checkpoint round trip is bit-identical") {
  const auto dir = testsupport::scratch_dir("model_ckpt");
  auto spec = testsupport::small_spec();
  spec.head = HeadKind::artist_softmax;
  spec.head_size = 5;
  auto net = ArtistNet::build(spec, 21);
  // Move running statistics away from their defaults.
  std::mt19937_64 rng(21);
  std::vector<dsp::MelSpectrogram> windows;
  for (int i = 0; i < 4; ++i) windows.push_back(random_window(rng));
  std::vector<const dsp::MelSpectrogram*> ptrs;
  for (auto& w : windows) ptrs.push_back(&w);
  net.forward_backbone(model::make_input<float>(ptrs, 128, 128), nn::Mode::train);

  const json meta{{"seed", 21}, {"epoch", 3}};
  model::save(net, {-4.5, 2.25}, meta, dir / "net.ckpt");
  auto ckpt = model::load(dir / "net.ckpt");
  CHECK(ckpt.stats.mean == -4.5);
  CHECK(ckpt.stats.std == 2.25);
  CHECK(ckpt.metadata == meta);
  CHECK(ckpt.net.spec().head_size == 5);
  CHECK(testsupport::flatten_params(ckpt.net) == testsupport::flatten_params(net));
  nn::Rng r(0);
  for (int i = 0; i < 10; ++i) {
    const auto x = random_window(rng);
    CHECK(ckpt.net.forward_logits(x, nn::Mode::infer, r) == net.forward_logits(x, nn::Mode::infer, r));
  }
}

TEST_CASE("large heads round trip") {
  for (int n : {500, 5000}) {
    auto spec = testsupport::small_spec();
    spec.head = HeadKind::artist_softmax;
    spec.head_size = n;
    const auto net = ArtistNet::build(spec, 1);
    const auto ckpt = model::deserialize(model::serialize(net, {0.0, 1.0}, json::object()));
    CHECK(ckpt.net.spec().head_size == n);
    CHECK(ckpt.net.head().weight.value.rows() == n);
  }
}

TEST_CASE("corrupted checkpoints are rejected with distinct diagnostics") {
  const auto net = ArtistNet::build(testsupport::small_spec(), 2);
  const auto bytes = model::serialize(net, {0.0, 1.0}, json::object());

  SUBCASE("truncated") {
    auto cut = bytes;
    cut.resize(cut.size() - 7);
    CHECK_THROWS_WITH_AS(model::deserialize(cut), doctest::Contains("corrupt checkpoint"), Error);
    cut.resize(10);
    CHECK_THROWS_WITH_AS(model::deserialize(cut), doctest::Contains("corrupt checkpoint"), Error);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(model::deserialize(bad), doctest::Contains("corrupt checkpoint"), Error);
  }
  SUBCASE("flipped parameter byte") {
    auto bad = bytes;
    bad[bad.size() - 3] ^= 0x40;
    CHECK_THROWS_WITH_AS(model::deserialize(bad), doctest::Contains("parameter digest mismatch"), Error);
  }
  SUBCASE("version") {
    auto bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_WITH_AS(model::deserialize(bad), doctest::Contains("checkpoint version mismatch"), Error);
  }
  SUBCASE("architecture disagrees with the blob") {
    std::uint32_t header_bytes;
    std::memcpy(&header_bytes, bytes.data() + 8, 4);
    json header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_bytes);
    header["arch"]["channels"] = {8, 8, 16, 16, 16};
    header["arch"]["channels"][1] = 9;
    const std::string text = header.dump();
    std::vector<std::uint8_t> bad(bytes.begin(), bytes.begin() + 8);
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int i = 0; i < 4; ++i) bad.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    bad.insert(bad.end(), text.begin(), text.end());
    bad.insert(bad.end(), bytes.begin() + 12 + header_bytes, bytes.end());
    CHECK_THROWS_WITH_AS(model::deserialize(bad), doctest::Contains("checkpoint shape mismatch"), Error);
  }
  SUBCASE("dsp convention") {
    std::uint32_t header_bytes;
    std::memcpy(&header_bytes, bytes.data() + 8, 4);
    json header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_bytes);
    header["dsp"]["hop"] = 256;
    const std::string text = header.dump();
    std::vector<std::uint8_t> bad(bytes.begin(), bytes.begin() + 8);
    const auto len = static_cast<std::uint32_t>(text.size());
    for (int i = 0; i < 4; ++i) bad.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
    bad.insert(bad.end(), text.begin(), text.end());
    bad.insert(bad.end(), bytes.begin() + 12 + header_bytes, bytes.end());
    CHECK_THROWS_WITH_AS(model::deserialize(bad), doctest::Contains("incompatible dsp convention"), Error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(model::load(testsupport::scratch_dir("model_missing") / "none.ckpt"),
                         doctest::Contains("cannot open checkpoint"), Error);
  }
}
