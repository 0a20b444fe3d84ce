#include "artistembed/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "artistembed/error.hpp"

namespace artistembed::wav {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t u32le(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
std::uint16_t u16le(const std::uint8_t* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

}  // namespace

dsp::AudioClip decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error("not a RIFF WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = u32le(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw Error("truncated WAV chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw Error("malformed fmt chunk");
      format = u16le(bytes.data() + body);
      channels = u16le(bytes.data() + body + 2);
      rate = u32le(bytes.data() + body + 4);
      bits = u16le(bytes.data() + body + 14);
      if (format == kFormatExtensible && size >= 26) format = u16le(bytes.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw Error("data chunk before fmt chunk");
      if (channels != 1) throw Error("unsupported channel count", std::to_string(channels));
      if (rate != static_cast<std::uint32_t>(dsp::kSampleRate)) {
        throw Error("unsupported sample rate", std::to_string(rate));
      }
      dsp::AudioClip clip;
      const std::uint8_t* data = bytes.data() + body;
      if (format == kFormatPcm && bits == 16) {
        clip.samples.resize(size / 2);
        for (std::size_t i = 0; i < clip.samples.size(); ++i) {
          const auto code = static_cast<std::int16_t>(u16le(data + 2 * i));
          clip.samples[i] = static_cast<float>(code) / 32768.0f;
        }
      } else if (format == kFormatFloat && bits == 32) {
        clip.samples.resize(size / 4);
        std::memcpy(clip.samples.data(), data, clip.samples.size() * 4);
      } else {
        throw Error("unsupported sample format",
                    "format " + std::to_string(format) + ", " + std::to_string(bits) + " bits");
      }
      return clip;
    }
    pos = body + size + (size & 1u);
  }
  throw Error("WAV file has no data chunk");
}

dsp::AudioClip read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open audio file", path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return decode(bytes);
  } catch (const Error& e) {
    throw Error(e.what(), path.string());
  }
}

std::vector<std::uint8_t> encode_pcm16(std::span<const float> samples) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, dsp::kSampleRate);
  put_u32(out, dsp::kSampleRate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float s : samples) {
    const double clipped = std::clamp(static_cast<double>(s), -1.0, 1.0);
    const auto code = static_cast<std::int16_t>(
        std::clamp(std::lround(clipped * 32767.0), -32768L, 32767L));
    put_u16(out, static_cast<std::uint16_t>(code));
  }
  return out;
}

void write_pcm16(const std::filesystem::path& path, std::span<const float> samples) {
  const auto bytes = encode_pcm16(samples);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write audio file", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write audio file", path.string());
}

}  // namespace artistembed::wav
