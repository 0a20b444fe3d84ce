#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "artistembed/dsp.hpp"

namespace artistembed::wav {

/// Reads a mono 22050 Hz RIFF WAV (PCM 16-bit or IEEE float 32-bit).
/// Anything else throws Error with a diagnostic naming the offending field.
dsp::AudioClip read(const std::filesystem::path& path);

/// Decodes an in-memory WAV image with the same rules as read().
dsp::AudioClip decode(std::span<const std::uint8_t> bytes);

/// Encodes samples as 16-bit PCM mono at 22050 Hz. Samples are clipped to
/// [-1, 1] and rounded to the nearest integer code.
std::vector<std::uint8_t> encode_pcm16(std::span<const float> samples);

void write_pcm16(const std::filesystem::path& path, std::span<const float> samples);

}  // namespace artistembed::wav
