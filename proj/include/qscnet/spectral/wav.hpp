#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qscnet/spectral/spectral.hpp"

namespace qscnet::audio {

enum class SampleFormat { pcm16, pcm24, float32 };

struct WavInfo {
  SampleFormat format = SampleFormat::pcm16;
  int channels = 0;
  int sample_rate = 0;
  std::size_t frames = 0;
  std::streamoff data_offset = 0;

  std::size_t bytes_per_sample() const {
    return format == SampleFormat::pcm16 ? 2 : format == SampleFormat::pcm24 ? 3 : 4;
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "WAV codec assumes a little-endian host");

inline std::uint32_t u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

inline void put32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
inline void put16(std::ostream& o, std::uint16_t v) { o.write(reinterpret_cast<const char*>(&v), 2); }

}  // namespace detail

/// Parses the RIFF header. Accepts 16/24-bit PCM and 32-bit float, plain
/// or WAVE_FORMAT_EXTENSIBLE.
inline WavInfo probe_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  unsigned char riff[12];
  if (!in.read(reinterpret_cast<char*>(riff), 12) || std::memcmp(riff, "RIFF", 4) != 0 ||
      std::memcmp(riff + 8, "WAVE", 4) != 0)
    throw DataError(path.string() + ": not a RIFF/WAVE file");
  WavInfo info;
  bool have_fmt = false;
  unsigned char hdr[8];
  while (in.read(reinterpret_cast<char*>(hdr), 8)) {
    const std::uint32_t size = detail::u32(hdr + 4);
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      std::vector<unsigned char> fmt(size);
      if (size < 16 || !in.read(reinterpret_cast<char*>(fmt.data()), size))
        throw DataError(path.string() + ": truncated fmt chunk");
      std::uint16_t tag = detail::u16(fmt.data());
      if (tag == 0xFFFE && size >= 26) tag = detail::u16(fmt.data() + 24);
      info.channels = detail::u16(fmt.data() + 2);
      info.sample_rate = static_cast<int>(detail::u32(fmt.data() + 4));
      const int bits = detail::u16(fmt.data() + 14);
      if (tag == 1 && bits == 16)
        info.format = SampleFormat::pcm16;
      else if (tag == 1 && bits == 24)
        info.format = SampleFormat::pcm24;
      else if (tag == 3 && bits == 32)
        info.format = SampleFormat::float32;
      else
        throw DataError(path.string() + ": unsupported encoding (tag " + std::to_string(tag) + ", " +
                        std::to_string(bits) + " bits)");
      have_fmt = true;
      if (size % 2) in.seekg(1, std::ios::cur);
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw DataError(path.string() + ": data chunk before fmt chunk");
      info.data_offset = in.tellg();
      const std::size_t frame_bytes = info.bytes_per_sample() * static_cast<std::size_t>(info.channels);
      const auto file_size = static_cast<std::size_t>(std::filesystem::file_size(path));
      const std::size_t available = file_size - static_cast<std::size_t>(info.data_offset);
      info.frames = std::min<std::size_t>(size, available) / frame_bytes;
      return info;
    } else {
      in.seekg(size + (size % 2), std::ios::cur);
    }
  }
  throw DataError(path.string() + ": no data chunk");
}

/// Reads frames [begin, begin + count) of a stereo 44.1 kHz file. Frames
/// past the end of the file read as zeros.
inline spectral::Waveform<float> read_wav_segment(const std::filesystem::path& path, std::size_t begin,
                                                  std::size_t count) {
  const WavInfo info = probe_wav(path);
  if (info.channels != 2)
    throw DataError(path.string() + ": expected stereo, got " + std::to_string(info.channels) + " channels");
  if (info.sample_rate != spectral::kSampleRate)
    throw DataError(path.string() + ": expected 44100 Hz, got " + std::to_string(info.sample_rate));
  spectral::Waveform<float> w(count);
  if (begin >= info.frames) return w;
  const std::size_t n = std::min(count, info.frames - begin);
  const std::size_t bps = info.bytes_per_sample();
  std::vector<unsigned char> raw(n * 2 * bps);
  std::ifstream in(path, std::ios::binary);
  in.seekg(info.data_offset + static_cast<std::streamoff>(begin * 2 * bps));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DataError(path.string() + ": truncated sample data");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      const unsigned char* p = raw.data() + (i * 2 + c) * bps;
      float v;
      switch (info.format) {
        case SampleFormat::pcm16:
          v = static_cast<float>(static_cast<std::int16_t>(detail::u16(p))) / 32768.0f;
          break;
        case SampleFormat::pcm24: {
          std::int32_t s = std::int32_t(p[0]) | std::int32_t(p[1]) << 8 | std::int32_t(p[2]) << 16;
          if (s & 0x800000) s -= 0x1000000;
          v = static_cast<float>(s) / 8388608.0f;
          break;
        }
        default:
          std::memcpy(&v, p, 4);
      }
      w(c, i) = v;
    }
  return w;
}

inline spectral::Waveform<float> read_wav(const std::filesystem::path& path) {
  const auto info = probe_wav(path);
  auto w = read_wav_segment(path, 0, info.frames);
  if (w.length() == 0) throw DataError(path.string() + ": no samples");
  if (!w.samples().all_finite()) throw DataError(path.string() + ": non-finite samples");
  return w;
}

/// PCM output is clipped to full scale and rounded to nearest.
inline void write_wav(const std::filesystem::path& path, const spectral::Waveform<float>& w,
                      SampleFormat format = SampleFormat::float32) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint16_t bps = format == SampleFormat::pcm16 ? 2 : format == SampleFormat::pcm24 ? 3 : 4;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.length() * 2 * bps);
  out.write("RIFF", 4);
  detail::put32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  detail::put32(out, 16);
  detail::put16(out, format == SampleFormat::float32 ? 3 : 1);
  detail::put16(out, 2);
  detail::put32(out, static_cast<std::uint32_t>(w.sample_rate()));
  detail::put32(out, static_cast<std::uint32_t>(w.sample_rate()) * 2 * bps);
  detail::put16(out, static_cast<std::uint16_t>(2 * bps));
  detail::put16(out, static_cast<std::uint16_t>(8 * bps));
  out.write("data", 4);
  detail::put32(out, data_bytes);
  std::vector<unsigned char> buf(w.length() * 2 * bps);
  for (std::size_t i = 0; i < w.length(); ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      unsigned char* p = buf.data() + (i * 2 + c) * bps;
      const float v = w(c, i);
      if (format == SampleFormat::float32) {
        std::memcpy(p, &v, 4);
      } else if (format == SampleFormat::pcm16) {
        const auto s = static_cast<std::int16_t>(std::clamp(std::lround(double(v) * 32768.0), -32768L, 32767L));
        std::memcpy(p, &s, 2);
      } else {
        const auto s = static_cast<std::int32_t>(std::clamp(std::lround(double(v) * 8388608.0), -8388608L, 8388607L));
        p[0] = static_cast<unsigned char>(s & 0xFF);
        p[1] = static_cast<unsigned char>((s >> 8) & 0xFF);
        p[2] = static_cast<unsigned char>((s >> 16) & 0xFF);
      }
    }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace qscnet::audio
