// Copyright 2026 DCIM-AVSR Authors
// Little-endian readers and writers for the corpus file formats
//
// Licensed under the Apache License, Version 2.0

#include "dcim/fileio.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dcim {

namespace {

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated header in " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void check_magic(std::istream& is, const char* magic, const std::string& path) {
  char m[4];
  if (!is.read(m, 4) || std::memcmp(m, magic, 4) != 0) {
    throw std::runtime_error(std::string("bad magic, expected ") + magic + " in " + path);
  }
}

}  // namespace

WaveFile read_dwv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  check_magic(is, "DWV1", path);
  WaveFile w;
  w.sample_rate = static_cast<int>(read_u32(is, path));
  const uint32_t n = read_u32(is, path);
  std::vector<char> raw(static_cast<size_t>(n) * 2);
  if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
    throw std::runtime_error("truncated samples in " + path);
  }
  w.samples.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    const int16_t s = static_cast<int16_t>(static_cast<unsigned char>(raw[2 * i]) |
                                           (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
    w.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return w;
}

void write_dwv(const std::string& path, const WaveFile& wav) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("DWV1", 4);
  write_u32(os, static_cast<uint32_t>(wav.sample_rate));
  write_u32(os, static_cast<uint32_t>(wav.samples.size()));
  for (double v : wav.samples) {
    double c = std::clamp(v, -1.0, 32767.0 / 32768.0);
    const int16_t s = static_cast<int16_t>(std::lround(c * 32768.0));
    const unsigned char b[2] = {static_cast<unsigned char>(s & 0xff),
                                static_cast<unsigned char>((s >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
  }
}

Tensor read_dvc(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  check_magic(is, "DVC1", path);
  const uint32_t T = read_u32(is, path);
  const uint32_t H = read_u32(is, path);
  const uint32_t W = read_u32(is, path);
  const size_t n = static_cast<size_t>(T) * H * W;
  std::vector<char> raw(n * 4);
  if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
    throw std::runtime_error("truncated frames in " + path);
  }
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits = static_cast<uint32_t>(static_cast<unsigned char>(raw[4 * i])) |
                    (static_cast<uint32_t>(static_cast<unsigned char>(raw[4 * i + 1])) << 8) |
                    (static_cast<uint32_t>(static_cast<unsigned char>(raw[4 * i + 2])) << 16) |
                    (static_cast<uint32_t>(static_cast<unsigned char>(raw[4 * i + 3])) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    d[i] = std::clamp(static_cast<double>(f), 0.0, 1.0);
  }
  return Tensor::from({static_cast<int64_t>(T), static_cast<int64_t>(H), static_cast<int64_t>(W)}, std::move(d));
}

void write_dvc(const std::string& path, const Tensor& frames) {
  if (frames.rank() != 3) throw std::invalid_argument("write_dvc: expected frames [T,H,W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write("DVC1", 4);
  write_u32(os, static_cast<uint32_t>(frames.shape()[0]));
  write_u32(os, static_cast<uint32_t>(frames.shape()[1]));
  write_u32(os, static_cast<uint32_t>(frames.shape()[2]));
  for (int64_t i = 0; i < frames.numel(); ++i) {
    const float f = static_cast<float>(frames.flat(i));
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
}

}  // namespace dcim
