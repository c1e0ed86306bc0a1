#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fmms/error.hpp"

namespace fmms {

// Explicit little-endian binary writer/reader shared by the dataset and
// checkpoint containers. Doubles travel as raw IEEE-754 bit patterns so
// round trips are bit-exact.

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path) : path_(path) {
    if (path.empty()) throw IoError("empty path");
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open for writing: " + path);
  }

  void magic(const char tag[8]) { raw(tag, 8); }

  void u32(uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, 4);
  }

  void u64(uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, 8);
  }

  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }

  void f64_array(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }

  void u32_array(const std::vector<uint32_t>& v) {
    for (uint32_t x : v) u32(x);
  }

  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed: " + path_);
    out_.close();
  }

 private:
  void raw(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_);
  }

  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path) : path_(path) {
    if (path.empty()) throw IoError("empty path");
    in_.open(path, std::ios::binary);
    if (!in_) throw IoError("cannot open for reading: " + path);
  }

  // Checks the 8-byte magic tag and a u32 format version.
  void expect_magic(const char tag[8], uint32_t version) {
    char got[8];
    raw(got, 8);
    if (std::memcmp(got, tag, 8) != 0)
      throw FormatVersionMismatchError("bad magic in " + path_);
    const uint32_t v = u32();
    if (v != version)
      throw FormatVersionMismatchError("unsupported format version " +
                                       std::to_string(v) + " in " + path_);
  }

  uint32_t u32() {
    unsigned char b[4];
    raw(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }

  uint64_t u64() {
    unsigned char b[8];
    raw(b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::vector<double> f64_array(size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }

  std::vector<uint32_t> u32_array(size_t n) {
    std::vector<uint32_t> v(n);
    for (auto& x : v) x = u32();
    return v;
  }

  void expect_eof() {
    in_.peek();
    if (!in_.eof()) throw IoError("trailing bytes in " + path_);
  }

 private:
  void raw(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n)
      throw IoError("truncated file: " + path_);
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace fmms
