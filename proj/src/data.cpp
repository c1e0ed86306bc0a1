#include "fmms/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fmms/error.hpp"
#include "fmms/rng.hpp"
#include "fmms/serialize.hpp"

namespace fmms {

namespace {
constexpr char kDatasetMagic[8] = {'F', 'M', 'M', 'S', 'D', 'A', 'T', 'A'};
constexpr uint32_t kDatasetVersion = 1;
constexpr double kClassTokenFraction = 0.8;

bool bits_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}
}  // namespace

void Dataset::validate() {
  const size_t n = images.size();
  if (n == 0) throw InvalidConfigError("dataset: no images");
  if (captions_per_image < 1)
    throw InvalidConfigError("dataset: captions_per_image < 1");
  if (captions.size() != n * static_cast<size_t>(captions_per_image))
    throw InvalidConfigError("dataset: |T_all| != M * |V_all|");
  if (match_map.size() != n || class_of.size() != n)
    throw InvalidConfigError("dataset: per-image table size mismatch");

  caption_owner.assign(captions.size(), UINT32_MAX);
  for (size_t i = 0; i < n; ++i) {
    if (match_map[i].size() != static_cast<size_t>(captions_per_image))
      throw InvalidConfigError("dataset: match_map row of wrong length");
    for (uint32_t c : match_map[i]) {
      if (c >= captions.size())
        throw InvalidConfigError("dataset: caption index out of range");
      if (caption_owner[c] != UINT32_MAX)
        throw InvalidConfigError("dataset: caption owned by two images");
      caption_owner[c] = static_cast<uint32_t>(i);
    }
  }
  for (uint32_t o : caption_owner)
    if (o == UINT32_MAX) throw InvalidConfigError("dataset: orphan caption");

  for (const auto& img : images) {
    if (img.height < 2 || img.width < 2)
      throw InvalidConfigError("dataset: image smaller than 2x2");
    if (img.pixels.size() != static_cast<size_t>(img.size()))
      throw InvalidConfigError("dataset: pixel buffer size mismatch");
    for (double p : img.pixels)
      if (!(p >= 0.0 && p <= 1.0))
        throw InvalidConfigError("dataset: pixel outside [0,1]");
  }
  for (const auto& cap : captions) {
    if (cap.tokens.empty()) throw InvalidConfigError("dataset: empty caption");
    for (uint32_t t : cap.tokens)
      if (t >= vocab_size)
        throw TokenOutOfRangeError("dataset: token id >= vocab_size");
  }
}

Dataset generate_dataset(const DataConfig& cfg, uint64_t seed) {
  if (cfg.classes < 2) throw InvalidConfigError("generate: classes must be >= 2");
  if (cfg.images < cfg.classes)
    throw InvalidConfigError("generate: images must be >= classes");
  if (cfg.captions_per_image < 1)
    throw InvalidConfigError("generate: captions_per_image must be >= 1");
  if (cfg.height < 2 || cfg.width < 2)
    throw InvalidConfigError("generate: height and width must be >= 2");
  if (cfg.caption_length < 1)
    throw InvalidConfigError("generate: caption_length must be >= 1");
  if (cfg.class_token_pool_size < 1)
    throw InvalidConfigError("generate: class_token_pool_size must be >= 1");
  if (cfg.vocab_size < 4 * cfg.class_token_pool_size)
    throw InvalidConfigError(
        "generate: vocab_size must be >= 4 * class_token_pool_size");
  // Disjoint per-class pools plus a nonempty shared pool must fit.
  const int64_t pooled =
      static_cast<int64_t>(cfg.classes) * cfg.class_token_pool_size;
  if (pooled >= cfg.vocab_size)
    throw InvalidConfigError(
        "generate: classes * class_token_pool_size must leave common tokens");
  if (cfg.image_noise < 0.0)
    throw InvalidConfigError("generate: image_noise must be >= 0");

  Rng rng(seed);
  const int hw = cfg.height * cfg.width;
  const int common_base = static_cast<int>(pooled);
  const int common_size = cfg.vocab_size - common_base;

  std::vector<Vec> prototypes(cfg.classes);
  for (auto& proto : prototypes) {
    proto.resize(hw);
    for (double& p : proto) p = rng.unit();
  }

  Dataset d;
  d.captions_per_image = cfg.captions_per_image;
  d.vocab_size = static_cast<uint32_t>(cfg.vocab_size);
  d.images.resize(cfg.images);
  d.class_of.resize(cfg.images);
  d.match_map.resize(cfg.images);
  d.captions.resize(static_cast<size_t>(cfg.images) * cfg.captions_per_image);

  for (int i = 0; i < cfg.images; ++i) {
    const int cls = i % cfg.classes;
    d.class_of[i] = static_cast<uint32_t>(cls);
    ImageGrid& img = d.images[i];
    img.height = cfg.height;
    img.width = cfg.width;
    img.pixels.resize(hw);
    for (int p = 0; p < hw; ++p) {
      const double noise = (2.0 * rng.unit() - 1.0) * cfg.image_noise;
      img.pixels[p] = std::clamp(prototypes[cls][p] + noise, 0.0, 1.0);
    }
  }

  for (int i = 0; i < cfg.images; ++i) {
    const int cls = i % cfg.classes;
    const int pool_base = cls * cfg.class_token_pool_size;
    d.match_map[i].resize(cfg.captions_per_image);
    for (int m = 0; m < cfg.captions_per_image; ++m) {
      const uint32_t cap_idx =
          static_cast<uint32_t>(i) * cfg.captions_per_image + m;
      d.match_map[i][m] = cap_idx;
      TokenSeq& cap = d.captions[cap_idx];
      cap.tokens.resize(cfg.caption_length);
      for (int t = 0; t < cfg.caption_length; ++t) {
        if (rng.unit() < kClassTokenFraction) {
          cap.tokens[t] = static_cast<uint32_t>(
              pool_base + rng.below(cfg.class_token_pool_size));
        } else {
          cap.tokens[t] =
              static_cast<uint32_t>(common_base + rng.below(common_size));
        }
      }
    }
  }

  d.validate();
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  BinaryWriter w(path);
  w.magic(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<uint32_t>(d.images.front().height));
  w.u32(static_cast<uint32_t>(d.images.front().width));
  w.u32(static_cast<uint32_t>(d.images.size()));
  w.u32(static_cast<uint32_t>(d.captions.size()));
  w.u32(static_cast<uint32_t>(d.captions_per_image));
  w.u32(d.vocab_size);
  w.u32_array(d.class_of);
  for (const auto& img : d.images) w.f64_array(img.pixels);
  for (const auto& cap : d.captions) {
    w.u32(static_cast<uint32_t>(cap.tokens.size()));
    w.u32_array(cap.tokens);
  }
  for (const auto& row : d.match_map) w.u32_array(row);
  w.finish();
}

Dataset load_dataset(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kDatasetMagic, kDatasetVersion);
  const uint32_t height = r.u32();
  const uint32_t width = r.u32();
  const uint32_t n_images = r.u32();
  const uint32_t n_captions = r.u32();
  const uint32_t m = r.u32();

  Dataset d;
  d.vocab_size = r.u32();
  d.captions_per_image = static_cast<int>(m);
  d.class_of = r.u32_array(n_images);
  d.images.resize(n_images);
  for (auto& img : d.images) {
    img.height = static_cast<int>(height);
    img.width = static_cast<int>(width);
    img.pixels = r.f64_array(static_cast<size_t>(height) * width);
  }
  d.captions.resize(n_captions);
  for (auto& cap : d.captions) {
    const uint32_t len = r.u32();
    if (len == 0 || len > (1u << 20))
      throw IoError("dataset: implausible caption length");
    cap.tokens = r.u32_array(len);
  }
  d.match_map.resize(n_images);
  for (auto& row : d.match_map) row = r.u32_array(m);
  r.expect_eof();
  d.validate();
  return d;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.images.size() != b.images.size() ||
      a.captions.size() != b.captions.size() ||
      a.captions_per_image != b.captions_per_image ||
      a.vocab_size != b.vocab_size || a.class_of != b.class_of ||
      a.match_map != b.match_map)
    return false;
  for (size_t i = 0; i < a.images.size(); ++i) {
    if (a.images[i].height != b.images[i].height ||
        a.images[i].width != b.images[i].width ||
        !bits_equal(a.images[i].pixels, b.images[i].pixels))
      return false;
  }
  for (size_t i = 0; i < a.captions.size(); ++i)
    if (a.captions[i].tokens != b.captions[i].tokens) return false;
  return true;
}

}  // namespace fmms
