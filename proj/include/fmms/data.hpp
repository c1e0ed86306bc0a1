#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmms/linalg.hpp"

namespace fmms {

// Grayscale image with pixel intensities in [0, 1], row-major.
struct ImageGrid {
  int height = 0;
  int width = 0;
  Vec pixels;

  int size() const { return height * width; }
};

// Caption as a flat sequence of token ids.
struct TokenSeq {
  std::vector<uint32_t> tokens;
};

struct DataConfig {
  int classes = 20;
  int images = 200;
  int captions_per_image = 5;
  int height = 16;
  int width = 16;
  int vocab_size = 256;
  int caption_length = 8;
  double image_noise = 0.15;
  int class_token_pool_size = 12;
};

// Paired image-text gallery. Captions of image i occupy match_map[i]; every
// caption belongs to exactly one image.
struct Dataset {
  std::vector<ImageGrid> images;
  std::vector<TokenSeq> captions;
  int captions_per_image = 0;
  std::vector<std::vector<uint32_t>> match_map;
  std::vector<uint32_t> caption_owner;  // inverse of match_map
  std::vector<uint32_t> class_of;
  uint32_t vocab_size = 0;

  size_t num_images() const { return images.size(); }
  size_t num_captions() const { return captions.size(); }
  // The pair's canonical caption: first ground-truth caption of image i.
  uint32_t first_caption(uint32_t image) const { return match_map[image][0]; }
  bool is_ground_truth(uint32_t image, uint32_t caption) const {
    for (uint32_t c : match_map[image])
      if (c == caption) return true;
    return false;
  }

  // Rebuilds caption_owner and checks all structural invariants.
  void validate();
};

// Class-structured synthetic gallery: per class a fixed prototype image and
// a disjoint token pool; images add uniform noise, captions mix class and
// common tokens 80/20. Deterministic in (cfg, seed).
Dataset generate_dataset(const DataConfig& cfg, uint64_t seed);

void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

bool datasets_equal(const Dataset& a, const Dataset& b);

}  // namespace fmms
