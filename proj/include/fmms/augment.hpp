#pragma once

#include <memory>
#include <vector>

#include "fmms/data.hpp"
#include "fmms/linalg.hpp"

namespace fmms {

// Scale factors for set-level augmentation. Must be nonempty, contain 1.0,
// and stay within [0.25, 2.0].
struct ScaleSet {
  std::vector<double> scales;

  static ScaleSet validated(std::vector<double> scales);
  static ScaleSet defaults() {
    return validated({0.50, 0.75, 1.00, 1.25, 1.50});
  }
};

// The composite resample-down-resample-up map for one (H, W, s) is linear in
// the pixels; it is materialized once as a sparse matrix together with its
// transpose (needed for analytic gradients).
class ScaleOp {
 public:
  ScaleOp(int height, int width, double scale);

  Vec apply(const Vec& pixels) const;
  Vec apply_transpose(const Vec& grad) const;
  bool is_identity() const { return identity_; }

 private:
  struct Sparse {
    // CSR over fixed row count; all rows have entries in [offsets[r], offsets[r+1]).
    std::vector<int> offsets;
    std::vector<int> cols;
    std::vector<double> weights;
    Vec apply(const Vec& x, int out_dim) const;
  };

  int dim_ = 0;
  bool identity_ = false;
  Sparse forward_;
  Sparse transpose_;
};

// Cached per (H, W, s); safe for concurrent readers.
std::shared_ptr<const ScaleOp> get_scale_op(int height, int width, double scale);

// Anti-aliased rescale by factor s and back to the original grid:
// area-average down / bilinear up for s < 1 and the converse for s > 1.
// s = 1 returns the input unchanged. Throws InvalidScaleError outside
// [0.25, 2.0].
ImageGrid scale_image(const ImageGrid& v, double s);

std::vector<ImageGrid> build_scale_set(const ImageGrid& v, const ScaleSet& s);

}  // namespace fmms
