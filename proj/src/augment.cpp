#include "fmms/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <tuple>

#include "fmms/error.hpp"

namespace fmms {

namespace {

constexpr double kMinScale = 0.25;
constexpr double kMaxScale = 2.0;

struct Weights1D {
  // weights[out] = list of (in_index, weight); each row sums to 1.
  std::vector<std::vector<std::pair<int, double>>> rows;
};

// Exact area overlap between output cell i (span [i*r, (i+1)*r)) and input
// cells, normalized by r. Requires n_out <= n_in.
Weights1D area_weights(int n_in, int n_out) {
  Weights1D w;
  w.rows.resize(n_out);
  const double r = static_cast<double>(n_in) / n_out;
  for (int i = 0; i < n_out; ++i) {
    const double lo = i * r;
    const double hi = (i + 1) * r;
    const int j_first = static_cast<int>(std::floor(lo));
    const int j_last = std::min(n_in - 1, static_cast<int>(std::ceil(hi)) - 1);
    for (int j = j_first; j <= j_last; ++j) {
      const double overlap =
          std::min(hi, static_cast<double>(j + 1)) - std::max(lo, static_cast<double>(j));
      if (overlap > 0.0) w.rows[i].emplace_back(j, overlap / r);
    }
  }
  return w;
}

// Half-pixel-centered linear interpolation, edge-clamped.
Weights1D bilinear_weights(int n_in, int n_out) {
  Weights1D w;
  w.rows.resize(n_out);
  const double r = static_cast<double>(n_in) / n_out;
  for (int i = 0; i < n_out; ++i) {
    double x = (i + 0.5) * r - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(n_in - 1));
    const int j0 = static_cast<int>(std::floor(x));
    const int j1 = std::min(j0 + 1, n_in - 1);
    const double f = x - j0;
    if (j1 == j0 || f == 0.0) {
      w.rows[i].emplace_back(j0, 1.0);
    } else {
      w.rows[i].emplace_back(j0, 1.0 - f);
      w.rows[i].emplace_back(j1, f);
    }
  }
  return w;
}

// One resample stage as a sparse map from (h_in x w_in) to (h_out x w_out):
// separable product of row and column weights.
struct Stage {
  int rows = 0;
  int cols = 0;
  std::vector<std::vector<std::pair<int, double>>> entries;  // per output pixel
};

Stage make_stage(int h_in, int w_in, int h_out, int w_out, bool area) {
  const Weights1D wr = area ? area_weights(h_in, h_out) : bilinear_weights(h_in, h_out);
  const Weights1D wc = area ? area_weights(w_in, w_out) : bilinear_weights(w_in, w_out);
  Stage s;
  s.rows = h_out * w_out;
  s.cols = h_in * w_in;
  s.entries.resize(s.rows);
  for (int ro = 0; ro < h_out; ++ro) {
    for (int co = 0; co < w_out; ++co) {
      auto& row = s.entries[ro * w_out + co];
      for (const auto& [ri, vr] : wr.rows[ro])
        for (const auto& [ci, vc] : wc.rows[co])
          row.emplace_back(ri * w_in + ci, vr * vc);
    }
  }
  return s;
}

// second * first as a sparse product.
Stage compose(const Stage& second, const Stage& first) {
  Stage out;
  out.rows = second.rows;
  out.cols = first.cols;
  out.entries.resize(out.rows);
  std::vector<double> acc(first.cols, 0.0);
  std::vector<int> touched;
  for (int r = 0; r < second.rows; ++r) {
    touched.clear();
    for (const auto& [mid, w2] : second.entries[r]) {
      for (const auto& [c, w1] : first.entries[mid]) {
        if (acc[c] == 0.0) touched.push_back(c);
        acc[c] += w2 * w1;
      }
    }
    std::sort(touched.begin(), touched.end());
    auto& row = out.entries[r];
    row.reserve(touched.size());
    for (int c : touched) {
      row.emplace_back(c, acc[c]);
      acc[c] = 0.0;
    }
  }
  return out;
}

}  // namespace

ScaleSet ScaleSet::validated(std::vector<double> scales) {
  if (scales.empty()) throw InvalidConfigError("scale set must be nonempty");
  bool has_one = false;
  for (double s : scales) {
    if (!(s >= kMinScale && s <= kMaxScale))
      throw InvalidScaleError("scale outside [0.25, 2.0]");
    if (s == 1.0) has_one = true;
  }
  if (!has_one) throw InvalidConfigError("scale set must contain 1.0");
  return ScaleSet{std::move(scales)};
}

Vec ScaleOp::Sparse::apply(const Vec& x, int out_dim) const {
  Vec y(out_dim, 0.0);
  for (int r = 0; r < out_dim; ++r) {
    double s = 0.0;
    for (int k = offsets[r]; k < offsets[r + 1]; ++k) s += weights[k] * x[cols[k]];
    y[r] = s;
  }
  return y;
}

ScaleOp::ScaleOp(int height, int width, double scale) {
  if (!(scale >= kMinScale && scale <= kMaxScale))
    throw InvalidScaleError("scale outside [0.25, 2.0]");
  dim_ = height * width;
  if (scale == 1.0) {
    identity_ = true;
    return;
  }
  const int h2 = std::max(1L, std::lround(height * scale));
  const int w2 = std::max(1L, std::lround(width * scale));
  // Down-then-up for s < 1, up-then-down for s > 1; the anti-aliasing
  // (area) filter is always on the downscale leg.
  const Stage first = make_stage(height, width, h2, w2, /*area=*/scale < 1.0);
  const Stage second = make_stage(h2, w2, height, width, /*area=*/scale > 1.0);
  const Stage full = compose(second, first);

  auto pack = [](const Stage& s, Sparse& out) {
    out.offsets.assign(s.rows + 1, 0);
    size_t nnz = 0;
    for (const auto& row : s.entries) nnz += row.size();
    out.cols.reserve(nnz);
    out.weights.reserve(nnz);
    for (int r = 0; r < s.rows; ++r) {
      out.offsets[r] = static_cast<int>(out.cols.size());
      for (const auto& [c, w] : s.entries[r]) {
        out.cols.push_back(c);
        out.weights.push_back(w);
      }
    }
    out.offsets[s.rows] = static_cast<int>(out.cols.size());
  };
  pack(full, forward_);

  Stage t;
  t.rows = full.cols;
  t.cols = full.rows;
  t.entries.resize(t.rows);
  for (int r = 0; r < full.rows; ++r)
    for (const auto& [c, w] : full.entries[r]) t.entries[c].emplace_back(r, w);
  pack(t, transpose_);
}

Vec ScaleOp::apply(const Vec& pixels) const {
  if (identity_) return pixels;
  return forward_.apply(pixels, dim_);
}

Vec ScaleOp::apply_transpose(const Vec& grad) const {
  if (identity_) return grad;
  return transpose_.apply(grad, dim_);
}

std::shared_ptr<const ScaleOp> get_scale_op(int height, int width, double scale) {
  using Key = std::tuple<int, int, uint64_t>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const ScaleOp>> cache;

  uint64_t bits;
  std::memcpy(&bits, &scale, 8);
  const Key key{height, width, bits};
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto op = std::make_shared<const ScaleOp>(height, width, scale);
  std::lock_guard<std::mutex> lock(mu);
  auto [it, inserted] = cache.emplace(key, std::move(op));
  return it->second;
}

ImageGrid scale_image(const ImageGrid& v, double s) {
  if (!(s >= kMinScale && s <= kMaxScale))
    throw InvalidScaleError("scale outside [0.25, 2.0]");
  if (s == 1.0) return v;
  const auto op = get_scale_op(v.height, v.width, s);
  ImageGrid out;
  out.height = v.height;
  out.width = v.width;
  out.pixels = op->apply(v.pixels);
  return out;
}

std::vector<ImageGrid> build_scale_set(const ImageGrid& v, const ScaleSet& s) {
  std::vector<ImageGrid> out;
  out.reserve(s.scales.size());
  for (double scale : s.scales) out.push_back(scale_image(v, scale));
  return out;
}

}  // namespace fmms
