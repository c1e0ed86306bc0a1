#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "fmms/augment.hpp"
#include "fmms/data.hpp"
#include "fmms/loss.hpp"
#include "fmms/model.hpp"
#include "fmms/rng.hpp"

namespace fmms {

// L-inf budget for the image attack. The ball is always centered on the
// clean image, regardless of warm starts.
struct ImageAttackBudget {
  double epsilon_v = 2.0 / 255.0;
  double alpha = 0.5 / 255.0;
  int steps = 10;

  void check() const;
};

struct TextAttackBudget {
  int epsilon_t = 1;      // max substituted positions
  int candidates_k = 10;  // nearest-neighbor candidates per position

  void check() const;
};

// Options of the Eq.-chain pipeline that are attack-level rather than
// search-level concerns.
struct PipelineOptions {
  bool image_restart = false;          // restart rounds from the clean image
  bool tadv_from_adv_caption = false;  // seed the final text search at t'_1
};

// Sign-step projected gradient ascent. sign(0) = 0, projection onto the
// L-inf ball around v_clean intersected with [0,1].
ImageGrid pgd_ascend(const ImageGrid& v_clean, const ImageGrid& v_init,
                     const ImageAttackBudget& budget,
                     const std::function<Vec(const ImageGrid&)>& grad_fn);

ImageGrid pgd_image_attack(const RetrievalModel& m, const ImageGrid& v_clean,
                           const ImageGrid& v_init,
                           const std::vector<TokenSeq>& adv_caps,
                           const std::vector<TokenSeq>& mis_caps,
                           const ScaleSet& s, const ImageAttackBudget& budget,
                           LossVariant variant);

// candidates_k nearest tokens to `token` by cosine over token-table rows,
// excluding the token itself; ties broken by ascending id.
std::vector<uint32_t> nearest_token_candidates(const RetrievalModel& m,
                                               uint32_t token, int k);

// Greedy swap search: up to epsilon_t rounds, each scanning all
// (position, candidate) pairs and applying the single best strictly
// improving swap. Earlier positions win ties. Output stays within Hamming
// epsilon_t of t_orig.
TokenSeq substitution_attack(const RetrievalModel& m,
                             const std::function<double(const TokenSeq&)>& loss,
                             const TokenSeq& t_orig,
                             const TextAttackBudget& budget);

// Same search started from t_start but constrained to the Hamming ball
// around `anchor`.
TokenSeq substitution_attack_anchored(
    const RetrievalModel& m, const std::function<double(const TokenSeq&)>& loss,
    const TokenSeq& t_start, const TokenSeq& anchor,
    const TextAttackBudget& budget);

// Uniform mismatch draw over the full gallery: an image other than the
// pair's own, then a caption outside the pair's ground truth expanded to its
// owner's full caption set. Draw order: image, then caption.
struct MismatchSelection {
  uint32_t image;
  std::vector<uint32_t> caption_ids;  // the owner's M captions
};
MismatchSelection select_uniform_mismatch(const Dataset& d, uint32_t pair,
                                          Rng& rng);

// One pass of the adversarial generation chain: adversarial caption set,
// then the set-level image attack, then the final text search.
struct MutualRoundResult {
  ImageGrid v_adv;
  TokenSeq t_adv;
  std::vector<TokenSeq> adv_caps;
};
MutualRoundResult modal_mutual_round(
    const RetrievalModel& m, const Dataset& d, uint32_t pair,
    const ImageGrid& v_clean, const ImageGrid& v_init, uint32_t v_j,
    const std::vector<uint32_t>& mis_caption_ids,
    const ImageAttackBudget& image_budget, const TextAttackBudget& text_budget,
    const ScaleSet& s, LossVariant variant, const PipelineOptions& opts,
    const std::vector<TokenSeq>* reuse_adv_caps);

enum class BaselineKind { PgdOnly, TextOnly, Sep, SgaLike };

// Single-round reference attacks. PgdOnly/TextOnly/Sep are unimodal
// matched-only attacks without augmentation; SgaLike is the full chain with
// augmentation but matched-only losses and no feedback.
std::pair<ImageGrid, TokenSeq> run_baseline(
    BaselineKind kind, const RetrievalModel& surrogate, const Dataset& d,
    uint32_t pair, const ImageAttackBudget& image_budget,
    const TextAttackBudget& text_budget, const ScaleSet& s, uint64_t seed);

}  // namespace fmms
