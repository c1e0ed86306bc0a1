#include "fmms/fmms.hpp"

#include <algorithm>
#include <cstring>

#include "fmms/error.hpp"

namespace fmms {

void SearchConfig::check() const {
  if (n_tr < 1 || n_ir < 1)
    throw InvalidConfigError("search: N_tr and N_ir must be >= 1");
  if (rounds < 1) throw InvalidConfigError("search: rounds must be >= 1");
}

bool outcomes_equal(const AttackOutcome& a, const AttackOutcome& b) {
  if (a.rounds_used != b.rounds_used || a.tr_success != b.tr_success ||
      a.ir_success != b.ir_success || a.target_queries != b.target_queries)
    return false;
  if (a.v_adv.height != b.v_adv.height || a.v_adv.width != b.v_adv.width ||
      a.v_adv.pixels.size() != b.v_adv.pixels.size())
    return false;
  if (!a.v_adv.pixels.empty() &&
      std::memcmp(a.v_adv.pixels.data(), b.v_adv.pixels.data(),
                  a.v_adv.pixels.size() * sizeof(double)) != 0)
    return false;
  return a.t_adv.tokens == b.t_adv.tokens;
}

std::pair<bool, bool> check_attack_success(const Ranker& target,
                                           const Dataset& d, uint32_t pair,
                                           const ImageGrid& v_adv,
                                           const TokenSeq& t_adv) {
  const uint32_t top_caption = target.rank(v_adv).top1();
  const bool tr = !d.is_ground_truth(pair, top_caption);
  const uint32_t top_image = target.rank(t_adv).top1();
  const bool ir = top_image != pair;
  return {tr, ir};
}

std::pair<bool, bool> check_attack_success(const RetrievalModel& target,
                                           const Dataset& d, uint32_t pair,
                                           const ImageGrid& v_adv,
                                           const TokenSeq& t_adv) {
  return check_attack_success(Ranker(target, d), d, pair, v_adv, t_adv);
}

SearchSpaces build_search_spaces(const Ranker& target, const Dataset& d,
                                 const ImageGrid& v_adv, const TokenSeq& t_adv,
                                 const SearchConfig& cfg) {
  cfg.check();
  const size_t n_images = d.num_images();
  const size_t n_captions = d.num_captions();
  const size_t take_tr = cfg.strategy == SearchStrategy::Full
                             ? n_images
                             : std::min<size_t>(cfg.n_tr, n_images);
  const size_t take_ir = cfg.strategy == SearchStrategy::Full
                             ? n_captions
                             : std::min<size_t>(cfg.n_ir, n_captions);

  SearchSpaces spaces;
  const RankedList images = target.rank(t_adv);
  spaces.b_tr.reserve(take_tr);
  for (size_t i = 0; i < take_tr; ++i)
    spaces.b_tr.push_back(images.entries[i].first);
  const RankedList captions = target.rank(v_adv);
  spaces.b_ir.reserve(take_ir);
  for (size_t i = 0; i < take_ir; ++i)
    spaces.b_ir.push_back(captions.entries[i].first);
  return spaces;
}

MismatchSelection select_mismatched(const SearchSpaces& spaces, const Dataset& d,
                                    uint32_t pair, Rng& rng) {
  MismatchSelection sel;

  std::vector<uint32_t> image_cands;
  image_cands.reserve(spaces.b_tr.size());
  for (uint32_t i : spaces.b_tr)
    if (i != pair) image_cands.push_back(i);
  if (!image_cands.empty()) {
    sel.image = image_cands[rng.below(image_cands.size())];
  } else {
    const uint64_t n_images = d.num_images();
    if (n_images <= 1)
      throw DegenerateGalleryError("select: no image outside the pair");
    const uint64_t r = rng.below(n_images - 1);
    sel.image = static_cast<uint32_t>(r < pair ? r : r + 1);
  }

  std::vector<uint32_t> caption_cands;
  caption_cands.reserve(spaces.b_ir.size());
  for (uint32_t c : spaces.b_ir)
    if (!d.is_ground_truth(pair, c)) caption_cands.push_back(c);
  uint32_t caption;
  if (!caption_cands.empty()) {
    caption = caption_cands[rng.below(caption_cands.size())];
  } else {
    const uint64_t pool = d.num_captions() - d.match_map[pair].size();
    if (pool == 0)
      throw DegenerateGalleryError("select: no caption outside the ground truth");
    uint64_t c = rng.below(pool);
    std::vector<uint32_t> gt = d.match_map[pair];
    std::sort(gt.begin(), gt.end());
    for (uint32_t g : gt)
      if (c >= g) ++c;
    caption = static_cast<uint32_t>(c);
  }
  sel.caption_ids = d.match_map[d.caption_owner[caption]];
  return sel;
}

namespace {

bool stop_satisfied(StopCondition stop, bool tr, bool ir) {
  switch (stop) {
    case StopCondition::Either:
      return tr || ir;
    case StopCondition::Both:
      return tr && ir;
    case StopCondition::ImageOnly:
      return tr;
    case StopCondition::TextOnly:
      return ir;
  }
  return false;
}

}  // namespace

AttackOutcome fmms_attack(const RetrievalModel& surrogate, const Ranker& target,
                          const Dataset& d, uint32_t pair,
                          const ImageAttackBudget& image_budget,
                          const TextAttackBudget& text_budget, const ScaleSet& s,
                          const SearchConfig& search, const PipelineOptions& opts,
                          LossVariant variant, uint64_t seed) {
  search.check();
  if (pair >= d.num_images())
    throw InvalidConfigError("fmms_attack: pair index out of range");

  const ImageGrid& v_clean = d.images[pair];

  // Round 0: mismatch drawn uniformly from the full gallery.
  Rng rng0(mix_seed({seed, pair, 0}));
  MismatchSelection sel = select_uniform_mismatch(d, pair, rng0);
  MutualRoundResult round =
      modal_mutual_round(surrogate, d, pair, v_clean, v_clean, sel.image,
                         sel.caption_ids, image_budget, text_budget, s, variant,
                         opts, nullptr);

  AttackOutcome out;
  out.target_queries = 0;

  for (int t = 1; t < search.rounds; ++t) {
    const auto [tr, ir] =
        check_attack_success(target, d, pair, round.v_adv, round.t_adv);
    out.target_queries += 2;
    if (stop_satisfied(search.stop, tr, ir)) {
      out.v_adv = std::move(round.v_adv);
      out.t_adv = std::move(round.t_adv);
      out.rounds_used = t;
      out.tr_success = tr;
      out.ir_success = ir;
      return out;
    }

    const SearchSpaces spaces =
        build_search_spaces(target, d, round.v_adv, round.t_adv, search);
    out.target_queries += 2;
    Rng rng_t(mix_seed({seed, pair, static_cast<uint64_t>(t)}));
    sel = select_mismatched(spaces, d, pair, rng_t);

    // Warm-start the image from the current adversarial image unless the
    // restart switch is set; the ball stays anchored at the clean image.
    round = modal_mutual_round(
        surrogate, d, pair, v_clean, opts.image_restart ? v_clean : round.v_adv,
        sel.image, sel.caption_ids, image_budget, text_budget, s, variant, opts,
        search.reuse_adv_caps ? &round.adv_caps : nullptr);
  }

  const auto [tr, ir] =
      check_attack_success(target, d, pair, round.v_adv, round.t_adv);
  out.target_queries += 2;
  out.v_adv = std::move(round.v_adv);
  out.t_adv = std::move(round.t_adv);
  out.rounds_used = search.rounds;
  out.tr_success = tr;
  out.ir_success = ir;
  return out;
}

AttackOutcome fmms_attack(const RetrievalModel& surrogate,
                          const RetrievalModel& target, const Dataset& d,
                          uint32_t pair, const ImageAttackBudget& image_budget,
                          const TextAttackBudget& text_budget, const ScaleSet& s,
                          const SearchConfig& search, const PipelineOptions& opts,
                          LossVariant variant, uint64_t seed) {
  const Ranker ranker(target, d);
  return fmms_attack(surrogate, ranker, d, pair, image_budget, text_budget, s,
                     search, opts, variant, seed);
}

}  // namespace fmms
