#include "fmms/attack.hpp"

#include <algorithm>
#include <cmath>

#include "fmms/error.hpp"

namespace fmms {

void ImageAttackBudget::check() const {
  if (!(alpha > 0.0) || !(alpha <= epsilon_v) || !(epsilon_v <= 1.0))
    throw InvalidConfigError("image budget: need 0 < alpha <= epsilon_v <= 1");
  if (steps < 1) throw InvalidConfigError("image budget: steps must be >= 1");
}

void TextAttackBudget::check() const {
  if (epsilon_t < 1) throw InvalidConfigError("text budget: epsilon_t must be >= 1");
  if (candidates_k < 1)
    throw InvalidConfigError("text budget: candidates_k must be >= 1");
}

ImageGrid pgd_ascend(const ImageGrid& v_clean, const ImageGrid& v_init,
                     const ImageAttackBudget& budget,
                     const std::function<Vec(const ImageGrid&)>& grad_fn) {
  budget.check();
  if (v_init.height != v_clean.height || v_init.width != v_clean.width)
    throw ShapeMismatchError("pgd: init/clean shape mismatch");
  const size_t n = v_clean.pixels.size();
  for (size_t p = 0; p < n; ++p) {
    if (std::abs(v_init.pixels[p] - v_clean.pixels[p]) >
        budget.epsilon_v + 1e-12)
      throw InvalidConfigError("pgd: v_init outside the clean-image ball");
  }

  ImageGrid v = v_init;
  for (int step = 0; step < budget.steps; ++step) {
    const Vec g = grad_fn(v);
    if (g.size() != n) throw ShapeMismatchError("pgd: gradient size mismatch");
    for (size_t p = 0; p < n; ++p) {
      if (g[p] > 0.0)
        v.pixels[p] += budget.alpha;
      else if (g[p] < 0.0)
        v.pixels[p] -= budget.alpha;
      const double lo = std::max(0.0, v_clean.pixels[p] - budget.epsilon_v);
      const double hi = std::min(1.0, v_clean.pixels[p] + budget.epsilon_v);
      v.pixels[p] = std::clamp(v.pixels[p], lo, hi);
    }
  }
  return v;
}

ImageGrid pgd_image_attack(const RetrievalModel& m, const ImageGrid& v_clean,
                           const ImageGrid& v_init,
                           const std::vector<TokenSeq>& adv_caps,
                           const std::vector<TokenSeq>& mis_caps,
                           const ScaleSet& s, const ImageAttackBudget& budget,
                           LossVariant variant) {
  const ImageSetObjective objective(m, adv_caps, mis_caps, s, variant);
  return pgd_ascend(v_clean, v_init, budget,
                    [&](const ImageGrid& v) { return objective.grad(v); });
}

std::vector<uint32_t> nearest_token_candidates(const RetrievalModel& m,
                                               uint32_t token, int k) {
  const uint32_t vocab = static_cast<uint32_t>(m.dims.vocab_size);
  if (token >= vocab)
    throw TokenOutOfRangeError("nearest_token_candidates: token out of range");
  Embedding query;
  query.values.assign(m.text_enc.token_table.row(static_cast<int>(token)),
                      m.text_enc.token_table.row(static_cast<int>(token)) +
                          m.dims.token_dim);
  std::vector<std::pair<double, uint32_t>> sims;
  sims.reserve(vocab - 1);
  Embedding other;
  for (uint32_t t = 0; t < vocab; ++t) {
    if (t == token) continue;
    other.values.assign(m.text_enc.token_table.row(static_cast<int>(t)),
                        m.text_enc.token_table.row(static_cast<int>(t)) +
                            m.dims.token_dim);
    sims.emplace_back(cosine(query, other), t);
  }
  std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  const size_t take = std::min<size_t>(static_cast<size_t>(k), sims.size());
  std::vector<uint32_t> out(take);
  for (size_t i = 0; i < take; ++i) out[i] = sims[i].second;
  return out;
}

TokenSeq substitution_attack_anchored(
    const RetrievalModel& m, const std::function<double(const TokenSeq&)>& loss,
    const TokenSeq& t_start, const TokenSeq& anchor,
    const TextAttackBudget& budget) {
  budget.check();
  const size_t len = anchor.tokens.size();
  if (t_start.tokens.size() != len)
    throw ShapeMismatchError("substitution: start/anchor length mismatch");
  if (static_cast<size_t>(budget.epsilon_t) > len)
    throw InvalidConfigError("substitution: epsilon_t exceeds caption length");

  TokenSeq cur = t_start;
  double cur_loss = loss(cur);
  int hamming = 0;
  for (size_t p = 0; p < len; ++p)
    if (cur.tokens[p] != anchor.tokens[p]) ++hamming;

  for (int round = 0; round < budget.epsilon_t; ++round) {
    double best_loss = cur_loss;
    size_t best_pos = len;
    uint32_t best_tok = 0;
    TokenSeq probe = cur;
    for (size_t pos = 0; pos < len; ++pos) {
      const uint32_t original = cur.tokens[pos];
      const int ham_without =
          hamming - (original != anchor.tokens[pos] ? 1 : 0);
      const auto candidates =
          nearest_token_candidates(m, original, budget.candidates_k);
      for (uint32_t cand : candidates) {
        const int new_ham =
            ham_without + (cand != anchor.tokens[pos] ? 1 : 0);
        if (new_ham > budget.epsilon_t) continue;
        probe.tokens[pos] = cand;
        const double l = loss(probe);
        if (l > best_loss) {
          best_loss = l;
          best_pos = pos;
          best_tok = cand;
        }
      }
      probe.tokens[pos] = original;
    }
    if (best_pos == len) break;  // no strictly improving swap
    hamming -= (cur.tokens[best_pos] != anchor.tokens[best_pos]) ? 1 : 0;
    cur.tokens[best_pos] = best_tok;
    hamming += (best_tok != anchor.tokens[best_pos]) ? 1 : 0;
    cur_loss = best_loss;
  }
  return cur;
}

TokenSeq substitution_attack(const RetrievalModel& m,
                             const std::function<double(const TokenSeq&)>& loss,
                             const TokenSeq& t_orig,
                             const TextAttackBudget& budget) {
  return substitution_attack_anchored(m, loss, t_orig, t_orig, budget);
}

MismatchSelection select_uniform_mismatch(const Dataset& d, uint32_t pair,
                                          Rng& rng) {
  const uint64_t n_images = d.num_images();
  if (n_images <= 1)
    throw DegenerateGalleryError("select: no image outside the pair");
  const uint64_t caption_pool = d.num_captions() - d.match_map[pair].size();
  if (caption_pool == 0)
    throw DegenerateGalleryError("select: no caption outside the ground truth");

  MismatchSelection sel;
  const uint64_t r = rng.below(n_images - 1);
  sel.image = static_cast<uint32_t>(r < pair ? r : r + 1);

  uint64_t c = rng.below(caption_pool);
  std::vector<uint32_t> gt = d.match_map[pair];
  std::sort(gt.begin(), gt.end());
  for (uint32_t g : gt)
    if (c >= g) ++c;
  sel.caption_ids = d.match_map[d.caption_owner[c]];
  return sel;
}

MutualRoundResult modal_mutual_round(
    const RetrievalModel& m, const Dataset& d, uint32_t pair,
    const ImageGrid& v_clean, const ImageGrid& v_init, uint32_t v_j,
    const std::vector<uint32_t>& mis_caption_ids,
    const ImageAttackBudget& image_budget, const TextAttackBudget& text_budget,
    const ScaleSet& s, LossVariant variant, const PipelineOptions& opts,
    const std::vector<TokenSeq>* reuse_adv_caps) {
  MutualRoundResult out;
  const Embedding emb_clean = encode_image(m, d.images[pair]);
  const Embedding emb_mismatch = encode_image(m, d.images[v_j]);

  // Adversarial caption set from the pair's ground-truth captions.
  if (reuse_adv_caps != nullptr) {
    out.adv_caps = *reuse_adv_caps;
  } else {
    out.adv_caps.reserve(d.match_map[pair].size());
    for (uint32_t cap_id : d.match_map[pair]) {
      TextPushObjective push(m, emb_clean, emb_mismatch, variant);
      out.adv_caps.push_back(
          substitution_attack(m, push, d.captions[cap_id], text_budget));
    }
  }

  std::vector<TokenSeq> mis_caps;
  mis_caps.reserve(mis_caption_ids.size());
  for (uint32_t cap_id : mis_caption_ids) mis_caps.push_back(d.captions[cap_id]);

  out.v_adv = pgd_image_attack(m, v_clean, v_init, out.adv_caps, mis_caps, s,
                               image_budget, variant);

  // Final text: push away from the adversarial image, toward the mismatch.
  const Embedding emb_adv = encode_image(m, out.v_adv);
  TextPushObjective push_final(m, emb_adv, emb_mismatch, variant);
  const TokenSeq& anchor = d.captions[d.first_caption(pair)];
  const TokenSeq& start =
      opts.tadv_from_adv_caption ? out.adv_caps.front() : anchor;
  out.t_adv =
      substitution_attack_anchored(m, push_final, start, anchor, text_budget);
  return out;
}

std::pair<ImageGrid, TokenSeq> run_baseline(
    BaselineKind kind, const RetrievalModel& surrogate, const Dataset& d,
    uint32_t pair, const ImageAttackBudget& image_budget,
    const TextAttackBudget& text_budget, const ScaleSet& s, uint64_t seed) {
  const LossVariant matched_only{false};
  const ImageGrid& v_clean = d.images[pair];
  const TokenSeq& t_clean = d.captions[d.first_caption(pair)];
  const ScaleSet no_augment = ScaleSet::validated({1.0});

  auto attack_image = [&]() {
    std::vector<TokenSeq> own_caps;
    own_caps.reserve(d.match_map[pair].size());
    for (uint32_t cap_id : d.match_map[pair])
      own_caps.push_back(d.captions[cap_id]);
    return pgd_image_attack(surrogate, v_clean, v_clean, own_caps, {},
                            no_augment, image_budget, matched_only);
  };
  auto attack_text = [&]() {
    const Embedding emb = encode_image(surrogate, v_clean);
    TextPushObjective push(surrogate, emb, emb, matched_only);
    return substitution_attack(surrogate, push, t_clean, text_budget);
  };

  switch (kind) {
    case BaselineKind::PgdOnly:
      return {attack_image(), t_clean};
    case BaselineKind::TextOnly:
      return {v_clean, attack_text()};
    case BaselineKind::Sep:
      return {attack_image(), attack_text()};
    case BaselineKind::SgaLike: {
      Rng rng(mix_seed({seed, pair, 0}));
      const MismatchSelection sel = select_uniform_mismatch(d, pair, rng);
      const MutualRoundResult round = modal_mutual_round(
          surrogate, d, pair, v_clean, v_clean, sel.image, sel.caption_ids,
          image_budget, text_budget, s, matched_only, PipelineOptions{},
          nullptr);
      return {round.v_adv, round.t_adv};
    }
  }
  throw InvalidConfigError("run_baseline: unknown kind");
}

}  // namespace fmms
