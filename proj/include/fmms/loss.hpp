#pragma once

#include <memory>
#include <vector>

#include "fmms/augment.hpp"
#include "fmms/data.hpp"
#include "fmms/model.hpp"

namespace fmms {

// Full modal mutual loss pulls a mismatched pair closer while pushing the
// matched pair apart; the matched-only ablation keeps just the push term.
struct LossVariant {
  bool use_mismatched = true;
};

// score(v_mismatch, t) - score(v_match, t); matched-only drops the first
// term. Maximizing moves t away from its matched image.
double text_push_loss(const RetrievalModel& m, const TokenSeq& t,
                      const ImageGrid& v_match, const ImageGrid& v_mismatch,
                      LossVariant variant);

// Same loss with the two image embeddings fixed once, for candidate scans
// over token sequences. Scalar path identical to text_push_loss.
class TextPushObjective {
 public:
  TextPushObjective(const RetrievalModel& m, Embedding match_emb,
                    Embedding mismatch_emb, LossVariant variant)
      : model_(&m),
        match_emb_(std::move(match_emb)),
        mismatch_emb_(std::move(mismatch_emb)),
        variant_(variant) {}

  double operator()(const TokenSeq& t) const;

 private:
  const RetrievalModel* model_;
  Embedding match_emb_;
  Embedding mismatch_emb_;
  LossVariant variant_;
};

// Set-level image loss over the scale set:
//   sum_s [ sum_k score(g(v,s), t_k) - sum_m score(g(v,s), t'_m) ].
// Positive and negative caption sums accumulate separately so identical
// caption lists cancel exactly.
class ImageSetObjective {
 public:
  ImageSetObjective(const RetrievalModel& m,
                    const std::vector<TokenSeq>& adv_caps,
                    const std::vector<TokenSeq>& mis_caps, const ScaleSet& s,
                    LossVariant variant);

  double value(const ImageGrid& v) const;
  // Exact analytic pixel gradient, chained through the scale operator, the
  // tanh layer, and the cosine/bilinear score.
  Vec grad(const ImageGrid& v) const;

 private:
  const RetrievalModel* model_;
  std::vector<std::shared_ptr<const ScaleOp>> ops_;
  std::vector<Embedding> adv_embs_;
  std::vector<Embedding> mis_embs_;
  LossVariant variant_;
};

double image_set_loss(const RetrievalModel& m, const ImageGrid& v,
                      const std::vector<TokenSeq>& adv_caps,
                      const std::vector<TokenSeq>& mis_caps, const ScaleSet& s,
                      LossVariant variant);

// The literal product-of-normalized-sums form; defined for Aligned models
// only, where it equals the pairwise score sum up to rounding. Kept as the
// second route of the distributivity check.
double image_set_loss_product_form(const RetrievalModel& m, const ImageGrid& v,
                                   const std::vector<TokenSeq>& adv_caps,
                                   const std::vector<TokenSeq>& mis_caps,
                                   const ScaleSet& s, LossVariant variant);

Vec grad_image_set_loss(const RetrievalModel& m, const ImageGrid& v,
                        const std::vector<TokenSeq>& adv_caps,
                        const std::vector<TokenSeq>& mis_caps,
                        const ScaleSet& s, LossVariant variant);

}  // namespace fmms
