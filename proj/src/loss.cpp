#include "fmms/loss.hpp"

#include <cmath>

#include "fmms/error.hpp"

namespace fmms {

namespace {

void check_caption_lists(const std::vector<TokenSeq>& adv_caps,
                         const std::vector<TokenSeq>& mis_caps,
                         LossVariant variant) {
  if (adv_caps.empty())
    throw ShapeMismatchError("image_set_loss: empty adversarial caption list");
  if (variant.use_mismatched && mis_caps.size() != adv_caps.size())
    throw ShapeMismatchError("image_set_loss: caption lists of unequal length");
}

// d score(e, u) / d e with u fixed.
Vec score_grad_wrt_image(const RetrievalModel& m, const Embedding& e,
                         const Embedding& u) {
  const double ne = norm2(e.values);
  const double nu = norm2(u.values);
  if (!(ne > kZeroNormThreshold) || !(nu > kZeroNormThreshold))
    throw ZeroVectorError("score gradient: vector norm below 1e-12");
  const size_t d = e.values.size();
  Vec g(d);
  if (m.kind == ModelKind::Aligned) {
    const double s = dot(e.values, u.values) / (ne * nu);
    for (size_t k = 0; k < d; ++k)
      g[k] = (u.values[k] / nu - s * e.values[k] / ne) / ne;
  } else {
    Vec u_hat(d), e_hat(d);
    for (size_t k = 0; k < d; ++k) {
      u_hat[k] = u.values[k] / nu;
      e_hat[k] = e.values[k] / ne;
    }
    const Vec wu = matvec(m.bilinear, u_hat);
    const double s = dot(e_hat, wu);
    for (size_t k = 0; k < d; ++k) g[k] = (wu[k] - s * e_hat[k]) / ne;
  }
  return g;
}

struct EncodeState {
  Vec hidden;
  Embedding emb;
};

EncodeState encode_pixels(const RetrievalModel& m, const Vec& pixels) {
  EncodeState st;
  Vec z = matvec(m.image_enc.w1, pixels);
  for (size_t i = 0; i < z.size(); ++i)
    z[i] = std::tanh(z[i] + m.image_enc.b1[i]);
  st.emb.values = matvec(m.image_enc.w2, z);
  st.hidden = std::move(z);
  return st;
}

}  // namespace

double TextPushObjective::operator()(const TokenSeq& t) const {
  const Embedding et = encode_text(*model_, t);
  if (!variant_.use_mismatched)
    return -score_embeddings(*model_, match_emb_, et);
  return score_embeddings(*model_, mismatch_emb_, et) -
         score_embeddings(*model_, match_emb_, et);
}

double text_push_loss(const RetrievalModel& m, const TokenSeq& t,
                      const ImageGrid& v_match, const ImageGrid& v_mismatch,
                      LossVariant variant) {
  TextPushObjective obj(m, encode_image(m, v_match), encode_image(m, v_mismatch),
                        variant);
  return obj(t);
}

ImageSetObjective::ImageSetObjective(const RetrievalModel& m,
                                     const std::vector<TokenSeq>& adv_caps,
                                     const std::vector<TokenSeq>& mis_caps,
                                     const ScaleSet& s, LossVariant variant)
    : model_(&m), variant_(variant) {
  check_caption_lists(adv_caps, mis_caps, variant);
  ops_.reserve(s.scales.size());
  for (double scale : s.scales)
    ops_.push_back(get_scale_op(m.dims.height, m.dims.width, scale));
  adv_embs_.reserve(adv_caps.size());
  for (const auto& cap : adv_caps) adv_embs_.push_back(encode_text(m, cap));
  if (variant.use_mismatched) {
    mis_embs_.reserve(mis_caps.size());
    for (const auto& cap : mis_caps) mis_embs_.push_back(encode_text(m, cap));
  }
}

double ImageSetObjective::value(const ImageGrid& v) const {
  if (v.height != model_->dims.height || v.width != model_->dims.width)
    throw ShapeMismatchError("image_set_loss: grid does not match model dims");
  double pos = 0.0;
  double neg = 0.0;
  for (const auto& op : ops_) {
    const Vec pixels = op->apply(v.pixels);
    const EncodeState st = encode_pixels(*model_, pixels);
    if (variant_.use_mismatched)
      for (const auto& u : mis_embs_) pos += score_embeddings(*model_, st.emb, u);
    for (const auto& u : adv_embs_) neg += score_embeddings(*model_, st.emb, u);
  }
  return pos - neg;
}

Vec ImageSetObjective::grad(const ImageGrid& v) const {
  if (v.height != model_->dims.height || v.width != model_->dims.width)
    throw ShapeMismatchError("image_set_loss: grid does not match model dims");
  const int dim = model_->dims.embed_dim;
  Vec total(v.pixels.size(), 0.0);
  for (const auto& op : ops_) {
    const Vec pixels = op->apply(v.pixels);
    const EncodeState st = encode_pixels(*model_, pixels);
    Vec g_pos(dim, 0.0), g_neg(dim, 0.0);
    if (variant_.use_mismatched)
      for (const auto& u : mis_embs_) {
        const Vec g = score_grad_wrt_image(*model_, st.emb, u);
        for (int k = 0; k < dim; ++k) g_pos[k] += g[k];
      }
    for (const auto& u : adv_embs_) {
      const Vec g = score_grad_wrt_image(*model_, st.emb, u);
      for (int k = 0; k < dim; ++k) g_neg[k] += g[k];
    }
    Vec g_emb(dim);
    for (int k = 0; k < dim; ++k) g_emb[k] = g_pos[k] - g_neg[k];

    Vec g_hidden = matvec_t(model_->image_enc.w2, g_emb);
    for (size_t k = 0; k < g_hidden.size(); ++k)
      g_hidden[k] *= 1.0 - st.hidden[k] * st.hidden[k];
    const Vec g_pixels = matvec_t(model_->image_enc.w1, g_hidden);
    const Vec g_input = op->apply_transpose(g_pixels);
    for (size_t k = 0; k < total.size(); ++k) total[k] += g_input[k];
  }
  return total;
}

double image_set_loss(const RetrievalModel& m, const ImageGrid& v,
                      const std::vector<TokenSeq>& adv_caps,
                      const std::vector<TokenSeq>& mis_caps, const ScaleSet& s,
                      LossVariant variant) {
  return ImageSetObjective(m, adv_caps, mis_caps, s, variant).value(v);
}

double image_set_loss_product_form(const RetrievalModel& m, const ImageGrid& v,
                                   const std::vector<TokenSeq>& adv_caps,
                                   const std::vector<TokenSeq>& mis_caps,
                                   const ScaleSet& s, LossVariant variant) {
  if (m.kind != ModelKind::Aligned)
    throw InvalidConfigError(
        "image_set_loss_product_form: defined for aligned models only");
  check_caption_lists(adv_caps, mis_caps, variant);

  const size_t d = static_cast<size_t>(m.dims.embed_dim);
  Vec text_sum(d, 0.0);
  if (variant.use_mismatched)
    for (const auto& cap : mis_caps) {
      const Embedding u = normalize(encode_text(m, cap));
      for (size_t k = 0; k < d; ++k) text_sum[k] += u.values[k];
    }
  for (const auto& cap : adv_caps) {
    const Embedding u = normalize(encode_text(m, cap));
    for (size_t k = 0; k < d; ++k) text_sum[k] -= u.values[k];
  }

  Vec image_sum(d, 0.0);
  for (double scale : s.scales) {
    const Embedding e = normalize(encode_image(m, scale_image(v, scale)));
    for (size_t k = 0; k < d; ++k) image_sum[k] += e.values[k];
  }
  return dot(text_sum, image_sum);
}

Vec grad_image_set_loss(const RetrievalModel& m, const ImageGrid& v,
                        const std::vector<TokenSeq>& adv_caps,
                        const std::vector<TokenSeq>& mis_caps, const ScaleSet& s,
                        LossVariant variant) {
  return ImageSetObjective(m, adv_caps, mis_caps, s, variant).grad(v);
}

}  // namespace fmms
