#include <cmath>

#include <doctest.h>

#include "fmms/error.hpp"
#include "fmms/loss.hpp"
#include "fmms/rng.hpp"
#include "test_util.hpp"

using namespace fmms;
using namespace fmms::testutil;

namespace {

ImageGrid random_image(const ModelDims& dims, Rng& rng) {
  ImageGrid img;
  img.height = dims.height;
  img.width = dims.width;
  img.pixels.resize(static_cast<size_t>(dims.height) * dims.width);
  for (auto& p : img.pixels) p = rng.unit();
  return img;
}

TokenSeq random_caption(const ModelDims& dims, int len, Rng& rng) {
  TokenSeq t;
  t.tokens.resize(len);
  for (auto& tok : t.tokens)
    tok = static_cast<uint32_t>(rng.below(dims.vocab_size));
  return t;
}

std::vector<TokenSeq> random_captions(const ModelDims& dims, int count, int len,
                                      Rng& rng) {
  std::vector<TokenSeq> caps;
  for (int i = 0; i < count; ++i) caps.push_back(random_caption(dims, len, rng));
  return caps;
}

}  // namespace

TEST_CASE("text_push_loss: cancels exactly when the images coincide") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 1);
  Rng rng(2);
  const ImageGrid v = random_image(dims, rng);
  const TokenSeq t = random_caption(dims, 5, rng);
  CHECK(text_push_loss(m, t, v, v, LossVariant{true}) == 0.0);
}

TEST_CASE("text_push_loss: analytic unit-vector example gives -1") {
  // text embedding [1,0]; matched image [1,0]; mismatched image [0,1]
  ModelDims dims;
  dims.height = 2;
  dims.width = 2;
  dims.hidden = 2;
  dims.embed_dim = 2;
  dims.token_dim = 2;
  dims.vocab_size = 2;
  RetrievalModel m = init_model(ModelKind::Aligned, dims, 3);
  m.text_enc.token_table.at(0, 0) = 1.0;
  m.text_enc.token_table.at(0, 1) = 0.0;
  m.text_enc.proj = Matrix(2, 2);
  m.text_enc.proj.at(0, 0) = 1.0;
  m.text_enc.proj.at(1, 1) = 1.0;

  Embedding match{{1.0, 0.0}, false};
  Embedding mismatch{{0.0, 1.0}, false};
  TextPushObjective obj(m, match, mismatch, LossVariant{true});
  TokenSeq t;
  t.tokens = {0};
  CHECK(obj(t) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("text_push_loss: equals two independent score() calls") {
  const ModelDims dims = small_model_dims();
  Rng rng(5);
  for (ModelKind kind : {ModelKind::Aligned, ModelKind::Fused}) {
    const RetrievalModel m = init_model(kind, dims, rng.next_u64());
    const ImageGrid v_match = random_image(dims, rng);
    const ImageGrid v_mismatch = random_image(dims, rng);
    const TokenSeq t = random_caption(dims, 5, rng);
    const double full = text_push_loss(m, t, v_match, v_mismatch, LossVariant{true});
    CHECK(full == score(m, v_mismatch, t) - score(m, v_match, t));
    const double matched =
        text_push_loss(m, t, v_match, v_mismatch, LossVariant{false});
    CHECK(matched == -score(m, v_match, t));
  }
}

TEST_CASE("text_push_loss: antisymmetric under swapping the images") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 7);
  Rng rng(8);
  const ImageGrid a = random_image(dims, rng);
  const ImageGrid b = random_image(dims, rng);
  const TokenSeq t = random_caption(dims, 5, rng);
  CHECK(text_push_loss(m, t, a, b, LossVariant{true}) ==
        -text_push_loss(m, t, b, a, LossVariant{true}));
}

TEST_CASE("image_set_loss: identical caption lists cancel exactly") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 9);
  Rng rng(10);
  const ImageGrid v = random_image(dims, rng);
  const auto caps = random_captions(dims, 3, 5, rng);
  const ScaleSet s = ScaleSet::validated({0.5, 1.0, 1.5});
  CHECK(image_set_loss(m, v, caps, caps, s, LossVariant{true}) == 0.0);
  const Vec g = grad_image_set_loss(m, v, caps, caps, s, LossVariant{true});
  for (double x : g) CHECK(x == 0.0);
}

TEST_CASE("image_set_loss: analytic opposite-caption example gives 2") {
  // Constant image embedding (1, 0); captions embed to +-(1, 0).
  ModelDims dims;
  dims.height = 2;
  dims.width = 2;
  dims.hidden = 2;
  dims.embed_dim = 2;
  dims.token_dim = 2;
  dims.vocab_size = 2;
  RetrievalModel m = init_model(ModelKind::Aligned, dims, 11);
  std::fill(m.image_enc.w1.a.begin(), m.image_enc.w1.a.end(), 0.0);
  m.image_enc.b1 = {std::atanh(0.5), 0.0};
  m.image_enc.w2 = Matrix(2, 2);
  m.image_enc.w2.at(0, 0) = 2.0;  // embedding = (tanh(b1_0) * 2, 0) = (1, 0)
  m.text_enc.token_table.at(0, 0) = 1.0;
  m.text_enc.token_table.at(0, 1) = 0.0;
  m.text_enc.token_table.at(1, 0) = -1.0;
  m.text_enc.token_table.at(1, 1) = 0.0;
  m.text_enc.proj = Matrix(2, 2);
  m.text_enc.proj.at(0, 0) = 1.0;
  m.text_enc.proj.at(1, 1) = 1.0;

  ImageGrid v;
  v.height = 2;
  v.width = 2;
  v.pixels = {0.3, 0.6, 0.1, 0.9};
  TokenSeq plus;   // embeds to +(1,0)
  plus.tokens = {0};
  TokenSeq minus;  // embeds to -(1,0)
  minus.tokens = {1};
  const double loss = image_set_loss(m, v, {minus}, {plus},
                                     ScaleSet::validated({1.0}), LossVariant{true});
  CHECK(loss == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("image_set_loss: product form equals score-sum form for aligned") {
  const ModelDims dims = small_model_dims();
  Rng rng(13);
  const ScaleSet s = ScaleSet::validated({0.5, 1.0, 1.25});
  for (int trial = 0; trial < 10; ++trial) {
    const RetrievalModel m = init_model(ModelKind::Aligned, dims, rng.next_u64());
    const ImageGrid v = random_image(dims, rng);
    const auto adv = random_captions(dims, 2, 5, rng);
    const auto mis = random_captions(dims, 2, 5, rng);
    for (LossVariant variant : {LossVariant{true}, LossVariant{false}}) {
      const double sum_form = image_set_loss(m, v, adv, mis, s, variant);
      const double product_form =
          image_set_loss_product_form(m, v, adv, mis, s, variant);
      CHECK(std::abs(sum_form - product_form) <= 1e-9);
    }
  }
}

TEST_CASE("image_set_loss: product form rejects fused models") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Fused, dims, 15);
  Rng rng(16);
  const ImageGrid v = random_image(dims, rng);
  const auto caps = random_captions(dims, 1, 4, rng);
  CHECK_THROWS_AS(image_set_loss_product_form(m, v, caps, caps,
                                              ScaleSet::validated({1.0}),
                                              LossVariant{true}),
                  InvalidConfigError);
}

TEST_CASE("image_set_loss: equals independent score() sums") {
  const ModelDims dims = small_model_dims();
  Rng rng(17);
  const ScaleSet s = ScaleSet::validated({0.75, 1.0});
  const RetrievalModel m = init_model(ModelKind::Fused, dims, rng.next_u64());
  const ImageGrid v = random_image(dims, rng);
  const auto adv = random_captions(dims, 3, 5, rng);
  const auto mis = random_captions(dims, 3, 5, rng);

  double pos = 0.0, neg = 0.0;
  for (double scale : s.scales) {
    const ImageGrid scaled = scale_image(v, scale);
    for (const auto& cap : mis) pos += score(m, scaled, cap);
    for (const auto& cap : adv) neg += score(m, scaled, cap);
  }
  CHECK(image_set_loss(m, v, adv, mis, s, LossVariant{true}) == pos - neg);
}

TEST_CASE("grad_image_set_loss: matches finite differences") {
  const ModelDims dims = small_model_dims();
  Rng rng(19);
  const ScaleSet s = ScaleSet::validated({0.5, 1.0, 1.5});
  for (ModelKind kind : {ModelKind::Aligned, ModelKind::Fused}) {
    for (LossVariant variant : {LossVariant{true}, LossVariant{false}}) {
      const RetrievalModel m = init_model(kind, dims, rng.next_u64());
      const ImageGrid v = random_image(dims, rng);
      const auto adv = random_captions(dims, 2, 5, rng);
      const auto mis = random_captions(dims, 2, 5, rng);

      const Vec analytic = grad_image_set_loss(m, v, adv, mis, s, variant);
      const auto f = [&](const Vec& pixels) {
        ImageGrid probe = v;
        probe.pixels = pixels;
        return image_set_loss(m, probe, adv, mis, s, variant);
      };
      const Vec numeric = finite_diff_grad(f, v.pixels, 1e-4);

      double max_abs = 0.0;
      for (double g : numeric) max_abs = std::max(max_abs, std::abs(g));
      for (size_t p = 0; p < analytic.size(); ++p)
        CHECK(std::abs(analytic[p] - numeric[p]) <=
              1e-3 * std::max(max_abs, 1e-10));
    }
  }
}

TEST_CASE("grad_image_set_loss: full variant decomposes into push and pull") {
  const ModelDims dims = small_model_dims();
  Rng rng(23);
  const ScaleSet s = ScaleSet::validated({1.0, 1.25});
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, rng.next_u64());
  const ImageGrid v = random_image(dims, rng);
  const auto adv = random_captions(dims, 2, 5, rng);
  const auto mis = random_captions(dims, 2, 5, rng);

  const Vec full = grad_image_set_loss(m, v, adv, mis, s, LossVariant{true});
  // matched-only gradient of X equals minus the gradient of sum score(.., X)
  const Vec push_adv = grad_image_set_loss(m, v, adv, mis, s, LossVariant{false});
  const Vec push_mis = grad_image_set_loss(m, v, mis, adv, s, LossVariant{false});
  for (size_t p = 0; p < full.size(); ++p)
    CHECK(std::abs(full[p] - (push_adv[p] - push_mis[p])) <= 1e-12);
}

TEST_CASE("image_set_loss: caption list shape errors") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 29);
  Rng rng(30);
  const ImageGrid v = random_image(dims, rng);
  const auto adv = random_captions(dims, 2, 5, rng);
  const auto mis = random_captions(dims, 3, 5, rng);
  const ScaleSet s = ScaleSet::validated({1.0});
  CHECK_THROWS_AS(image_set_loss(m, v, adv, mis, s, LossVariant{true}),
                  ShapeMismatchError);
  CHECK_THROWS_AS(image_set_loss(m, v, {}, {}, s, LossVariant{false}),
                  ShapeMismatchError);
  // mismatched list ignored by the matched-only variant
  CHECK_NOTHROW(image_set_loss(m, v, adv, mis, s, LossVariant{false}));
}
