#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <doctest.h>

#include "fmms/error.hpp"
#include "fmms/model.hpp"
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

}  // namespace

TEST_CASE("encode_image: zero weights give a zero embedding") {
  const ModelDims dims = small_model_dims();
  RetrievalModel m = init_model(ModelKind::Aligned, dims, 1);
  std::fill(m.image_enc.w2.a.begin(), m.image_enc.w2.a.end(), 0.0);
  Rng rng(2);
  const ImageGrid img = random_image(dims, rng);
  const Embedding e = encode_image(m, img);
  for (double x : e.values) CHECK(x == 0.0);
  const TokenSeq t = random_caption(dims, 4, rng);
  CHECK_THROWS_AS(score(m, img, t), ZeroVectorError);
}

TEST_CASE("encode_image: deterministic and shape checked") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 3);
  Rng rng(4);
  const ImageGrid img = random_image(dims, rng);
  const Embedding a = encode_image(m, img);
  const Embedding b = encode_image(m, img);
  CHECK(a.values == b.values);

  ImageGrid bad = img;
  bad.width += 1;
  bad.pixels.resize(static_cast<size_t>(bad.height) * bad.width, 0.0);
  CHECK_THROWS_AS(encode_image(m, bad), ShapeMismatchError);
}

TEST_CASE("encode_image: pixel gradient of one coordinate matches finite differences") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 5);
  Rng rng(6);
  const ImageGrid img = random_image(dims, rng);
  const int coord = 3;

  const auto f = [&](const Vec& pixels) {
    ImageGrid probe = img;
    probe.pixels = pixels;
    return encode_image(m, probe).values[coord];
  };
  const Vec numeric = finite_diff_grad(f, img.pixels, 1e-6);

  // analytic: W1^T (w2[coord,:] * (1 - a^2))
  Vec z = matvec(m.image_enc.w1, img.pixels);
  for (size_t i = 0; i < z.size(); ++i) z[i] = std::tanh(z[i] + m.image_enc.b1[i]);
  Vec gh(dims.hidden);
  for (int h = 0; h < dims.hidden; ++h)
    gh[h] = m.image_enc.w2.at(coord, h) * (1.0 - z[h] * z[h]);
  const Vec analytic = matvec_t(m.image_enc.w1, gh);

  double scale = 0.0;
  for (double g : analytic) scale = std::max(scale, std::abs(g));
  for (size_t p = 0; p < analytic.size(); ++p)
    CHECK(std::abs(analytic[p] - numeric[p]) <= 1e-5 * std::max(scale, 1e-8));
}

TEST_CASE("encode_text: single token, permutation and duplication invariance") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 7);

  TokenSeq single;
  single.tokens = {9};
  Vec row(m.text_enc.token_table.row(9), m.text_enc.token_table.row(9) + dims.token_dim);
  const Vec expected = matvec(m.text_enc.proj, row);
  CHECK(encode_text(m, single).values == expected);

  TokenSeq t;
  t.tokens = {3, 17, 3, 29};
  TokenSeq perm;
  perm.tokens = {29, 3, 17, 3};
  const Embedding et = encode_text(m, t);
  const Embedding ep = encode_text(m, perm);
  for (size_t i = 0; i < et.values.size(); ++i)
    CHECK(et.values[i] == doctest::Approx(ep.values[i]).epsilon(1e-15));

  TokenSeq doubled;
  doubled.tokens = {3, 17, 3, 29, 3, 17, 3, 29};
  const Embedding ed = encode_text(m, doubled);
  for (size_t i = 0; i < et.values.size(); ++i)
    CHECK(et.values[i] == doctest::Approx(ed.values[i]).epsilon(1e-12));

  TokenSeq bad;
  bad.tokens = {static_cast<uint32_t>(dims.vocab_size)};
  CHECK_THROWS_AS(encode_text(m, bad), TokenOutOfRangeError);
}

TEST_CASE("score: fused with identity head equals aligned score") {
  const ModelDims dims = small_model_dims();
  RetrievalModel aligned = init_model(ModelKind::Aligned, dims, 11);
  RetrievalModel fused = aligned;
  fused.kind = ModelKind::Fused;
  fused.bilinear = Matrix(dims.embed_dim, dims.embed_dim);
  for (int i = 0; i < dims.embed_dim; ++i) fused.bilinear.at(i, i) = 1.0;

  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const ImageGrid img = random_image(dims, rng);
    const TokenSeq t = random_caption(dims, 5, rng);
    CHECK(score(fused, img, t) ==
          doctest::Approx(score(aligned, img, t)).epsilon(1e-12));
  }
}

TEST_CASE("score: equals hand-computed arithmetic on a random instance") {
  const ModelDims dims = small_model_dims();
  Rng rng(13);
  for (ModelKind kind : {ModelKind::Aligned, ModelKind::Fused}) {
    const RetrievalModel m = init_model(kind, dims, rng.next_u64());
    const ImageGrid img = random_image(dims, rng);
    const TokenSeq t = random_caption(dims, 6, rng);

    const Vec e = encode_image(m, img).values;
    const Vec u = encode_text(m, t).values;
    const double ne = norm2(e);
    const double nu = norm2(u);
    double expected = 0.0;
    if (kind == ModelKind::Aligned) {
      expected = dot(e, u) / (ne * nu);
    } else {
      Vec eh = e, uh = u;
      for (auto& x : eh) x /= ne;
      for (auto& x : uh) x /= nu;
      expected = dot(eh, matvec(m.bilinear, uh));
    }
    CHECK(score(m, img, t) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("score_embeddings: aligned is scale invariant") {
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 17);
  Rng rng(18);
  Embedding e, u;
  e.values.resize(dims.embed_dim);
  u.values.resize(dims.embed_dim);
  for (auto& x : e.values) x = rng.normal();
  for (auto& x : u.values) x = rng.normal();
  const double base = score_embeddings(m, e, u);
  Embedding e2 = e, u2 = u;
  for (auto& x : e2.values) x *= 37.5;
  for (auto& x : u2.values) x *= 0.004;
  CHECK(std::abs(score_embeddings(m, e2, u2) - base) <= 1e-9);
}

TEST_CASE("rank: single-item gallery and tie-breaking") {
  DataConfig cfg = small_data_config();
  cfg.classes = 2;
  cfg.images = 2;
  cfg.captions_per_image = 1;
  Dataset d = generate_dataset(cfg, 21);
  const ModelDims dims = small_model_dims();
  const RetrievalModel m = init_model(ModelKind::Aligned, dims, 22);

  // all captions identical -> all scores tie -> ascending indices
  Dataset ties = generate_dataset(small_data_config(), 23);
  for (auto& cap : ties.captions) cap.tokens = {1, 2, 3};
  const RankedList r = rank(m, ties.images[0], ties);
  for (size_t i = 0; i < r.entries.size(); ++i)
    CHECK(r.entries[i].first == i);

  // gallery of one image: that index at rank 1
  const RankedList single = rank(m, d.captions[0], d);
  CHECK(single.entries.size() == 2);
  CHECK(single.top1() <= 1);
}

TEST_CASE("rank: matches a brute-force reference sort on random galleries") {
  const DataConfig cfg = small_data_config();
  const ModelDims dims = small_model_dims();
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const Dataset d = generate_dataset(cfg, rng.next_u64());
    const RetrievalModel m =
        init_model(trial % 2 ? ModelKind::Fused : ModelKind::Aligned, dims,
                   rng.next_u64());
    const ImageGrid& query = d.images[trial % d.num_images()];

    const RankedList fast = rank(m, query, d);

    // independent oracle: selection sort over score() with the documented
    // tie-break (descending score, ascending index)
    std::vector<double> scores(d.num_captions());
    for (size_t i = 0; i < d.num_captions(); ++i)
      scores[i] = score(m, query, d.captions[i]);
    std::vector<uint32_t> order(d.num_captions());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
      return scores[a] > scores[b];
    });

    REQUIRE(fast.entries.size() == order.size());
    for (size_t i = 0; i < order.size(); ++i) {
      CHECK(fast.entries[i].first == order[i]);
      CHECK(fast.entries[i].second == scores[order[i]]);
    }
    // permutation property
    std::vector<char> seen(d.num_captions(), 0);
    for (const auto& [idx, s] : fast.entries) seen[idx] = 1;
    CHECK(std::count(seen.begin(), seen.end(), 1) ==
          static_cast<long>(d.num_captions()));
  }
}

TEST_CASE("rank: fused with identity head reproduces aligned ranking") {
  const DataConfig cfg = small_data_config();
  const ModelDims dims = small_model_dims();
  const Dataset d = generate_dataset(cfg, 41);
  RetrievalModel aligned = init_model(ModelKind::Aligned, dims, 42);
  RetrievalModel fused = aligned;
  fused.kind = ModelKind::Fused;
  fused.bilinear = Matrix(dims.embed_dim, dims.embed_dim);
  for (int i = 0; i < dims.embed_dim; ++i) fused.bilinear.at(i, i) = 1.0;

  const RankedList ra = rank(aligned, d.images[3], d);
  const RankedList rf = rank(fused, d.images[3], d);
  for (size_t i = 0; i < ra.entries.size(); ++i)
    CHECK(ra.entries[i].first == rf.entries[i].first);
}

TEST_CASE("Ranker: bit-identical to the plain rank()") {
  const DataConfig cfg = small_data_config();
  const ModelDims dims = small_model_dims();
  const Dataset d = generate_dataset(cfg, 51);
  for (ModelKind kind : {ModelKind::Aligned, ModelKind::Fused}) {
    const RetrievalModel m = init_model(kind, dims, 52);
    const Ranker ranker(m, d);
    const RankedList a = rank(m, d.images[1], d);
    const RankedList b = ranker.rank(d.images[1]);
    REQUIRE(a.entries.size() == b.entries.size());
    for (size_t i = 0; i < a.entries.size(); ++i) {
      CHECK(a.entries[i].first == b.entries[i].first);
      CHECK(a.entries[i].second == b.entries[i].second);
    }
    const RankedList c = rank(m, d.captions[4], d);
    const RankedList e = ranker.rank(d.captions[4]);
    for (size_t i = 0; i < c.entries.size(); ++i)
      CHECK(c.entries[i].first == e.entries[i].first);
  }
}

TEST_CASE("train_contrastive: zero steps keep parameters unchanged") {
  const Dataset d = generate_dataset(small_data_config(), 61);
  const RetrievalModel m = init_model(ModelKind::Aligned, small_model_dims(), 62);
  TrainConfig cfg;
  cfg.steps = 0;
  const TrainResult r = train_contrastive(m, d, cfg, 63);
  CHECK(models_equal(m, r.model));
}

TEST_CASE("train_contrastive: deterministic in the seed") {
  const Dataset d = generate_dataset(small_data_config(), 71);
  const RetrievalModel m = init_model(ModelKind::Fused, small_model_dims(), 72);
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch = 8;
  cfg.learning_rate = 0.3;
  const TrainResult a = train_contrastive(m, d, cfg, 73);
  const TrainResult b = train_contrastive(m, d, cfg, 73);
  CHECK(models_equal(a.model, b.model));
  const TrainResult c = train_contrastive(m, d, cfg, 74);
  CHECK_FALSE(models_equal(a.model, c.model));
}

TEST_CASE("train_contrastive: diverges loudly on an absurd learning rate") {
  const Dataset d = generate_dataset(small_data_config(), 81);
  const RetrievalModel m = init_model(ModelKind::Aligned, small_model_dims(), 82);
  TrainConfig cfg;
  cfg.steps = 20;
  cfg.batch = 8;
  cfg.learning_rate = 1e300;
  CHECK_THROWS_AS(train_contrastive(m, d, cfg, 83), Error);
}

TEST_CASE("model save/load round trip is bit exact") {
  const ModelDims dims = small_model_dims();
  for (ModelKind kind : {ModelKind::Aligned, ModelKind::Fused}) {
    const RetrievalModel m = init_model(kind, dims, 91);
    const std::string path = temp_path("fmms_test_model.ckpt");
    save_model(m, path);
    const RetrievalModel loaded = load_model(path);
    CHECK(models_equal(m, loaded));
    std::filesystem::remove(path);
  }
}

TEST_CASE("load_model: rejects truncated checkpoints") {
  const RetrievalModel m = init_model(ModelKind::Aligned, small_model_dims(), 95);
  const std::string path = temp_path("fmms_test_model_trunc.ckpt");
  save_model(m, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 64);
  CHECK_THROWS_AS(load_model(path), IoError);
  std::filesystem::remove(path);
}
