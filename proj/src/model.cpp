#include "fmms/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "fmms/error.hpp"
#include "fmms/rng.hpp"
#include "fmms/serialize.hpp"

namespace fmms {

namespace {
constexpr char kCheckpointMagic[8] = {'F', 'M', 'M', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

bool bits_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

RankedList sort_ranked(std::vector<double> scores) {
  RankedList out;
  const size_t n = scores.size();
  std::vector<uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  std::sort(idx.begin(), idx.end(), [&](uint32_t a, uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  out.entries.reserve(n);
  for (uint32_t i : idx) out.entries.emplace_back(i, scores[i]);
  return out;
}
}  // namespace

void RetrievalModel::check_shapes() const {
  const int hw = dims.height * dims.width;
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ShapeMismatchError(what);
  };
  require(image_enc.w1.rows == dims.hidden && image_enc.w1.cols == hw,
          "model: W1 shape");
  require(static_cast<int>(image_enc.b1.size()) == dims.hidden, "model: b1 shape");
  require(image_enc.w2.rows == dims.embed_dim && image_enc.w2.cols == dims.hidden,
          "model: W2 shape");
  require(text_enc.token_table.rows == dims.vocab_size &&
              text_enc.token_table.cols == dims.token_dim,
          "model: token table shape");
  require(text_enc.proj.rows == dims.embed_dim &&
              text_enc.proj.cols == dims.token_dim,
          "model: projection shape");
  if (kind == ModelKind::Fused) {
    require(bilinear.rows == dims.embed_dim && bilinear.cols == dims.embed_dim,
            "model: bilinear head shape");
  } else {
    require(bilinear.rows == 0 && bilinear.cols == 0,
            "model: aligned model with bilinear head");
  }
  for (double x : image_enc.w1.a)
    if (!std::isfinite(x)) throw NonFiniteError("model: non-finite parameter");
}

RetrievalModel init_model(ModelKind kind, const ModelDims& dims, uint64_t seed) {
  Rng rng(seed);
  RetrievalModel m;
  m.kind = kind;
  m.dims = dims;
  const int hw = dims.height * dims.width;

  auto fill = [&](Matrix& mat, int rows, int cols, double scale) {
    mat = Matrix(rows, cols);
    for (double& x : mat.a) x = rng.normal() * scale;
  };
  fill(m.image_enc.w1, dims.hidden, hw, 1.0 / std::sqrt(static_cast<double>(hw)));
  m.image_enc.b1.assign(dims.hidden, 0.0);
  fill(m.image_enc.w2, dims.embed_dim, dims.hidden,
       1.0 / std::sqrt(static_cast<double>(dims.hidden)));
  if (dims.token_dim == dims.vocab_size) {
    // One-hot token features; the caption embedding then starts as a linear
    // readout of token counts, which conditions training well.
    m.text_enc.token_table = Matrix(dims.vocab_size, dims.token_dim);
    for (int i = 0; i < dims.vocab_size; ++i) m.text_enc.token_table.at(i, i) = 1.0;
  } else {
    fill(m.text_enc.token_table, dims.vocab_size, dims.token_dim, 1.0);
  }
  fill(m.text_enc.proj, dims.embed_dim, dims.token_dim,
       1.0 / std::sqrt(static_cast<double>(dims.token_dim)));
  if (kind == ModelKind::Fused) {
    m.bilinear = Matrix(dims.embed_dim, dims.embed_dim);
    for (int i = 0; i < dims.embed_dim; ++i) m.bilinear.at(i, i) = 1.0;
  }
  return m;
}

Embedding encode_image(const RetrievalModel& m, const ImageGrid& v) {
  if (v.height != m.dims.height || v.width != m.dims.width)
    throw ShapeMismatchError("encode_image: grid does not match model dims");
  Vec z = matvec(m.image_enc.w1, v.pixels);
  for (int i = 0; i < m.dims.hidden; ++i) z[i] = std::tanh(z[i] + m.image_enc.b1[i]);
  Embedding e;
  e.values = matvec(m.image_enc.w2, z);
  return e;
}

Embedding encode_text(const RetrievalModel& m, const TokenSeq& t) {
  if (t.tokens.empty()) throw ShapeMismatchError("encode_text: empty sequence");
  Vec mean(m.dims.token_dim, 0.0);
  for (uint32_t tok : t.tokens) {
    if (tok >= static_cast<uint32_t>(m.dims.vocab_size))
      throw TokenOutOfRangeError("encode_text: token id out of range");
    const double* row = m.text_enc.token_table.row(static_cast<int>(tok));
    for (int c = 0; c < m.dims.token_dim; ++c) mean[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(t.tokens.size());
  for (double& x : mean) x *= inv;
  Embedding e;
  e.values = matvec(m.text_enc.proj, mean);
  return e;
}

double score_embeddings(const RetrievalModel& m, const Embedding& image_emb,
                        const Embedding& text_emb) {
  if (m.kind == ModelKind::Aligned) return cosine(image_emb, text_emb);
  const Embedding ei = normalize(image_emb);
  const Embedding et = normalize(text_emb);
  return dot(ei.values, matvec(m.bilinear, et.values));
}

double score(const RetrievalModel& m, const ImageGrid& v, const TokenSeq& t) {
  return score_embeddings(m, encode_image(m, v), encode_text(m, t));
}

RankedList rank(const RetrievalModel& m, const ImageGrid& query, const Dataset& gallery) {
  const Embedding q = encode_image(m, query);
  std::vector<double> scores(gallery.num_captions());
  for (size_t i = 0; i < gallery.num_captions(); ++i)
    scores[i] = score_embeddings(m, q, encode_text(m, gallery.captions[i]));
  return sort_ranked(std::move(scores));
}

RankedList rank(const RetrievalModel& m, const TokenSeq& query, const Dataset& gallery) {
  const Embedding q = encode_text(m, query);
  std::vector<double> scores(gallery.num_images());
  for (size_t i = 0; i < gallery.num_images(); ++i)
    scores[i] = score_embeddings(m, encode_image(m, gallery.images[i]), q);
  return sort_ranked(std::move(scores));
}

Ranker::Ranker(const RetrievalModel& m, const Dataset& d) : model_(&m) {
  image_embs_.reserve(d.num_images());
  for (const auto& img : d.images) image_embs_.push_back(encode_image(m, img));
  caption_embs_.reserve(d.num_captions());
  for (const auto& cap : d.captions) caption_embs_.push_back(encode_text(m, cap));
}

RankedList Ranker::rank(const ImageGrid& query) const {
  const Embedding q = encode_image(*model_, query);
  std::vector<double> scores(caption_embs_.size());
  for (size_t i = 0; i < caption_embs_.size(); ++i)
    scores[i] = score_embeddings(*model_, q, caption_embs_[i]);
  return sort_ranked(std::move(scores));
}

RankedList Ranker::rank(const TokenSeq& query) const {
  const Embedding q = encode_text(*model_, query);
  std::vector<double> scores(image_embs_.size());
  for (size_t i = 0; i < image_embs_.size(); ++i)
    scores[i] = score_embeddings(*model_, image_embs_[i], q);
  return sort_ranked(std::move(scores));
}

namespace {

// Per-example forward state kept for backprop.
struct ImageForward {
  Vec hidden;  // tanh activations
  Embedding emb;
};

ImageForward forward_image(const RetrievalModel& m, const ImageGrid& v) {
  ImageForward f;
  Vec z = matvec(m.image_enc.w1, v.pixels);
  for (size_t i = 0; i < z.size(); ++i) z[i] = std::tanh(z[i] + m.image_enc.b1[i]);
  f.emb.values = matvec(m.image_enc.w2, z);
  f.hidden = std::move(z);
  return f;
}

struct TextForward {
  Vec mean;
  Embedding emb;
};

TextForward forward_text(const RetrievalModel& m, const TokenSeq& t) {
  TextForward f;
  f.mean.assign(m.dims.token_dim, 0.0);
  for (uint32_t tok : t.tokens) {
    const double* row = m.text_enc.token_table.row(static_cast<int>(tok));
    for (int c = 0; c < m.dims.token_dim; ++c) f.mean[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(t.tokens.size());
  for (double& x : f.mean) x *= inv;
  f.emb.values = matvec(m.text_enc.proj, f.mean);
  return f;
}

}  // namespace

TrainResult train_contrastive(const RetrievalModel& model_in, const Dataset& d,
                              const TrainConfig& cfg, uint64_t seed) {
  if (d.images.empty()) throw InvalidConfigError("train: empty dataset");
  if (cfg.batch < 2) throw InvalidConfigError("train: batch must be >= 2");
  if (!(cfg.temperature > 0.0))
    throw InvalidConfigError("train: temperature must be > 0");
  RetrievalModel m = model_in;
  m.check_shapes();

  const int n = static_cast<int>(d.num_images());
  const int batch = std::min(cfg.batch, n);
  const int dim = m.dims.embed_dim;
  const int captions_per_image = d.captions_per_image;
  Rng rng(seed);

  const bool fused = (m.kind == ModelKind::Fused);
  double last_loss = 0.0;

  Matrix g_w1(m.image_enc.w1.rows, m.image_enc.w1.cols);
  Vec g_b1(m.image_enc.b1.size());
  Matrix g_w2(m.image_enc.w2.rows, m.image_enc.w2.cols);
  Matrix g_tt(m.text_enc.token_table.rows, m.text_enc.token_table.cols);
  Matrix g_proj(m.text_enc.proj.rows, m.text_enc.proj.cols);
  Matrix g_bil(fused ? dim : 0, fused ? dim : 0);

  uint32_t n_classes = 0;
  for (uint32_t c : d.class_of) n_classes = std::max(n_classes, c + 1);
  std::vector<std::vector<int>> by_class(n_classes);
  for (int i = 0; i < n; ++i) by_class[d.class_of[i]].push_back(i);
  std::vector<uint32_t> class_order(n_classes);
  std::vector<int> pool(n);
  std::vector<int> batch_imgs(batch);
  std::vector<uint32_t> batch_caps(batch);

  for (int step = 0; step < cfg.steps; ++step) {
    if (cfg.class_blocked_batches) {
      // Whole classes enter together so the in-batch negatives concentrate
      // on the hard same-class contrasts.
      std::iota(class_order.begin(), class_order.end(), 0u);
      for (size_t c = 0; c + 1 < class_order.size(); ++c) {
        const size_t j =
            c + rng.below(static_cast<uint64_t>(class_order.size() - c));
        std::swap(class_order[c], class_order[j]);
      }
      int filled = 0;
      for (uint32_t cls : class_order) {
        if (filled >= batch) break;
        auto& members = by_class[cls];
        for (size_t i = 0; i + 1 < members.size(); ++i) {
          const size_t j =
              i + rng.below(static_cast<uint64_t>(members.size() - i));
          std::swap(members[i], members[j]);
        }
        for (int img : members) {
          if (filled >= batch) break;
          batch_imgs[filled++] = img;
        }
      }
    } else {
      // Distinct images drawn uniformly.
      std::iota(pool.begin(), pool.end(), 0);
      for (int b = 0; b < batch; ++b) {
        const int j =
            b + static_cast<int>(rng.below(static_cast<uint64_t>(n - b)));
        std::swap(pool[b], pool[j]);
        batch_imgs[b] = pool[b];
      }
    }
    for (int b = 0; b < batch; ++b) {
      batch_caps[b] = d.match_map[batch_imgs[b]]
                                 [rng.below(static_cast<uint64_t>(captions_per_image))];
    }

    std::vector<ImageForward> imf(batch);
    std::vector<TextForward> txf(batch);
    std::vector<Vec> e_hat(batch), u_hat(batch);
    std::vector<double> e_norm(batch), u_norm(batch);
    for (int b = 0; b < batch; ++b) {
      imf[b] = forward_image(m, d.images[batch_imgs[b]]);
      txf[b] = forward_text(m, d.captions[batch_caps[b]]);
      e_norm[b] = norm2(imf[b].emb.values);
      u_norm[b] = norm2(txf[b].emb.values);
      if (!(e_norm[b] > kZeroNormThreshold) || !(u_norm[b] > kZeroNormThreshold))
        throw DivergedTrainingError("train: degenerate embedding");
      e_hat[b] = imf[b].emb.values;
      for (double& x : e_hat[b]) x /= e_norm[b];
      u_hat[b] = txf[b].emb.values;
      for (double& x : u_hat[b]) x /= u_norm[b];
    }

    // Similarity matrix and symmetric InfoNCE.
    std::vector<Vec> w_u;  // Fused: W u_hat per column
    if (fused) {
      w_u.resize(batch);
      for (int b = 0; b < batch; ++b) w_u[b] = matvec(m.bilinear, u_hat[b]);
    }
    std::vector<double> sim(static_cast<size_t>(batch) * batch);
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < batch; ++j)
        sim[i * batch + j] = dot(e_hat[i], fused ? w_u[j] : u_hat[j]);

    const double inv_tau = 1.0 / cfg.temperature;
    std::vector<double> row_p(sim.size()), col_p(sim.size());
    double loss = 0.0;
    for (int i = 0; i < batch; ++i) {
      double mx = -1e300;
      for (int j = 0; j < batch; ++j) mx = std::max(mx, sim[i * batch + j]);
      double z = 0.0;
      for (int j = 0; j < batch; ++j) {
        row_p[i * batch + j] = std::exp((sim[i * batch + j] - mx) * inv_tau);
        z += row_p[i * batch + j];
      }
      for (int j = 0; j < batch; ++j) row_p[i * batch + j] /= z;
      loss -= std::log(std::max(row_p[i * batch + i], 1e-300));
    }
    for (int j = 0; j < batch; ++j) {
      double mx = -1e300;
      for (int i = 0; i < batch; ++i) mx = std::max(mx, sim[i * batch + j]);
      double z = 0.0;
      for (int i = 0; i < batch; ++i) {
        col_p[i * batch + j] = std::exp((sim[i * batch + j] - mx) * inv_tau);
        z += col_p[i * batch + j];
      }
      for (int i = 0; i < batch; ++i) col_p[i * batch + j] /= z;
      loss -= std::log(std::max(col_p[j * batch + j], 1e-300));
    }
    loss /= 2.0 * batch;
    if (!std::isfinite(loss)) throw DivergedTrainingError("train: non-finite loss");
    last_loss = loss;

    // dL/dsim
    const double coef = inv_tau / (2.0 * batch);
    std::vector<double> c(sim.size());
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < batch; ++j) {
        const double delta = (i == j) ? 1.0 : 0.0;
        c[i * batch + j] =
            coef * ((row_p[i * batch + j] - delta) + (col_p[i * batch + j] - delta));
      }

    std::fill(g_w1.a.begin(), g_w1.a.end(), 0.0);
    std::fill(g_b1.begin(), g_b1.end(), 0.0);
    std::fill(g_w2.a.begin(), g_w2.a.end(), 0.0);
    std::fill(g_tt.a.begin(), g_tt.a.end(), 0.0);
    std::fill(g_proj.a.begin(), g_proj.a.end(), 0.0);
    if (fused) std::fill(g_bil.a.begin(), g_bil.a.end(), 0.0);

    for (int i = 0; i < batch; ++i) {
      // A_i = sum_j c_ij u_hat_j (or W u_hat_j), beta_i = sum_j c_ij S_ij
      Vec a_i(dim, 0.0);
      double beta = 0.0;
      for (int j = 0; j < batch; ++j) {
        const double cij = c[i * batch + j];
        if (cij == 0.0) continue;
        const Vec& col = fused ? w_u[j] : u_hat[j];
        for (int k = 0; k < dim; ++k) a_i[k] += cij * col[k];
        beta += cij * sim[i * batch + j];
      }
      // grad wrt raw image embedding e_i
      Vec g_e(dim);
      for (int k = 0; k < dim; ++k)
        g_e[k] = (a_i[k] - beta * e_hat[i][k]) / e_norm[i];
      // backprop through W2 tanh(W1 x + b1)
      Vec g_hidden = matvec_t(m.image_enc.w2, g_e);
      add_outer(g_w2, g_e, imf[i].hidden, 1.0);
      for (size_t k = 0; k < g_hidden.size(); ++k)
        g_hidden[k] *= 1.0 - imf[i].hidden[k] * imf[i].hidden[k];
      add_outer(g_w1, g_hidden, d.images[batch_imgs[i]].pixels, 1.0);
      for (size_t k = 0; k < g_hidden.size(); ++k) g_b1[k] += g_hidden[k];
    }

    std::vector<Vec> wt_e;  // Fused: W^T e_hat per row
    if (fused) {
      wt_e.resize(batch);
      for (int i = 0; i < batch; ++i) wt_e[i] = matvec_t(m.bilinear, e_hat[i]);
    }
    for (int j = 0; j < batch; ++j) {
      Vec a_j(dim, 0.0);
      double beta = 0.0;
      for (int i = 0; i < batch; ++i) {
        const double cij = c[i * batch + j];
        if (cij == 0.0) continue;
        const Vec& row = fused ? wt_e[i] : e_hat[i];
        for (int k = 0; k < dim; ++k) a_j[k] += cij * row[k];
        beta += cij * sim[i * batch + j];
      }
      Vec g_u(dim);
      for (int k = 0; k < dim; ++k)
        g_u[k] = (a_j[k] - beta * u_hat[j][k]) / u_norm[j];
      // backprop through P mean(token_table)
      Vec g_mean = matvec_t(m.text_enc.proj, g_u);
      add_outer(g_proj, g_u, txf[j].mean, 1.0);
      const TokenSeq& cap = d.captions[batch_caps[j]];
      const double inv_len = 1.0 / static_cast<double>(cap.tokens.size());
      for (uint32_t tok : cap.tokens) {
        double* row = g_tt.row(static_cast<int>(tok));
        for (int k = 0; k < m.dims.token_dim; ++k) row[k] += g_mean[k] * inv_len;
      }
    }

    if (fused) {
      for (int i = 0; i < batch; ++i)
        for (int j = 0; j < batch; ++j) {
          const double cij = c[i * batch + j];
          if (cij != 0.0) add_outer(g_bil, e_hat[i], u_hat[j], cij);
        }
    }

    // Linearly annealed step size; constant steps keep oscillating near the
    // optimum at this step budget.
    const double lr =
        cfg.learning_rate * (1.0 - static_cast<double>(step) / cfg.steps);
    for (size_t k = 0; k < m.image_enc.w1.a.size(); ++k)
      m.image_enc.w1.a[k] -= lr * g_w1.a[k];
    for (size_t k = 0; k < m.image_enc.b1.size(); ++k)
      m.image_enc.b1[k] -= lr * g_b1[k];
    for (size_t k = 0; k < m.image_enc.w2.a.size(); ++k)
      m.image_enc.w2.a[k] -= lr * g_w2.a[k];
    for (size_t k = 0; k < m.text_enc.token_table.a.size(); ++k)
      m.text_enc.token_table.a[k] -= lr * g_tt.a[k];
    for (size_t k = 0; k < m.text_enc.proj.a.size(); ++k)
      m.text_enc.proj.a[k] -= lr * g_proj.a[k];
    if (fused)
      for (size_t k = 0; k < m.bilinear.a.size(); ++k)
        m.bilinear.a[k] -= lr * g_bil.a[k];
  }

  TrainResult result;
  result.final_loss = last_loss;

  // Clean R@1 on the training gallery.
  {
    Ranker ranker(m, d);
    int tr_hits = 0;
    for (size_t i = 0; i < d.num_images(); ++i) {
      const uint32_t top = ranker.rank(d.images[i]).top1();
      if (d.is_ground_truth(static_cast<uint32_t>(i), top)) ++tr_hits;
    }
    int ir_hits = 0;
    for (size_t cap = 0; cap < d.num_captions(); ++cap) {
      const uint32_t top = ranker.rank(d.captions[cap]).top1();
      if (top == d.caption_owner[cap]) ++ir_hits;
    }
    result.tr_r1 = static_cast<double>(tr_hits) / static_cast<double>(d.num_images());
    result.ir_r1 =
        static_cast<double>(ir_hits) / static_cast<double>(d.num_captions());
  }

  result.model = std::move(m);
  return result;
}

void save_model(const RetrievalModel& m, const std::string& path) {
  m.check_shapes();
  BinaryWriter w(path);
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(m.kind == ModelKind::Fused ? 1u : 0u);
  w.u32(static_cast<uint32_t>(m.dims.height));
  w.u32(static_cast<uint32_t>(m.dims.width));
  w.u32(static_cast<uint32_t>(m.dims.hidden));
  w.u32(static_cast<uint32_t>(m.dims.embed_dim));
  w.u32(static_cast<uint32_t>(m.dims.token_dim));
  w.u32(static_cast<uint32_t>(m.dims.vocab_size));
  w.f64_array(m.image_enc.w1.a);
  w.f64_array(m.image_enc.b1);
  w.f64_array(m.image_enc.w2.a);
  w.f64_array(m.text_enc.token_table.a);
  w.f64_array(m.text_enc.proj.a);
  if (m.kind == ModelKind::Fused) w.f64_array(m.bilinear.a);
  w.finish();
}

RetrievalModel load_model(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kCheckpointMagic, kCheckpointVersion);
  RetrievalModel m;
  m.kind = r.u32() == 1u ? ModelKind::Fused : ModelKind::Aligned;
  m.dims.height = static_cast<int>(r.u32());
  m.dims.width = static_cast<int>(r.u32());
  m.dims.hidden = static_cast<int>(r.u32());
  m.dims.embed_dim = static_cast<int>(r.u32());
  m.dims.token_dim = static_cast<int>(r.u32());
  m.dims.vocab_size = static_cast<int>(r.u32());
  const int hw = m.dims.height * m.dims.width;

  m.image_enc.w1 = Matrix(m.dims.hidden, hw);
  m.image_enc.w1.a = r.f64_array(m.image_enc.w1.a.size());
  m.image_enc.b1 = r.f64_array(static_cast<size_t>(m.dims.hidden));
  m.image_enc.w2 = Matrix(m.dims.embed_dim, m.dims.hidden);
  m.image_enc.w2.a = r.f64_array(m.image_enc.w2.a.size());
  m.text_enc.token_table = Matrix(m.dims.vocab_size, m.dims.token_dim);
  m.text_enc.token_table.a = r.f64_array(m.text_enc.token_table.a.size());
  m.text_enc.proj = Matrix(m.dims.embed_dim, m.dims.token_dim);
  m.text_enc.proj.a = r.f64_array(m.text_enc.proj.a.size());
  if (m.kind == ModelKind::Fused) {
    m.bilinear = Matrix(m.dims.embed_dim, m.dims.embed_dim);
    m.bilinear.a = r.f64_array(m.bilinear.a.size());
  }
  r.expect_eof();
  m.check_shapes();
  return m;
}

bool models_equal(const RetrievalModel& a, const RetrievalModel& b) {
  return a.kind == b.kind && a.dims.height == b.dims.height &&
         a.dims.width == b.dims.width && a.dims.hidden == b.dims.hidden &&
         a.dims.embed_dim == b.dims.embed_dim &&
         a.dims.token_dim == b.dims.token_dim &&
         a.dims.vocab_size == b.dims.vocab_size &&
         bits_equal(a.image_enc.w1.a, b.image_enc.w1.a) &&
         bits_equal(a.image_enc.b1, b.image_enc.b1) &&
         bits_equal(a.image_enc.w2.a, b.image_enc.w2.a) &&
         bits_equal(a.text_enc.token_table.a, b.text_enc.token_table.a) &&
         bits_equal(a.text_enc.proj.a, b.text_enc.proj.a) &&
         bits_equal(a.bilinear.a, b.bilinear.a);
}

}  // namespace fmms
