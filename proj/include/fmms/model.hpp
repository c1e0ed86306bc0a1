#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmms/data.hpp"
#include "fmms/linalg.hpp"

namespace fmms {

enum class ModelKind { Aligned, Fused };

// F_I(v) = W2 tanh(W1 flatten(v) + b1)
struct ImageEncoderParams {
  Matrix w1;
  Vec b1;
  Matrix w2;
};

// F_T(t) = P mean(token_table[tokens])
struct TextEncoderParams {
  Matrix token_table;
  Matrix proj;
};

struct ModelDims {
  int height = 16;
  int width = 16;
  int hidden = 64;
  int embed_dim = 64;
  int token_dim = 256;
  int vocab_size = 256;
};

struct RetrievalModel {
  ModelKind kind = ModelKind::Aligned;
  ModelDims dims;
  ImageEncoderParams image_enc;
  TextEncoderParams text_enc;
  Matrix bilinear;  // d x d, present iff kind == Fused

  void check_shapes() const;
};

// Random parameter initialization; the bilinear head starts at identity and
// the token table starts as one-hot features whenever token_dim equals
// vocab_size (random rows otherwise).
RetrievalModel init_model(ModelKind kind, const ModelDims& dims, uint64_t seed);

Embedding encode_image(const RetrievalModel& m, const ImageGrid& v);
Embedding encode_text(const RetrievalModel& m, const TokenSeq& t);

// Shared scalar path for all scoring: Aligned -> cosine, Fused -> bilinear
// form on unit embeddings.
double score_embeddings(const RetrievalModel& m, const Embedding& image_emb,
                        const Embedding& text_emb);
double score(const RetrievalModel& m, const ImageGrid& v, const TokenSeq& t);

struct RankedList {
  // (gallery index, score), scores non-increasing, ties by ascending index.
  std::vector<std::pair<uint32_t, double>> entries;

  uint32_t top1() const { return entries.front().first; }
};

// Image query ranks the caption side; text query ranks the image side.
RankedList rank(const RetrievalModel& m, const ImageGrid& query, const Dataset& gallery);
RankedList rank(const RetrievalModel& m, const TokenSeq& query, const Dataset& gallery);

// Gallery embeddings precomputed once; bit-identical to the plain rank()
// because scoring runs through the same score_embeddings path on the same
// raw encoder outputs. Read-only after construction.
class Ranker {
 public:
  Ranker(const RetrievalModel& m, const Dataset& d);

  RankedList rank(const ImageGrid& query) const;
  RankedList rank(const TokenSeq& query) const;
  const RetrievalModel& model() const { return *model_; }

 private:
  const RetrievalModel* model_;
  std::vector<Embedding> image_embs_;
  std::vector<Embedding> caption_embs_;
};

struct TrainConfig {
  double temperature = 0.07;
  double learning_rate = 0.2;
  int steps = 2000;
  int batch = 64;
  // Class-blocked batches concentrate on hard same-class negatives; they
  // converge faster but sharpen within-class margins considerably.
  bool class_blocked_batches = false;
};

struct TrainResult {
  RetrievalModel model;
  double final_loss = 0.0;
  double tr_r1 = 0.0;
  double ir_r1 = 0.0;
};

// Symmetric in-batch InfoNCE minimized by plain gradient descent.
// Deterministic in (model, dataset, config, seed). Throws
// DivergedTrainingError when the loss stops being finite.
TrainResult train_contrastive(const RetrievalModel& m, const Dataset& d,
                              const TrainConfig& cfg, uint64_t seed);

void save_model(const RetrievalModel& m, const std::string& path);
RetrievalModel load_model(const std::string& path);

bool models_equal(const RetrievalModel& a, const RetrievalModel& b);

}  // namespace fmms
