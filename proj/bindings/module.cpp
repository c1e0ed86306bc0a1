#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fmms/attack.hpp"
#include "fmms/config.hpp"
#include "fmms/data.hpp"
#include "fmms/error.hpp"
#include "fmms/eval.hpp"
#include "fmms/fmms.hpp"
#include "fmms/loss.hpp"
#include "fmms/model.hpp"

namespace py = pybind11;
using namespace fmms;

namespace {

ImageGrid grid_from_array(const py::array_t<double>& a) {
  if (a.ndim() != 2) throw ShapeMismatchError("image array must be 2-D");
  ImageGrid img;
  img.height = static_cast<int>(a.shape(0));
  img.width = static_cast<int>(a.shape(1));
  img.pixels.resize(static_cast<size_t>(img.height) * img.width);
  auto r = a.unchecked<2>();
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      img.pixels[static_cast<size_t>(y) * img.width + x] = r(y, x);
  return img;
}

py::array_t<double> grid_to_array(const ImageGrid& img) {
  py::array_t<double> a({img.height, img.width});
  auto w = a.mutable_unchecked<2>();
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      w(y, x) = img.pixels[static_cast<size_t>(y) * img.width + x];
  return a;
}

ScaleSet scales_from_list(const std::vector<double>& scales) {
  return ScaleSet::validated(scales);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Feedback-based modal mutual search attacks on toy image-text "
            "retrieval models";

  py::register_exception<ZeroVectorError>(m, "ZeroVectorError");
  py::register_exception<InvalidConfigError>(m, "InvalidConfigError");
  py::register_exception<DegenerateGalleryError>(m, "DegenerateGalleryError");
  py::register_exception<EmptyDenominatorError>(m, "EmptyDenominatorError");

  py::class_<TokenSeq>(m, "TokenSeq")
      .def(py::init([](std::vector<uint32_t> tokens) {
             TokenSeq t;
             t.tokens = std::move(tokens);
             return t;
           }),
           py::arg("tokens"))
      .def_readwrite("tokens", &TokenSeq::tokens)
      .def("__len__", [](const TokenSeq& t) { return t.tokens.size(); });

  py::class_<ImageGrid>(m, "ImageGrid")
      .def(py::init(&grid_from_array), py::arg("pixels"))
      .def_property_readonly("height", [](const ImageGrid& g) { return g.height; })
      .def_property_readonly("width", [](const ImageGrid& g) { return g.width; })
      .def("to_numpy", &grid_to_array);

  py::class_<DataConfig>(m, "DataConfig")
      .def(py::init<>())
      .def_readwrite("classes", &DataConfig::classes)
      .def_readwrite("images", &DataConfig::images)
      .def_readwrite("captions_per_image", &DataConfig::captions_per_image)
      .def_readwrite("height", &DataConfig::height)
      .def_readwrite("width", &DataConfig::width)
      .def_readwrite("vocab_size", &DataConfig::vocab_size)
      .def_readwrite("caption_length", &DataConfig::caption_length)
      .def_readwrite("image_noise", &DataConfig::image_noise)
      .def_readwrite("class_token_pool_size", &DataConfig::class_token_pool_size);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("num_images", &Dataset::num_images)
      .def_property_readonly("num_captions", &Dataset::num_captions)
      .def_readonly("captions_per_image", &Dataset::captions_per_image)
      .def_readonly("match_map", &Dataset::match_map)
      .def_readonly("class_of", &Dataset::class_of)
      .def_readonly("vocab_size", &Dataset::vocab_size)
      .def("image", [](const Dataset& d, size_t i) { return d.images.at(i); })
      .def("caption", [](const Dataset& d, size_t i) { return d.captions.at(i); })
      .def("first_caption", &Dataset::first_caption);

  m.def("generate_dataset", &generate_dataset, py::arg("config"), py::arg("seed"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));

  py::enum_<ModelKind>(m, "ModelKind")
      .value("Aligned", ModelKind::Aligned)
      .value("Fused", ModelKind::Fused);

  py::class_<ModelDims>(m, "ModelDims")
      .def(py::init<>())
      .def_readwrite("height", &ModelDims::height)
      .def_readwrite("width", &ModelDims::width)
      .def_readwrite("hidden", &ModelDims::hidden)
      .def_readwrite("embed_dim", &ModelDims::embed_dim)
      .def_readwrite("token_dim", &ModelDims::token_dim)
      .def_readwrite("vocab_size", &ModelDims::vocab_size);

  py::class_<RetrievalModel>(m, "RetrievalModel")
      .def_property_readonly("kind",
                             [](const RetrievalModel& m_) { return m_.kind; });

  m.def("init_model", &init_model, py::arg("kind"), py::arg("dims"), py::arg("seed"));
  m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  m.def("load_model", &load_model, py::arg("path"));

  m.def("encode_image", [](const RetrievalModel& m_, const ImageGrid& v) {
    return encode_image(m_, v).values;
  });
  m.def("encode_text", [](const RetrievalModel& m_, const TokenSeq& t) {
    return encode_text(m_, t).values;
  });
  m.def("score", &score, py::arg("model"), py::arg("image"), py::arg("text"));
  m.def(
      "rank_captions",
      [](const RetrievalModel& m_, const ImageGrid& v, const Dataset& d) {
        return rank(m_, v, d).entries;
      },
      "Rank the caption gallery for an image query");
  m.def(
      "rank_images",
      [](const RetrievalModel& m_, const TokenSeq& t, const Dataset& d) {
        return rank(m_, t, d).entries;
      },
      "Rank the image gallery for a text query");

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("temperature", &TrainConfig::temperature)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("batch", &TrainConfig::batch);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("final_loss", &TrainResult::final_loss)
      .def_readonly("tr_r1", &TrainResult::tr_r1)
      .def_readonly("ir_r1", &TrainResult::ir_r1)
      .def_property_readonly("model",
                             [](const TrainResult& r) { return r.model; });

  m.def("train_contrastive", &train_contrastive, py::arg("model"),
        py::arg("dataset"), py::arg("config"), py::arg("seed"));

  m.def("scale_image", &scale_image, py::arg("image"), py::arg("scale"));

  py::class_<LossVariant>(m, "LossVariant")
      .def(py::init([](bool use_mismatched) {
             return LossVariant{use_mismatched};
           }),
           py::arg("use_mismatched") = true)
      .def_readwrite("use_mismatched", &LossVariant::use_mismatched);

  m.def(
      "text_push_loss",
      [](const RetrievalModel& m_, const TokenSeq& t, const ImageGrid& match,
         const ImageGrid& mismatch, const LossVariant& variant) {
        return text_push_loss(m_, t, match, mismatch, variant);
      },
      py::arg("model"), py::arg("text"), py::arg("v_match"),
      py::arg("v_mismatch"), py::arg("variant") = LossVariant{});
  m.def(
      "image_set_loss",
      [](const RetrievalModel& m_, const ImageGrid& v,
         const std::vector<TokenSeq>& adv, const std::vector<TokenSeq>& mis,
         const std::vector<double>& scales, const LossVariant& variant) {
        return image_set_loss(m_, v, adv, mis, scales_from_list(scales), variant);
      },
      py::arg("model"), py::arg("image"), py::arg("adv_caps"),
      py::arg("mis_caps"), py::arg("scales"), py::arg("variant") = LossVariant{});
  m.def(
      "grad_image_set_loss",
      [](const RetrievalModel& m_, const ImageGrid& v,
         const std::vector<TokenSeq>& adv, const std::vector<TokenSeq>& mis,
         const std::vector<double>& scales, const LossVariant& variant) {
        return grad_image_set_loss(m_, v, adv, mis, scales_from_list(scales),
                                   variant);
      },
      py::arg("model"), py::arg("image"), py::arg("adv_caps"),
      py::arg("mis_caps"), py::arg("scales"), py::arg("variant") = LossVariant{});

  py::class_<ImageAttackBudget>(m, "ImageAttackBudget")
      .def(py::init<>())
      .def_readwrite("epsilon_v", &ImageAttackBudget::epsilon_v)
      .def_readwrite("alpha", &ImageAttackBudget::alpha)
      .def_readwrite("steps", &ImageAttackBudget::steps);

  py::class_<TextAttackBudget>(m, "TextAttackBudget")
      .def(py::init<>())
      .def_readwrite("epsilon_t", &TextAttackBudget::epsilon_t)
      .def_readwrite("candidates_k", &TextAttackBudget::candidates_k);

  m.def(
      "pgd_image_attack",
      [](const RetrievalModel& m_, const ImageGrid& clean, const ImageGrid& init,
         const std::vector<TokenSeq>& adv, const std::vector<TokenSeq>& mis,
         const std::vector<double>& scales, const ImageAttackBudget& budget,
         const LossVariant& variant) {
        return pgd_image_attack(m_, clean, init, adv, mis,
                                scales_from_list(scales), budget, variant);
      },
      py::arg("model"), py::arg("v_clean"), py::arg("v_init"),
      py::arg("adv_caps"), py::arg("mis_caps"), py::arg("scales"),
      py::arg("budget") = ImageAttackBudget{}, py::arg("variant") = LossVariant{});
  m.def(
      "substitution_attack",
      [](const RetrievalModel& m_, const std::function<double(const TokenSeq&)>& loss,
         const TokenSeq& t, const TextAttackBudget& budget) {
        return substitution_attack(m_, loss, t, budget);
      },
      py::arg("model"), py::arg("loss"), py::arg("text"),
      py::arg("budget") = TextAttackBudget{});

  py::enum_<BaselineKind>(m, "BaselineKind")
      .value("PgdOnly", BaselineKind::PgdOnly)
      .value("TextOnly", BaselineKind::TextOnly)
      .value("Sep", BaselineKind::Sep)
      .value("SgaLike", BaselineKind::SgaLike);

  m.def(
      "run_baseline",
      [](BaselineKind kind, const RetrievalModel& surrogate, const Dataset& d,
         uint32_t pair, const ImageAttackBudget& img, const TextAttackBudget& txt,
         const std::vector<double>& scales, uint64_t seed) {
        return run_baseline(kind, surrogate, d, pair, img, txt,
                            scales_from_list(scales), seed);
      },
      py::arg("kind"), py::arg("surrogate"), py::arg("dataset"), py::arg("pair"),
      py::arg("image_budget") = ImageAttackBudget{},
      py::arg("text_budget") = TextAttackBudget{},
      py::arg("scales") = std::vector<double>{0.5, 0.75, 1.0, 1.25, 1.5},
      py::arg("seed") = 0);

  py::enum_<SearchStrategy>(m, "SearchStrategy")
      .value("Full", SearchStrategy::Full)
      .value("TopN", SearchStrategy::TopN);

  py::enum_<StopCondition>(m, "StopCondition")
      .value("Either", StopCondition::Either)
      .value("Both", StopCondition::Both)
      .value("ImageOnly", StopCondition::ImageOnly)
      .value("TextOnly", StopCondition::TextOnly);

  py::class_<SearchConfig>(m, "SearchConfig")
      .def(py::init<>())
      .def_readwrite("strategy", &SearchConfig::strategy)
      .def_readwrite("n_tr", &SearchConfig::n_tr)
      .def_readwrite("n_ir", &SearchConfig::n_ir)
      .def_readwrite("rounds", &SearchConfig::rounds)
      .def_readwrite("stop", &SearchConfig::stop)
      .def_readwrite("reuse_adv_caps", &SearchConfig::reuse_adv_caps);

  py::class_<AttackOutcome>(m, "AttackOutcome")
      .def_property_readonly("v_adv",
                             [](const AttackOutcome& o) { return o.v_adv; })
      .def_property_readonly("t_adv",
                             [](const AttackOutcome& o) { return o.t_adv; })
      .def_readonly("rounds_used", &AttackOutcome::rounds_used)
      .def_readonly("tr_success", &AttackOutcome::tr_success)
      .def_readonly("ir_success", &AttackOutcome::ir_success)
      .def_readonly("target_queries", &AttackOutcome::target_queries);

  m.def(
      "fmms_attack",
      [](const RetrievalModel& surrogate, const RetrievalModel& target,
         const Dataset& d, uint32_t pair, const ImageAttackBudget& img,
         const TextAttackBudget& txt, const std::vector<double>& scales,
         const SearchConfig& search, const LossVariant& variant, uint64_t seed) {
        return fmms_attack(surrogate, target, d, pair, img, txt,
                           scales_from_list(scales), search, PipelineOptions{},
                           variant, seed);
      },
      py::arg("surrogate"), py::arg("target"), py::arg("dataset"), py::arg("pair"),
      py::arg("image_budget") = ImageAttackBudget{},
      py::arg("text_budget") = TextAttackBudget{},
      py::arg("scales") = std::vector<double>{0.5, 0.75, 1.0, 1.25, 1.5},
      py::arg("search") = SearchConfig{}, py::arg("variant") = LossVariant{},
      py::arg("seed") = 0);

  m.def(
      "check_attack_success",
      [](const RetrievalModel& target, const Dataset& d, uint32_t pair,
         const ImageGrid& v_adv, const TokenSeq& t_adv) {
        return check_attack_success(target, d, pair, v_adv, t_adv);
      },
      py::arg("target"), py::arg("dataset"), py::arg("pair"), py::arg("v_adv"),
      py::arg("t_adv"));

  py::enum_<Direction>(m, "Direction")
      .value("ImageToText", Direction::ImageToText)
      .value("TextToImage", Direction::TextToImage);

  m.def(
      "recall_at_k",
      [](const RetrievalModel& m_, const Dataset& d, int k, Direction dir) {
        return recall_at_k(m_, d, k, dir);
      },
      py::arg("model"), py::arg("dataset"), py::arg("k"), py::arg("direction"));

  m.def(
      "run_experiment",
      [](const std::string& config_path) {
        const Config cfg = load_config(config_path);
        const Report report = run_experiment(cfg, cfg.experiment.report);
        py::list rows;
        for (const auto& r : report.rows) {
          py::dict row;
          row["surrogate"] = r.surrogate;
          row["target"] = r.target;
          row["method"] = r.method;
          row["strategy"] = r.strategy;
          row["T"] = r.rounds;
          row["seed"] = r.seed;
          row["tr_r1_clean"] = r.tr_r1_clean;
          row["ir_r1_clean"] = r.ir_r1_clean;
          row["tr_asr"] = r.tr_asr;
          row["tr_denom"] = r.tr_denom;
          row["ir_asr"] = r.ir_asr;
          row["ir_denom"] = r.ir_denom;
          row["mean_target_queries"] = r.mean_target_queries;
          rows.append(row);
        }
        return rows;
      },
      py::arg("config_path"),
      "Run the experiment grid described by a JSON config file");

#ifdef VERSION_INFO
  m.attr("__version__") = VERSION_INFO;
#else
  m.attr("__version__") = "dev";
#endif
}
