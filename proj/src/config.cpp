#include "fmms/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fmms/error.hpp"
#include "fmms/rng.hpp"

namespace fmms {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

uint64_t hash_tag(const char* tag) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* p = tag; *p; ++p) {
    h ^= static_cast<unsigned char>(*p);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Typed accessors over one JSON object; tracks visited keys so typos
// surface as ConfigError instead of being ignored.
class Section {
 public:
  Section(const json& j, std::string prefix)
      : obj_(&j), prefix_(std::move(prefix)) {
    if (!j.is_object()) throw ConfigError(prefix_, "expected an object at " + prefix_);
  }

  bool has(const std::string& key) { return obj_->contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!obj_->contains(key)) return fallback;
    return typed<T>(key);
  }

  template <typename T>
  std::optional<T> opt(const std::string& key) {
    if (!obj_->contains(key) || (*obj_)[key].is_null()) {
      if (obj_->contains(key)) seen_.insert(key);
      return std::nullopt;
    }
    return typed<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    if (!obj_->contains(key))
      throw ConfigError(full(key), "missing required config key: " + full(key));
    return typed<T>(key);
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return (*obj_)[key];
  }

  void finish() {
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!seen_.count(it.key()))
        throw ConfigError(full(it.key()), "unknown config key: " + full(it.key()));
    }
  }

  std::string full(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

 private:
  template <typename T>
  T typed(const std::string& key) {
    seen_.insert(key);
    try {
      return (*obj_)[key].get<T>();
    } catch (const json::exception&) {
      throw ConfigError(full(key), "wrong type for config key: " + full(key));
    }
  }

  const json* obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

ModelKind parse_kind(const std::string& s, const std::string& key) {
  if (s == "aligned") return ModelKind::Aligned;
  if (s == "fused") return ModelKind::Fused;
  throw ConfigError(key, "model kind must be 'aligned' or 'fused': " + key);
}

MethodSpec parse_method(const std::string& s, const std::string& key) {
  MethodSpec m;
  m.label = s;
  if (s == "pgd") m.method = Method::PgdOnly;
  else if (s == "text") m.method = Method::TextOnly;
  else if (s == "sep") m.method = Method::Sep;
  else if (s == "sga") m.method = Method::SgaLike;
  else if (s == "fmms") m.method = Method::Fmms;
  else if (s == "fmms-full") {
    m.method = Method::Fmms;
    m.strategy = SearchStrategy::Full;
  } else if (s == "fmms-topn") {
    m.method = Method::Fmms;
    m.strategy = SearchStrategy::TopN;
  } else {
    throw ConfigError(key, "unknown attack method '" + s + "' at " + key);
  }
  return m;
}

SearchStrategy parse_strategy(const std::string& s, const std::string& key) {
  if (s == "full") return SearchStrategy::Full;
  if (s == "topn") return SearchStrategy::TopN;
  throw ConfigError(key, "strategy must be 'full' or 'topn': " + key);
}

StopCondition parse_stop(const std::string& s, const std::string& key) {
  if (s == "either") return StopCondition::Either;
  if (s == "both") return StopCondition::Both;
  if (s == "image") return StopCondition::ImageOnly;
  if (s == "text") return StopCondition::TextOnly;
  throw ConfigError(key, "stop must be either/both/image/text: " + key);
}

}  // namespace

uint64_t Config::effective_data_seed() const {
  return data_seed ? *data_seed : mix_seed({global_seed, hash_tag("data")});
}

uint64_t Config::effective_train_seed(size_t model_index) const {
  if (model_index < models.size() && models[model_index].seed)
    return *models[model_index].seed;
  const uint64_t base =
      train_seed ? *train_seed : mix_seed({global_seed, hash_tag("train")});
  return mix_seed({base, static_cast<uint64_t>(model_index)});
}

ModelDims Config::model_dims() const {
  ModelDims dims;
  dims.height = data.height;
  dims.width = data.width;
  dims.vocab_size = data.vocab_size;
  dims.hidden = model_hidden;
  dims.embed_dim = model_embed_dim;
  dims.token_dim = model_token_dim > 0 ? model_token_dim : data.vocab_size;
  return dims;
}

const ModelSpec& Config::model_by_id(const std::string& id) const {
  for (const auto& m : models)
    if (m.id == id) return m;
  throw ConfigError("train.models", "no model with id '" + id + "'");
}

Config parse_config(const std::string& json_text) {
  json root_json;
  try {
    root_json = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("config is not valid JSON: ") + e.what());
  }

  Config cfg;
  Section root(root_json, "");
  cfg.global_seed = root.get<uint64_t>("seed", 0);

  {
    Section s(root.raw("data"), "data");
    cfg.data_path = s.require<std::string>("path");
    cfg.data.classes = s.get<int>("classes", cfg.data.classes);
    cfg.data.images = s.get<int>("images", cfg.data.images);
    cfg.data.captions_per_image =
        s.get<int>("captions_per_image", cfg.data.captions_per_image);
    cfg.data.height = s.get<int>("height", cfg.data.height);
    cfg.data.width = s.get<int>("width", cfg.data.width);
    cfg.data.vocab_size = s.get<int>("vocab_size", cfg.data.vocab_size);
    cfg.data.caption_length = s.get<int>("caption_length", cfg.data.caption_length);
    cfg.data.image_noise = s.get<double>("image_noise", cfg.data.image_noise);
    cfg.data.class_token_pool_size =
        s.get<int>("class_token_pool_size", cfg.data.class_token_pool_size);
    cfg.data_seed = s.opt<uint64_t>("seed");
    s.finish();
  }

  if (root.has("model")) {
    Section s(root.raw("model"), "model");
    cfg.model_hidden = s.get<int>("hidden", cfg.model_hidden);
    cfg.model_embed_dim = s.get<int>("embed_dim", cfg.model_embed_dim);
    cfg.model_token_dim = s.get<int>("token_dim", cfg.model_token_dim);
    s.finish();
  }

  if (root.has("train")) {
    Section s(root.raw("train"), "train");
    cfg.train.temperature = s.get<double>("temperature", cfg.train.temperature);
    cfg.train.learning_rate =
        s.get<double>("learning_rate", cfg.train.learning_rate);
    cfg.train.steps = s.get<int>("steps", cfg.train.steps);
    cfg.train.batch = s.get<int>("batch", cfg.train.batch);
    cfg.train_seed = s.opt<uint64_t>("seed");
    if (s.has("models")) {
      const json& arr = s.raw("models");
      if (!arr.is_array())
        throw ConfigError("train.models", "train.models must be an array");
      for (size_t i = 0; i < arr.size(); ++i) {
        const std::string prefix = "train.models[" + std::to_string(i) + "]";
        Section ms(arr[i], prefix);
        ModelSpec spec;
        spec.id = ms.require<std::string>("id");
        spec.kind = parse_kind(ms.require<std::string>("kind"), prefix + ".kind");
        spec.checkpoint = ms.require<std::string>("checkpoint");
        spec.seed = ms.opt<uint64_t>("seed");
        ms.finish();
        cfg.models.push_back(std::move(spec));
      }
    }
    s.finish();
  }

  if (root.has("attack")) {
    Section s(root.raw("attack"), "attack");
    cfg.image_budget.epsilon_v = s.get<double>("epsilon_v", cfg.image_budget.epsilon_v);
    cfg.image_budget.alpha = s.get<double>("alpha", cfg.image_budget.alpha);
    cfg.image_budget.steps = s.get<int>("image_steps", cfg.image_budget.steps);
    cfg.text_budget.epsilon_t = s.get<int>("epsilon_t", cfg.text_budget.epsilon_t);
    cfg.text_budget.candidates_k =
        s.get<int>("candidates_k", cfg.text_budget.candidates_k);
    cfg.scales = s.get<std::vector<double>>("scales", cfg.scales);
    cfg.variant.use_mismatched =
        s.get<bool>("use_mismatched", cfg.variant.use_mismatched);
    cfg.pipeline.image_restart =
        s.get<bool>("image_restart", cfg.pipeline.image_restart);
    cfg.pipeline.tadv_from_adv_caption =
        s.get<bool>("tadv_from_adv_caption", cfg.pipeline.tadv_from_adv_caption);
    s.finish();
  }

  if (root.has("search")) {
    Section s(root.raw("search"), "search");
    if (s.has("strategy"))
      cfg.search.strategy =
          parse_strategy(s.get<std::string>("strategy", "topn"), "search.strategy");
    cfg.search.n_tr = s.get<int>("n_tr", cfg.search.n_tr);
    cfg.search.n_ir = s.get<int>("n_ir", cfg.search.n_ir);
    cfg.search.rounds = s.get<int>("rounds", cfg.search.rounds);
    if (s.has("stop"))
      cfg.search.stop = parse_stop(s.get<std::string>("stop", "either"), "search.stop");
    cfg.search.reuse_adv_caps =
        s.get<bool>("reuse_adv_caps", cfg.search.reuse_adv_caps);
    s.finish();
  }

  if (root.has("experiment")) {
    Section s(root.raw("experiment"), "experiment");
    cfg.experiment.surrogates =
        s.get<std::vector<std::string>>("surrogates", {});
    cfg.experiment.targets = s.get<std::vector<std::string>>("targets", {});
    const auto method_names = s.get<std::vector<std::string>>("methods", {});
    for (size_t i = 0; i < method_names.size(); ++i)
      cfg.experiment.methods.push_back(parse_method(
          method_names[i], "experiment.methods[" + std::to_string(i) + "]"));
    cfg.experiment.rounds_values =
        s.get<std::vector<int>>("rounds_values", {});
    cfg.experiment.seeds =
        s.get<std::vector<uint64_t>>("seeds", cfg.experiment.seeds);
    cfg.experiment.workers = s.get<int>("workers", 0);
    cfg.experiment.pairs_limit = s.get<int>("pairs_limit", 0);
    cfg.experiment.report = s.get<std::string>("report", "");
    s.finish();
  }
  root.finish();

  if (cfg.experiment.rounds_values.empty())
    cfg.experiment.rounds_values = {cfg.search.rounds};
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string dump_config(const Config& cfg) {
  ordered_json j;
  j["seed"] = cfg.global_seed;
  j["data"] = {{"path", cfg.data_path},
               {"classes", cfg.data.classes},
               {"images", cfg.data.images},
               {"captions_per_image", cfg.data.captions_per_image},
               {"height", cfg.data.height},
               {"width", cfg.data.width},
               {"vocab_size", cfg.data.vocab_size},
               {"caption_length", cfg.data.caption_length},
               {"image_noise", cfg.data.image_noise},
               {"class_token_pool_size", cfg.data.class_token_pool_size},
               {"seed", cfg.effective_data_seed()}};
  j["model"] = {{"hidden", cfg.model_hidden},
                {"embed_dim", cfg.model_embed_dim},
                {"token_dim", cfg.model_dims().token_dim}};
  ordered_json models = ordered_json::array();
  for (size_t i = 0; i < cfg.models.size(); ++i) {
    const auto& m = cfg.models[i];
    models.push_back(
        {{"id", m.id},
         {"kind", m.kind == ModelKind::Fused ? "fused" : "aligned"},
         {"checkpoint", m.checkpoint},
         {"seed", cfg.effective_train_seed(i)}});
  }
  j["train"] = {{"temperature", cfg.train.temperature},
                {"learning_rate", cfg.train.learning_rate},
                {"steps", cfg.train.steps},
                {"batch", cfg.train.batch},
                {"models", models}};
  j["attack"] = {{"epsilon_v", cfg.image_budget.epsilon_v},
                 {"alpha", cfg.image_budget.alpha},
                 {"image_steps", cfg.image_budget.steps},
                 {"epsilon_t", cfg.text_budget.epsilon_t},
                 {"candidates_k", cfg.text_budget.candidates_k},
                 {"scales", cfg.scales},
                 {"use_mismatched", cfg.variant.use_mismatched},
                 {"image_restart", cfg.pipeline.image_restart},
                 {"tadv_from_adv_caption", cfg.pipeline.tadv_from_adv_caption}};
  const char* stop = "either";
  switch (cfg.search.stop) {
    case StopCondition::Either: stop = "either"; break;
    case StopCondition::Both: stop = "both"; break;
    case StopCondition::ImageOnly: stop = "image"; break;
    case StopCondition::TextOnly: stop = "text"; break;
  }
  j["search"] = {
      {"strategy", cfg.search.strategy == SearchStrategy::Full ? "full" : "topn"},
      {"n_tr", cfg.search.n_tr},
      {"n_ir", cfg.search.n_ir},
      {"rounds", cfg.search.rounds},
      {"stop", stop},
      {"reuse_adv_caps", cfg.search.reuse_adv_caps}};
  std::vector<std::string> method_names;
  for (const auto& m : cfg.experiment.methods) method_names.push_back(m.label);
  // workers is an execution detail with no effect on results; it stays out
  // of the archived config so reruns compare byte-for-byte.
  j["experiment"] = {{"surrogates", cfg.experiment.surrogates},
                     {"targets", cfg.experiment.targets},
                     {"methods", method_names},
                     {"rounds_values", cfg.experiment.rounds_values},
                     {"seeds", cfg.experiment.seeds},
                     {"pairs_limit", cfg.experiment.pairs_limit},
                     {"report", cfg.experiment.report}};
  return j.dump(2) + "\n";
}

}  // namespace fmms
