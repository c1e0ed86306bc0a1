#include "fmms/eval.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "fmms/error.hpp"

namespace fmms {

double recall_at_k(const Ranker& ranker, const Dataset& d, int k, Direction dir) {
  if (k < 1) throw InvalidConfigError("recall_at_k: k must be >= 1");
  size_t hits = 0;
  if (dir == Direction::ImageToText) {
    for (size_t i = 0; i < d.num_images(); ++i) {
      const RankedList ranked = ranker.rank(d.images[i]);
      const size_t take = std::min<size_t>(k, ranked.entries.size());
      for (size_t r = 0; r < take; ++r) {
        if (d.is_ground_truth(static_cast<uint32_t>(i), ranked.entries[r].first)) {
          ++hits;
          break;
        }
      }
    }
    return static_cast<double>(hits) / static_cast<double>(d.num_images());
  }
  for (size_t c = 0; c < d.num_captions(); ++c) {
    const RankedList ranked = ranker.rank(d.captions[c]);
    const size_t take = std::min<size_t>(k, ranked.entries.size());
    for (size_t r = 0; r < take; ++r) {
      if (ranked.entries[r].first == d.caption_owner[c]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(d.num_captions());
}

double recall_at_k(const RetrievalModel& m, const Dataset& d, int k, Direction dir) {
  return recall_at_k(Ranker(m, d), d, k, dir);
}

double attack_success_rate(const std::vector<AttackOutcome>& outcomes,
                           const std::vector<char>& clean_correct,
                           Subtask subtask) {
  if (outcomes.size() != clean_correct.size())
    throw ShapeMismatchError("attack_success_rate: list sizes differ");
  size_t denom = 0;
  size_t num = 0;
  for (size_t i = 0; i < outcomes.size(); ++i) {
    if (!clean_correct[i]) continue;
    ++denom;
    const bool flag = subtask == Subtask::TR ? outcomes[i].tr_success
                                             : outcomes[i].ir_success;
    if (flag) ++num;
  }
  if (denom == 0)
    throw EmptyDenominatorError(
        "attack_success_rate: no clean-correct pair in the gallery");
  return static_cast<double>(num) / static_cast<double>(denom);
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);  // exact double round trip
  return buf;
}

// Runs fn(i) for every index, spread over `workers` threads. The result
// layout is fixed by index, so worker count never changes any output.
void parallel_for_indices(int workers, size_t count,
                          const std::function<void(size_t)>& fn) {
  if (workers <= 1 || count <= 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= count || failed.load()) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = std::min<int>(workers, static_cast<int>(count));
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct TargetState {
  const RetrievalModel* model = nullptr;
  std::unique_ptr<Ranker> ranker;
  std::vector<char> tr_mask;  // pair's clean top-1 caption is ground truth
  std::vector<char> ir_mask;  // pair's first caption retrieves the pair
  double tr_r1 = 0.0;
  double ir_r1 = 0.0;
};

BaselineKind to_baseline(Method m) {
  switch (m) {
    case Method::PgdOnly: return BaselineKind::PgdOnly;
    case Method::TextOnly: return BaselineKind::TextOnly;
    case Method::Sep: return BaselineKind::Sep;
    case Method::SgaLike: return BaselineKind::SgaLike;
    case Method::Fmms: break;
  }
  throw InvalidConfigError("not a baseline method");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::PgdOnly: return "pgd";
    case Method::TextOnly: return "text";
    case Method::Sep: return "sep";
    case Method::SgaLike: return "sga";
    case Method::Fmms: return "fmms";
  }
  return "?";
}

}  // namespace

std::string report_csv_header() {
  return "surrogate,target,method,strategy,T,seed,tr_r1_clean,ir_r1_clean,"
         "tr_asr,tr_denom,ir_asr,ir_denom,mean_target_queries";
}

std::string format_report_row(const ReportRow& r) {
  std::ostringstream out;
  out << r.surrogate << ',' << r.target << ',' << r.method << ',' << r.strategy
      << ',' << r.rounds << ',' << r.seed << ',' << fmt_double(r.tr_r1_clean)
      << ',' << fmt_double(r.ir_r1_clean) << ',' << fmt_double(r.tr_asr) << ','
      << r.tr_denom << ',' << fmt_double(r.ir_asr) << ',' << r.ir_denom << ','
      << fmt_double(r.mean_target_queries);
  return out.str();
}

Report read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty report: " + path);
  if (line != report_csv_header())
    throw FormatVersionMismatchError("unexpected report header in " + path);
  Report report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 13) throw IoError("malformed report row in " + path);
    ReportRow r;
    r.surrogate = cells[0];
    r.target = cells[1];
    r.method = cells[2];
    r.strategy = cells[3];
    r.rounds = std::stoi(cells[4]);
    r.seed = std::stoull(cells[5]);
    r.tr_r1_clean = std::stod(cells[6]);
    r.ir_r1_clean = std::stod(cells[7]);
    r.tr_asr = std::stod(cells[8]);
    r.tr_denom = std::stoi(cells[9]);
    r.ir_asr = std::stod(cells[10]);
    r.ir_denom = std::stoi(cells[11]);
    r.mean_target_queries = std::stod(cells[12]);
    report.rows.push_back(std::move(r));
  }
  return report;
}

Report run_experiment(const Config& cfg, const std::string& report_path,
                      bool verbose) {
  if (report_path.empty())
    throw ConfigError("experiment.report", "missing report output path");
  if (cfg.experiment.surrogates.empty())
    throw ConfigError("experiment.surrogates", "no surrogate models configured");
  if (cfg.experiment.targets.empty())
    throw ConfigError("experiment.targets", "no target models configured");
  if (cfg.experiment.methods.empty())
    throw ConfigError("experiment.methods", "no attack methods configured");
  if (cfg.experiment.seeds.empty())
    throw ConfigError("experiment.seeds", "no seeds configured");

  const Dataset dataset = load_dataset(cfg.data_path);
  const ScaleSet scales = cfg.scale_set();

  std::map<std::string, RetrievalModel> models;
  auto ensure_model = [&](const std::string& id) {
    if (!models.count(id))
      models.emplace(id, load_model(cfg.model_by_id(id).checkpoint));
  };
  for (const auto& id : cfg.experiment.surrogates) ensure_model(id);
  for (const auto& id : cfg.experiment.targets) ensure_model(id);

  const size_t n_pairs =
      cfg.experiment.pairs_limit > 0
          ? std::min<size_t>(cfg.experiment.pairs_limit, dataset.num_images())
          : dataset.num_images();

  std::map<std::string, TargetState> targets;
  for (const auto& id : cfg.experiment.targets) {
    if (targets.count(id)) continue;
    TargetState st;
    st.model = &models.at(id);
    st.ranker = std::make_unique<Ranker>(*st.model, dataset);
    st.tr_r1 = recall_at_k(*st.ranker, dataset, 1, Direction::ImageToText);
    st.ir_r1 = recall_at_k(*st.ranker, dataset, 1, Direction::TextToImage);
    st.tr_mask.resize(n_pairs);
    st.ir_mask.resize(n_pairs);
    for (size_t i = 0; i < n_pairs; ++i) {
      const uint32_t top_cap = st.ranker->rank(dataset.images[i]).top1();
      st.tr_mask[i] =
          dataset.is_ground_truth(static_cast<uint32_t>(i), top_cap);
      const uint32_t top_img =
          st.ranker->rank(dataset.captions[dataset.first_caption(
                              static_cast<uint32_t>(i))])
              .top1();
      st.ir_mask[i] = top_img == i;
    }
    targets.emplace(id, std::move(st));
  }

  const int workers = cfg.experiment.workers > 0
                          ? cfg.experiment.workers
                          : std::max(1u, std::thread::hardware_concurrency());

  Report report;
  for (const auto& surrogate_id : cfg.experiment.surrogates) {
    const RetrievalModel& surrogate = models.at(surrogate_id);
    for (const auto& target_id : cfg.experiment.targets) {
      const TargetState& target = targets.at(target_id);
      for (const auto& method : cfg.experiment.methods) {
        const bool is_fmms = method.method == Method::Fmms;
        const std::vector<int> t_grid =
            is_fmms ? cfg.experiment.rounds_values : std::vector<int>{1};
        for (int t_rounds : t_grid) {
          for (uint64_t seed : cfg.experiment.seeds) {
            const auto t0 = std::chrono::steady_clock::now();
            std::vector<AttackOutcome> outcomes(n_pairs);

            SearchConfig search = cfg.search;
            if (method.strategy) search.strategy = *method.strategy;
            search.rounds = t_rounds;

            parallel_for_indices(workers, n_pairs, [&](size_t i) {
              const uint32_t pair = static_cast<uint32_t>(i);
              if (!target.tr_mask[i] && !target.ir_mask[i]) return;
              if (is_fmms) {
                outcomes[i] = fmms_attack(
                    surrogate, *target.ranker, dataset, pair, cfg.image_budget,
                    cfg.text_budget, scales, search, cfg.pipeline, cfg.variant,
                    seed);
              } else {
                auto [v_adv, t_adv] = run_baseline(
                    to_baseline(method.method), surrogate, dataset, pair,
                    cfg.image_budget, cfg.text_budget, scales, seed);
                AttackOutcome o;
                const auto [tr, ir] = check_attack_success(
                    *target.ranker, dataset, pair, v_adv, t_adv);
                o.v_adv = std::move(v_adv);
                o.t_adv = std::move(t_adv);
                o.rounds_used = 1;
                o.tr_success = tr;
                o.ir_success = ir;
                o.target_queries = 0;
                outcomes[i] = std::move(o);
              }
            });

            ReportRow row;
            row.surrogate = surrogate_id;
            row.target = target_id;
            row.method = method_name(method.method);
            row.strategy = is_fmms ? (search.strategy == SearchStrategy::Full
                                          ? "full"
                                          : "topn")
                                   : "-";
            row.rounds = is_fmms ? t_rounds : 1;
            row.seed = seed;
            row.tr_r1_clean = target.tr_r1;
            row.ir_r1_clean = target.ir_r1;
            row.tr_asr = attack_success_rate(outcomes, target.tr_mask, Subtask::TR);
            row.ir_asr = attack_success_rate(outcomes, target.ir_mask, Subtask::IR);
            row.tr_denom = 0;
            row.ir_denom = 0;
            for (size_t i = 0; i < n_pairs; ++i) {
              row.tr_denom += target.tr_mask[i] ? 1 : 0;
              row.ir_denom += target.ir_mask[i] ? 1 : 0;
            }
            double queries = 0.0;
            size_t attacked = 0;
            for (size_t i = 0; i < n_pairs; ++i) {
              if (!target.tr_mask[i] && !target.ir_mask[i]) continue;
              queries += outcomes[i].target_queries;
              ++attacked;
            }
            row.mean_target_queries =
                attacked ? queries / static_cast<double>(attacked) : 0.0;
            row.runtime_s = std::chrono::duration<double>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
            if (verbose) {
              std::fprintf(stderr,
                           "[fmms] %s->%s %s/%s T=%d seed=%llu: TR %.4f IR %.4f"
                           " (%.1fs)\n",
                           row.surrogate.c_str(), row.target.c_str(),
                           row.method.c_str(), row.strategy.c_str(), row.rounds,
                           static_cast<unsigned long long>(row.seed), row.tr_asr,
                           row.ir_asr, row.runtime_s);
            }
            report.rows.push_back(std::move(row));
          }
        }
      }
    }
  }

  std::ofstream out(report_path, std::ios::trunc);
  if (!out) throw IoError("cannot write report: " + report_path);
  out << report_csv_header() << "\n";
  for (const auto& row : report.rows) out << format_report_row(row) << "\n";
  out.flush();
  if (!out) throw IoError("write failed: " + report_path);

  std::ofstream sidecar(report_path + ".config.json", std::ios::trunc);
  if (!sidecar) throw IoError("cannot write report sidecar");
  sidecar << dump_config(cfg);
  sidecar.flush();
  if (!sidecar) throw IoError("write failed: report sidecar");

  return report;
}

}  // namespace fmms
