#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fmms/attack.hpp"
#include "fmms/data.hpp"
#include "fmms/model.hpp"

namespace fmms {

enum class SearchStrategy { Full, TopN };

// Which subtask success ends the feedback loop. Either is the literal
// reading of the stop test; the others isolate one subtask.
enum class StopCondition { Either, Both, ImageOnly, TextOnly };

struct SearchConfig {
  SearchStrategy strategy = SearchStrategy::TopN;
  int n_tr = 10;
  int n_ir = 5;
  int rounds = 10;  // T, counting the initial generation
  StopCondition stop = StopCondition::Either;
  bool reuse_adv_caps = false;  // keep round 0's adversarial caption set

  void check() const;
};

// Feedback-derived candidate pools: B_tr holds image indices retrieved by
// the adversarial text, B_ir caption indices retrieved by the adversarial
// image.
struct SearchSpaces {
  std::vector<uint32_t> b_tr;
  std::vector<uint32_t> b_ir;
};

struct AttackOutcome {
  ImageGrid v_adv;
  TokenSeq t_adv;
  int rounds_used = 0;
  bool tr_success = false;
  bool ir_success = false;
  int target_queries = 0;  // 2 per success check + 2 per space construction
};

bool outcomes_equal(const AttackOutcome& a, const AttackOutcome& b);

// tr: top-1 caption for v_adv leaves the pair's ground truth;
// ir: top-1 image for t_adv is not the pair's image.
std::pair<bool, bool> check_attack_success(const Ranker& target,
                                           const Dataset& d, uint32_t pair,
                                           const ImageGrid& v_adv,
                                           const TokenSeq& t_adv);
std::pair<bool, bool> check_attack_success(const RetrievalModel& target,
                                           const Dataset& d, uint32_t pair,
                                           const ImageGrid& v_adv,
                                           const TokenSeq& t_adv);

SearchSpaces build_search_spaces(const Ranker& target, const Dataset& d,
                                 const ImageGrid& v_adv, const TokenSeq& t_adv,
                                 const SearchConfig& cfg);

// Uniform draw from the feedback spaces minus the pair's own image and
// ground-truth captions; falls back to the full gallery when an exclusion
// empties a space. The caption expands to its owner's full caption set.
MismatchSelection select_mismatched(const SearchSpaces& spaces, const Dataset& d,
                                    uint32_t pair, Rng& rng);

// The full feedback loop. Deterministic in (inputs, seed): round t draws
// from a stream derived from (seed, pair, t) only, so runs with different
// round budgets share their common prefix.
AttackOutcome fmms_attack(const RetrievalModel& surrogate, const Ranker& target,
                          const Dataset& d, uint32_t pair,
                          const ImageAttackBudget& image_budget,
                          const TextAttackBudget& text_budget, const ScaleSet& s,
                          const SearchConfig& search, const PipelineOptions& opts,
                          LossVariant variant, uint64_t seed);
AttackOutcome fmms_attack(const RetrievalModel& surrogate,
                          const RetrievalModel& target, const Dataset& d,
                          uint32_t pair, const ImageAttackBudget& image_budget,
                          const TextAttackBudget& text_budget, const ScaleSet& s,
                          const SearchConfig& search, const PipelineOptions& opts,
                          LossVariant variant, uint64_t seed);

}  // namespace fmms
