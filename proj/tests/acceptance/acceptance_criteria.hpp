#pragma once

#include <functional>
#include <map>
#include <string>

namespace acceptance {

struct Result {
  bool ok = false;
  std::string detail;
};

using Criterion = std::function<Result(const std::string& fixture_dir)>;

// Generates the default dataset and trains the aligned/fused checkpoints
// used by the experiment-level criteria.
void prepare_fixture(const std::string& fixture_dir);

const std::map<std::string, Criterion>& criteria();

}  // namespace acceptance
