// Acceptance harness: every criterion runs as its own registered test and
// prints one PASS/FAIL line. A fixture step prepares the shared dataset and
// trained checkpoints under --fixture-dir.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "acceptance_criteria.hpp"

int main(int argc, char** argv) {
  std::string fixture_dir;
  std::string criterion;
  bool setup = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--fixture-dir") == 0 && i + 1 < argc) {
      fixture_dir = argv[++i];
    } else if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
      criterion = argv[++i];
    } else if (std::strcmp(argv[i], "--setup") == 0) {
      setup = true;
    } else {
      std::fprintf(stderr,
                   "usage: fmms_acceptance --fixture-dir DIR"
                   " [--setup | --criterion AC-k]\n");
      return 2;
    }
  }
  if (fixture_dir.empty()) {
    std::fprintf(stderr, "missing --fixture-dir\n");
    return 2;
  }

  if (setup) {
    try {
      acceptance::prepare_fixture(fixture_dir);
      std::printf("fixture: PASS\n");
      return 0;
    } catch (const std::exception& e) {
      std::printf("fixture: FAIL (%s)\n", e.what());
      return 1;
    }
  }

  const auto& registry = acceptance::criteria();
  std::vector<std::string> to_run;
  if (!criterion.empty()) {
    if (!registry.count(criterion)) {
      std::fprintf(stderr, "unknown criterion %s\n", criterion.c_str());
      return 2;
    }
    to_run.push_back(criterion);
  } else {
    for (const auto& [name, fn] : registry) to_run.push_back(name);
  }

  int failures = 0;
  for (const auto& name : to_run) {
    const auto t0 = std::chrono::steady_clock::now();
    acceptance::Result result;
    try {
      result = registry.at(name)(fixture_dir);
    } catch (const std::exception& e) {
      result.ok = false;
      result.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::printf("%s: %s (%s; %.1fs)\n", name.c_str(),
                result.ok ? "PASS" : "FAIL", result.detail.c_str(), secs);
    std::fflush(stdout);
    if (!result.ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
