#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "lmmp/plan.hpp"
#include "lmmp/task_library.hpp"

namespace lmmp::testing {

inline std::filesystem::path data_dir() {
#ifdef LMMP_DATA_DIR
  return std::filesystem::path(LMMP_DATA_DIR);
#else
  return std::filesystem::path("data");
#endif
}

// Fresh scratch directory under the system temp root.
inline std::filesystem::path make_temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("lmmp_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter.fetch_add(1)));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Exponential-time LCS oracle: enumerate all subsequences of `a`, keep the
// longest that is also a subsequence of `b`. Usable up to |a| ~ 16.
inline std::size_t lcs_brute_force(const std::vector<std::string>& a,
                                   const std::vector<std::string>& b) {
  auto is_subsequence = [&](const std::vector<std::string>& needle) {
    std::size_t j = 0;
    for (const std::string& x : b) {
      if (j < needle.size() && x == needle[j]) ++j;
    }
    return j == needle.size();
  };
  std::size_t best = 0;
  for (std::size_t mask = 0; mask < (1u << a.size()); ++mask) {
    std::vector<std::string> sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub.push_back(a[i]);
    }
    if (sub.size() > best && is_subsequence(sub)) best = sub.size();
  }
  return best;
}

// detect -> count chain used across library tests.
inline TaskLibrary make_chain_library() {
  TaskLibrary lib;
  MetaTaskDef detect;
  detect.operation = "detect_objects";
  detect.description = "Detect object instances.";
  detect.preconditions = {"rs_image"};
  detect.effects = {"detections"};
  detect.tools = {"ObjectDetection"};
  lib.add(detect);
  MetaTaskDef count;
  count.operation = "count_objects";
  count.description = "Count detected instances.";
  count.preconditions = {"detections"};
  count.effects = {"count"};
  count.tools = {"CountObjects"};
  lib.add(count);
  return lib;
}

inline MetaPlan make_plan(const std::vector<std::string>& operations) {
  MetaPlan plan;
  for (std::size_t i = 0; i < operations.size(); ++i)
    plan.steps.push_back(MetaStep{static_cast<int>(i) + 1, operations[i],
                                  "run " + operations[i]});
  return plan;
}

inline std::vector<std::string> random_tokens(std::mt19937& rng, std::size_t max_len,
                                              int alphabet) {
  std::uniform_int_distribution<std::size_t> len_dist(0, max_len);
  std::uniform_int_distribution<int> sym_dist(0, alphabet - 1);
  std::vector<std::string> out(len_dist(rng));
  for (std::string& s : out) s = std::string(1, static_cast<char>('A' + sym_dist(rng)));
  return out;
}

inline std::vector<std::string> random_unique_tokens(std::mt19937& rng, std::size_t max_len,
                                                     int alphabet) {
  std::vector<std::string> pool;
  for (int i = 0; i < alphabet; ++i) pool.push_back(std::string(1, static_cast<char>('A' + i)));
  for (std::size_t i = 0; i + 1 < pool.size(); ++i) {
    std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
    std::swap(pool[i], pool[d(rng)]);
  }
  std::uniform_int_distribution<std::size_t> len_dist(1, std::min(max_len, pool.size()));
  pool.resize(len_dist(rng));
  return pool;
}

// Random JSON argument value with bounded depth.
inline Json random_arg_value(std::mt19937& rng, int depth = 2) {
  std::uniform_int_distribution<int> kind_dist(0, depth > 0 ? 6 : 4);
  switch (kind_dist(rng)) {
    case 0: return Json(std::uniform_int_distribution<int>(-100, 100)(rng));
    case 1: return Json(std::uniform_real_distribution<double>(-10.0, 10.0)(rng));
    case 2: return Json(std::uniform_int_distribution<int>(0, 1)(rng) == 1);
    case 3: return Json(nullptr);
    case 4: {
      static const char* words[] = {"river", "delta", "ship", "field", "cloud"};
      return Json(std::string(words[std::uniform_int_distribution<int>(0, 4)(rng)]));
    }
    case 5: {
      Json arr = Json::array();
      int n = std::uniform_int_distribution<int>(0, 3)(rng);
      for (int i = 0; i < n; ++i) arr.push_back(random_arg_value(rng, depth - 1));
      return arr;
    }
    default: {
      Json obj = Json::object();
      int n = std::uniform_int_distribution<int>(0, 3)(rng);
      for (int i = 0; i < n; ++i)
        obj["k" + std::to_string(i)] = random_arg_value(rng, depth - 1);
      return obj;
    }
  }
}

inline ToolCall random_tool_call(std::mt19937& rng, int name_pool, int max_keys) {
  ToolCall call;
  call.name = "tool_" + std::to_string(std::uniform_int_distribution<int>(0, name_pool - 1)(rng));
  int n = std::uniform_int_distribution<int>(0, max_keys)(rng);
  for (int i = 0; i < n; ++i)
    call.arguments["arg" + std::to_string(std::uniform_int_distribution<int>(0, 5)(rng))] =
        random_arg_value(rng, 1);
  return call;
}

}  // namespace lmmp::testing
