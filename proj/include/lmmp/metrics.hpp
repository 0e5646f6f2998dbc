#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "lmmp/plan.hpp"

namespace lmmp {

// Discount factor applied to step scores unless overridden.
inline constexpr double kDefaultGamma = 0.9;

// Hierarchical per-step result. The levels gate each other: a wrong tool
// name zeroes the schema and content scores, and a partial schema zeroes
// the content score.
struct StepScore {
  int tsa = 0;       // tool selection accuracy, {0,1}
  double asf1 = 0;   // argument schema F1
  double acf = 0;    // argument content fidelity
};

struct SampleReport {
  double tsa = 0, asf1 = 0, acf = 0;  // discounted step aggregates
  double tao = 0, tio = 0, tem = 0;   // tool-sequence recall metrics
  double faa = 0;                     // final answer accuracy
  std::size_t t = 0;                  // ground-truth trajectory length
  std::vector<std::string> flags;

  Json to_json() const;
};

// Scores a free-form predicted answer for a description-type task.
// Implementations must return values in [0, 1] and be safe for concurrent
// calls (or serialize internally).
class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual double score(const std::string& question, const std::string& gt_answer,
                       const std::vector<std::string>& kips,
                       const std::string& prediction) const = 0;
};

// ---------------------------------------------------------------------------
// Sequence primitives
// ---------------------------------------------------------------------------

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);
std::size_t lcp_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Lowercase, map non-alphanumeric bytes to spaces, split on whitespace.
std::vector<std::string> tokenize(const std::string& text);

// Word-level ROUGE-L F-measure over tokenized inputs.
double rouge_l(const std::string& candidate, const std::string& reference);

// ---------------------------------------------------------------------------
// Step scoring
// ---------------------------------------------------------------------------

// Structural equality with numeric tolerance: integers and booleans compare
// exactly, reals within relative 1e-9, containers recursively (object key
// order ignored).
bool deep_equal(const Json& a, const Json& b);

// Type-aware value score: list ground truth uses set-style F1, string ground
// truth uses ROUGE-L, anything else an exact-equality indicator.
double value_fidelity(const Json& pred, const Json& gt);

StepScore step_score(const ToolCall& pred, const ToolCall& gt);

// Normalized discounted sum: (sum_t gamma^{t-1} s_t) / (sum_t gamma^{t-1}).
// gamma = 1 reduces to the arithmetic mean. Throws Error(empty_input).
double discounted_aggregate(const std::vector<double>& scores, double gamma);

// ---------------------------------------------------------------------------
// Outcome scoring
// ---------------------------------------------------------------------------

struct SequenceScores {
  double tao = 0;  // set recall, any order
  double tio = 0;  // LCS ratio, in order
  double tem = 0;  // longest-common-prefix ratio, exact match
};

SequenceScores sequence_scores(const std::vector<std::string>& pred_names,
                               const std::vector<std::string>& gt_names);

// Answer-extraction knobs for the final-answer protocol. The polarity lexicon
// is deliberately small; extend via config when a dataset needs more.
struct FaaOptions {
  std::vector<std::string> positive_words{"yes", "true", "affirmative"};
  std::vector<std::string> negative_words{"no", "false", "negative"};
  double float_tolerance = 0.05;  // relative, inclusive
};

struct FaaResult {
  double score = 0;
  bool unextractable = false;
};

struct ExtractedNumber {
  double value = 0;
  bool is_integer = false;
};

// Extraction helpers (exposed for tests).
std::optional<char> extract_option_letter(const std::string& text, bool prefer_last);
std::vector<ExtractedNumber> extract_numbers(const std::string& text);
std::optional<bool> extract_polarity(const std::string& text, const FaaOptions& opts);

// Rule-based description scoring: matched key information points / total,
// where a KIP matches when its token sequence appears contiguously in the
// prediction.
double kip_recall(const std::string& prediction, const std::vector<std::string>& kips);

// Task-adaptive final answer accuracy. A null judge falls back to the
// bundled rule-based KIP recall for description tasks.
FaaResult faa_score(const std::string& pred_answer, const TaskRecord& record,
                    const JudgeBackend* judge = nullptr, const FaaOptions& opts = {});

// ---------------------------------------------------------------------------
// Whole-trajectory evaluation (teacher-forcing step alignment)
// ---------------------------------------------------------------------------

SampleReport evaluate_trajectory(const Trajectory& pred, const Trajectory& gt,
                                 const TaskRecord& record, double gamma = kDefaultGamma,
                                 const JudgeBackend* judge = nullptr,
                                 const FaaOptions& faa_opts = {});

}  // namespace lmmp
