#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmmp/metrics.hpp"
#include "lmmp/plan.hpp"
#include "lmmp/task_library.hpp"

namespace lmmp {

// Per-step reward mix over the three step metrics. Equal thirds by default.
struct RewardWeights {
  double tsa = 1.0 / 3.0;
  double asf1 = 1.0 / 3.0;
  double acf = 1.0 / 3.0;

  void validate() const;  // non-negative, sum 1
};

// One candidate plan with its scalar reward per execution run.
struct CandidateScores {
  std::string task_id;
  std::string plan_id;
  MetaPlan plan;
  std::vector<double> runs;  // rewards in [0,1]
};

// Raw per-run step scores, kept so rewards can be recomputed under any gamma.
struct CandidateRuns {
  std::string task_id;
  std::string plan_id;
  MetaPlan plan;
  std::vector<std::vector<StepScore>> runs;  // runs x steps

  static CandidateRuns from_json(const Json& j);
  CandidateScores rewards(double gamma, const RewardWeights& weights = {}) const;
};

enum class PairSource { self_generated, teacher_augmented };

const char* to_string(PairSource source);

struct PreferencePair {
  std::string task_id;
  std::string winner;  // plan id
  std::string loser;   // plan id
  double winner_mean = 0;
  double loser_mean = 0;
  std::optional<double> p_value;  // absent for teacher anchors
  PairSource source = PairSource::self_generated;
  MetaPlan winner_plan;
  MetaPlan loser_plan;
};

struct SweepEntry {
  double gamma = 0;
  int npp = 0;      // number of preference pairs
  double sor = 0;   // sample overlap rate vs baseline
  int ptr = 0;      // preference turn rate vs baseline
};

struct SweepReport {
  double baseline = 0;
  std::vector<SweepEntry> entries;
  std::vector<std::string> flags;

  Json to_json() const;
};

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

// Step-aware discounted reward: per-step composite of TSA/ASF1/ACF,
// aggregated with gamma^{t-1} weighting over the ground-truth steps.
double trajectory_reward(const Trajectory& pred, const Trajectory& gt, double gamma,
                         const RewardWeights& weights = {});

// Same aggregation over precomputed step scores.
double composite_reward(const std::vector<StepScore>& steps, double gamma,
                        const RewardWeights& weights = {});

// ---------------------------------------------------------------------------
// Pair construction
// ---------------------------------------------------------------------------

struct PairOptions {
  double alpha = 0.05;
  int min_runs = 3;
};

// One-sided Mann-Whitney U p-value for "greater stochastically dominates
// lesser". Exact permutation enumeration when both samples have <= 8 runs,
// tie-corrected normal approximation above.
double mann_whitney_p(const std::vector<double>& greater, const std::vector<double>& lesser);

// Emits a self-generated pair per candidate pair within a task whenever one
// side dominates with p <= alpha; never both directions. Candidates with
// fewer than min_runs runs raise Error(insufficient_runs).
std::vector<PreferencePair> build_pairs(const std::vector<CandidateScores>& candidates,
                                        const PairOptions& opts = {});

// Teacher-anchored pairs: the validated teacher plan wins against every
// candidate whose mean reward trails the teacher mean by at least margin.
// Throws Error(unvalidated_teacher) when the plan fails library validation.
std::vector<PreferencePair> add_teacher_anchors(const std::string& task_id,
                                                const std::vector<CandidateScores>& candidates,
                                                const MetaPlan& teacher_plan,
                                                const std::vector<double>& teacher_runs,
                                                const TaskLibrary& lib, double margin = 0.05);

// 50/50 self/teacher dataset composition, downsampling the larger side with
// a seeded deterministic shuffle.
std::vector<PreferencePair> mix_pairs(std::vector<PreferencePair> self_pairs,
                                      std::vector<PreferencePair> teacher_pairs,
                                      std::uint64_t seed);

// Recomputes rewards and pairs for each gamma and reports pair-set stability
// diagnostics against the baseline gamma (which must be in gammas).
SweepReport gamma_sweep(const std::vector<CandidateRuns>& raw, const std::vector<double>& gammas,
                        double baseline, const PairOptions& opts = {},
                        const RewardWeights& weights = {});

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

struct ExportMeta {
  double gamma = kDefaultGamma;
  RewardWeights weights;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  // Adapter defaults carried into dataset metadata for downstream trainers.
  int lora_rank = 32;
  int lora_alpha = 16;
};

// Writes one training pair per line: prompt from the task record, chosen and
// rejected serialized plans, and reproducibility metadata. Returns the number
// of lines written.
std::size_t export_dpo_dataset(const std::vector<PreferencePair>& pairs,
                               const std::map<std::string, TaskRecord>& records,
                               const std::filesystem::path& path, const ExportMeta& meta = {});

// ---------------------------------------------------------------------------
// Reference objectives
// ---------------------------------------------------------------------------

// Negative log-likelihood of one sequence: -(sum of token logprobs).
double sft_nll(const std::vector<double>& token_logprobs);

// Preference loss -log sigmoid(r_w - r_l) with implicit rewards
// r = beta * (logp_policy - logp_ref), computed in softplus form.
double dpo_loss(double logp_w_policy, double logp_w_ref, double logp_l_policy,
                double logp_l_ref, double beta = 0.1);

}  // namespace lmmp
