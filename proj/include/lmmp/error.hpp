#pragma once

#include <stdexcept>
#include <string>

namespace lmmp {

enum class ErrorCode {
  // parsing / schema
  no_plan_found,
  schema_violation,
  duplicate_id,
  unparseable,
  io_error,
  // task library
  duplicate_operation,
  not_validated,
  unknown_operation,
  // metrics / preference construction
  empty_input,
  empty_ground_truth,
  insufficient_runs,
  unvalidated_teacher,
  baseline_missing,
  unknown_task,
  positive_logprob,
  // backends / orchestration
  transport,
  auth_missing,
  queue_exhausted,
  timeout,
  plan_unparseable,
  unregistered_tool,
  duplicate_tool,
  // generic precondition violation
  precondition,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace lmmp
