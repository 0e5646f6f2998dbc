#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lmmp/plan.hpp"

namespace lmmp {

enum class Role { system, user, assistant, tool };

const char* to_string(Role role);

struct ChatMessage {
  Role role = Role::user;
  std::string text;
  std::optional<std::string> image_ref;  // user role only; inlined by HTTP backends

  static ChatMessage make_system(std::string text);
  static ChatMessage make_user(std::string text, std::optional<std::string> image = {});
  static ChatMessage make_assistant(std::string text);
  static ChatMessage make_tool(std::string observation);
};

struct BackendConfig {
  std::string endpoint;  // origin or full URL; a path component overrides `path`
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "LMMP_API_KEY";
  double temperature = 0.0;
  int max_tokens = 1024;
  double timeout_s = 60.0;
  int retries = 2;
  int backoff_ms = 250;
  int max_image_dim = 1024;  // advisory metadata; images pass through undecoded
  std::string audit_path;   // optional transcript log

  void validate() const;
};

// Append-only transcript sink: one request/response pair per line.
class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {}
  void append(const Json& request, const std::string& response);

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;

  // Returns the assistant text for the given message history. The
  // conversation id routes scripted responses; HTTP backends ignore it.
  virtual std::string complete(const std::string& conversation_id,
                               const std::vector<ChatMessage>& messages) = 0;
};

// OpenAI-compatible chat-completions client. Retries transport failures and
// 5xx responses with exponential backoff; images are inlined as base64
// data-URI parts.
class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig config);

  std::string complete(const std::string& conversation_id,
                       const std::vector<ChatMessage>& messages) override;

  // Request body for a message list (exposed for tests).
  Json build_request(const std::vector<ChatMessage>& messages) const;

 private:
  BackendConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;
  std::shared_ptr<AuditLog> audit_;
};

// Deterministic mock: per-conversation response queues consumed in order,
// with an optional fallback for unknown or exhausted conversations.
class ScriptedBackend : public ChatBackend {
 public:
  ScriptedBackend() = default;
  ScriptedBackend(std::map<std::string, std::vector<std::string>> scripts,
                  std::optional<std::string> fallback = {});

  // File format: {"<conversation_id>": ["response", ...], "_fallback": "..."}
  // or the same map nested under `section`.
  ScriptedBackend(const std::filesystem::path& path, const std::string& section = {});

  void enqueue(const std::string& conversation_id, std::string response);
  void set_fallback(std::string response) { fallback_ = std::move(response); }
  void set_audit(std::shared_ptr<AuditLog> audit) { audit_ = std::move(audit); }

  std::string complete(const std::string& conversation_id,
                       const std::vector<ChatMessage>& messages) override;

 private:
  std::map<std::string, std::deque<std::string>> queues_;
  std::optional<std::string> fallback_;
  std::shared_ptr<AuditLog> audit_;
  std::mutex mu_;
};

std::string base64_encode(const std::string& bytes);

}  // namespace lmmp
