#include <httplib.h>

#include "lmmp/backend.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace lmmp {

namespace {

// Splits "scheme://host[:port][/path...]" into origin and path.
std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = url.find('/', host_start);
  if (path_start == std::string::npos) return {url, ""};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string mime_for(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == "jpg" || ext == "jpeg") return "image/jpeg";
  if (ext == "gif") return "image/gif";
  if (ext == "webp") return "image/webp";
  if (ext == "tif" || ext == "tiff") return "image/tiff";
  return "image/png";
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io_error, "cannot open image file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string base64_encode(const std::string& bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < bytes.size()) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                 static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back(alphabet[v & 63]);
    i += 3;
  }
  if (i + 1 == bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == bytes.size()) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

const char* to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    case Role::tool: return "tool";
  }
  return "user";
}

ChatMessage ChatMessage::make_system(std::string text) {
  return ChatMessage{Role::system, std::move(text), {}};
}
ChatMessage ChatMessage::make_user(std::string text, std::optional<std::string> image) {
  return ChatMessage{Role::user, std::move(text), std::move(image)};
}
ChatMessage ChatMessage::make_assistant(std::string text) {
  return ChatMessage{Role::assistant, std::move(text), {}};
}
ChatMessage ChatMessage::make_tool(std::string observation) {
  return ChatMessage{Role::tool, std::move(observation), {}};
}

void BackendConfig::validate() const {
  if (retries < 0) raise(ErrorCode::precondition, "retry count must be >= 0");
  if (!(timeout_s > 0)) raise(ErrorCode::precondition, "timeout must be positive");
}

void AuditLog::append(const Json& request, const std::string& response) {
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) return;  // auditing never fails the call
  Json line = Json::object();
  line["request"] = request;
  line["response"] = response;
  out << line.dump() << "\n";
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  config_.validate();
  auto [origin, path] = split_url(config_.endpoint);
  origin_ = origin;
  path_ = path.empty() || path == "/" ? config_.path : path;
  if (!config_.audit_path.empty())
    audit_ = std::make_shared<AuditLog>(config_.audit_path);
}

Json HttpBackend::build_request(const std::vector<ChatMessage>& messages) const {
  Json body = Json::object();
  body["model"] = config_.model;
  Json msgs = Json::array();
  for (const ChatMessage& m : messages) {
    Json mj = Json::object();
    mj["role"] = to_string(m.role);
    if (m.image_ref) {
      Json parts = Json::array();
      Json text_part = Json::object();
      text_part["type"] = "text";
      text_part["text"] = m.text;
      parts.push_back(std::move(text_part));
      Json image_part = Json::object();
      image_part["type"] = "image_url";
      Json url = Json::object();
      url["url"] = "data:" + mime_for(*m.image_ref) + ";base64," +
                   base64_encode(read_file_bytes(*m.image_ref));
      image_part["image_url"] = std::move(url);
      parts.push_back(std::move(image_part));
      mj["content"] = std::move(parts);
    } else {
      mj["content"] = m.text;
    }
    msgs.push_back(std::move(mj));
  }
  body["messages"] = std::move(msgs);
  body["temperature"] = config_.temperature;
  body["max_tokens"] = config_.max_tokens;
  return body;
}

std::string HttpBackend::complete(const std::string& /*conversation_id*/,
                                  const std::vector<ChatMessage>& messages) {
  if (messages.empty()) raise(ErrorCode::precondition, "message list is empty");
  const char* key = config_.api_key_env.empty() ? nullptr
                                                : std::getenv(config_.api_key_env.c_str());
  if (!key || !*key)
    raise(ErrorCode::auth_missing,
          "API key environment variable not set: " + config_.api_key_env);

  const Json body = build_request(messages);
  const std::string payload = body.dump();

  std::string last_error = "transport failure";
  bool last_was_timeout = false;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.backoff_ms * (1 << (attempt - 1))));
    }
    httplib::Client client(origin_);
    client.set_connection_timeout(std::chrono::duration<double>(config_.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(config_.timeout_s));
    client.set_bearer_token_auth(key);
    auto res = client.Post(path_, payload, "application/json");
    if (!res) {
      auto err = res.error();
      last_was_timeout = err == httplib::Error::ConnectionTimeout ||
                         err == httplib::Error::Read || err == httplib::Error::Write;
      last_error = httplib::to_string(err);
      continue;
    }
    if (res->status >= 500) {
      last_was_timeout = false;
      last_error = "server returned status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      raise(ErrorCode::transport,
            "request failed with status " + std::to_string(res->status) + ": " + res->body);

    Json parsed = Json::parse(res->body, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty())
      raise(ErrorCode::transport, "malformed completion response: " + res->body);
    const Json& msg = parsed["choices"][0].contains("message")
                          ? parsed["choices"][0]["message"]
                          : parsed["choices"][0];
    std::string text;
    if (msg.contains("content") && msg["content"].is_string()) {
      text = msg["content"].get<std::string>();
    } else if (msg.contains("content") && msg["content"].is_array()) {
      for (const Json& part : msg["content"]) {
        if (part.contains("text") && part["text"].is_string())
          text += part["text"].get<std::string>();
      }
    } else {
      raise(ErrorCode::transport, "completion response has no content");
    }
    if (audit_) audit_->append(body, text);
    return text;
  }
  raise(last_was_timeout ? ErrorCode::timeout : ErrorCode::transport,
        "request failed after " + std::to_string(config_.retries + 1) +
            " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::map<std::string, std::vector<std::string>> scripts,
                                 std::optional<std::string> fallback)
    : fallback_(std::move(fallback)) {
  for (auto& [id, responses] : scripts)
    queues_.emplace(id, std::deque<std::string>(responses.begin(), responses.end()));
}

ScriptedBackend::ScriptedBackend(const std::filesystem::path& path, const std::string& section) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io_error, "cannot open script file: " + path.string());
  Json j = Json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object())
    raise(ErrorCode::schema_violation, "script file is not a JSON object: " + path.string());
  const Json* root = &j;
  if (!section.empty()) {
    if (!j.contains(section) || !j.at(section).is_object())
      raise(ErrorCode::schema_violation,
            "script file has no section " + section + ": " + path.string());
    root = &j.at(section);
  }
  for (auto it = root->begin(); it != root->end(); ++it) {
    if (it.key() == "_fallback") {
      if (!it.value().is_string())
        raise(ErrorCode::schema_violation, "_fallback must be a string");
      fallback_ = it.value().get<std::string>();
      continue;
    }
    if (!it.value().is_array())
      raise(ErrorCode::schema_violation, "script for " + it.key() + " is not an array");
    std::deque<std::string> responses;
    for (const Json& r : it.value()) {
      if (!r.is_string())
        raise(ErrorCode::schema_violation, "script for " + it.key() + " has a non-string entry");
      responses.push_back(r.get<std::string>());
    }
    queues_.emplace(it.key(), std::move(responses));
  }
}

void ScriptedBackend::enqueue(const std::string& conversation_id, std::string response) {
  std::lock_guard lock(mu_);
  queues_[conversation_id].push_back(std::move(response));
}

std::string ScriptedBackend::complete(const std::string& conversation_id,
                                      const std::vector<ChatMessage>& messages) {
  if (messages.empty()) raise(ErrorCode::precondition, "message list is empty");
  std::string response;
  {
    std::lock_guard lock(mu_);
    auto it = queues_.find(conversation_id);
    if (it != queues_.end() && !it->second.empty()) {
      response = std::move(it->second.front());
      it->second.pop_front();
    } else if (fallback_) {
      response = *fallback_;
    } else {
      raise(ErrorCode::queue_exhausted,
            "no scripted response left for conversation: " + conversation_id);
    }
  }
  if (audit_) {
    Json req = Json::array();
    for (const ChatMessage& m : messages) {
      Json mj = Json::object();
      mj["role"] = to_string(m.role);
      mj["content"] = m.text;
      if (m.image_ref) mj["image_ref"] = *m.image_ref;
      req.push_back(std::move(mj));
    }
    audit_->append(req, response);
  }
  return response;
}

}  // namespace lmmp
