#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace surgtag {

/// Request/response transport for the external annotation and filter
/// services. Implementations throw TransportError for failures worth
/// retrying and FormatError when the peer answered with something that is not
/// a JSON object. Calls may come from several threads.
class JsonClient {
 public:
  virtual ~JsonClient() = default;
  virtual nlohmann::json request(const nlohmann::json& body) = 0;
};

/// POSTs the request body to `url` (http://host[:port]/path).
class HttpJsonClient : public JsonClient {
 public:
  explicit HttpJsonClient(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(30));
  nlohmann::json request(const nlohmann::json& body) override;

 private:
  std::string host_port_;
  std::string path_;
  std::chrono::milliseconds timeout_;
};

/// Talks to a child process that reads one JSON object per line on stdin and
/// answers with one JSON object per line on stdout. The child is started on
/// first use and restarted after it dies; requests are serialized.
class SubprocessJsonClient : public JsonClient {
 public:
  explicit SubprocessJsonClient(std::vector<std::string> argv,
                                std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~SubprocessJsonClient() override;
  SubprocessJsonClient(const SubprocessJsonClient&) = delete;
  SubprocessJsonClient& operator=(const SubprocessJsonClient&) = delete;

  nlohmann::json request(const nlohmann::json& body) override;

 private:
  void start();
  void stop();

  std::vector<std::string> argv_;
  std::chrono::milliseconds timeout_;
  std::mutex mutex_;
  int pid_ = -1;
  int fd_ = -1;
  std::string buffer_;
};

/// In-process client backed by a callable (mocks and tests).
class FunctionJsonClient : public JsonClient {
 public:
  using Handler = std::function<nlohmann::json(const nlohmann::json&)>;
  explicit FunctionJsonClient(Handler handler) : handler_(std::move(handler)) {}
  nlohmann::json request(const nlohmann::json& body) override { return handler_(body); }

 private:
  Handler handler_;
};

/// Parses one response line; throws FormatError unless it is a JSON object.
nlohmann::json parse_response(const std::string& text);

}  // namespace surgtag
