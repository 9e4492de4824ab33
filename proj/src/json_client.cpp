#include "surgtag/json_client.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "httplib.h"
#include "surgtag/errors.hpp"

namespace surgtag {

nlohmann::json parse_response(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("response is not valid JSON");
  if (!j.is_object()) throw FormatError("response is not a JSON object");
  return j;
}

HttpJsonClient::HttpJsonClient(std::string url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ConfigError("only http:// URLs are supported: " + url);
  const auto slash = url.find('/', scheme.size());
  host_port_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
  if (host_port_.size() == scheme.size()) throw ConfigError("URL has no host: " + url);
}

nlohmann::json HttpJsonClient::request(const nlohmann::json& body) {
  httplib::Client client(host_port_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) throw TransportError("HTTP request to " + host_port_ + path_ + " failed: " + httplib::to_string(res.error()));
  if (res->status >= 500) throw TransportError("HTTP " + std::to_string(res->status) + " from " + host_port_ + path_);
  if (res->status != 200) throw FormatError("HTTP " + std::to_string(res->status) + " from " + host_port_ + path_);
  return parse_response(res->body);
}

SubprocessJsonClient::SubprocessJsonClient(std::vector<std::string> argv, std::chrono::milliseconds timeout)
    : argv_(std::move(argv)), timeout_(timeout) {
  if (argv_.empty()) throw ConfigError("subprocess client needs a command");
}

SubprocessJsonClient::~SubprocessJsonClient() { stop(); }

void SubprocessJsonClient::start() {
  int fds[2];
  if (socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw TransportError(std::string("socketpair failed: ") + std::strerror(errno));
  }
  std::vector<char*> args;
  for (auto& a : argv_) args.push_back(a.data());
  args.push_back(nullptr);
  const pid_t pid = fork();
  if (pid < 0) {
    close(fds[0]);
    close(fds[1]);
    throw TransportError(std::string("fork failed: ") + std::strerror(errno));
  }
  if (pid == 0) {
    dup2(fds[1], STDIN_FILENO);
    dup2(fds[1], STDOUT_FILENO);
    execvp(args[0], args.data());
    _exit(127);
  }
  close(fds[1]);
  pid_ = pid;
  fd_ = fds[0];
  buffer_.clear();
}

void SubprocessJsonClient::stop() {
  if (fd_ >= 0) close(fd_);
  fd_ = -1;
  if (pid_ > 0) {
    kill(pid_, SIGTERM);
    waitpid(pid_, nullptr, 0);
  }
  pid_ = -1;
  buffer_.clear();
}

nlohmann::json SubprocessJsonClient::request(const nlohmann::json& body) {
  std::lock_guard<std::mutex> lock(mutex_);
  if (fd_ < 0) start();
  const std::string line = body.dump() + "\n";
  std::size_t sent = 0;
  while (sent < line.size()) {
    const ssize_t n = send(fd_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw TransportError("subprocess " + argv_[0] + " is not accepting requests");
    }
    sent += static_cast<std::size_t>(n);
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::size_t newline;
  while ((newline = buffer_.find('\n')) == std::string::npos) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    pollfd p{fd_, POLLIN, 0};
    const int ready = left.count() > 0 ? poll(&p, 1, static_cast<int>(left.count())) : 0;
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) {
      stop();
      throw TransportError("subprocess " + argv_[0] + " timed out");
    }
    char chunk[4096];
    const ssize_t n = read(fd_, chunk, sizeof(chunk));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw TransportError("subprocess " + argv_[0] + " closed its output");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
  std::string response = buffer_.substr(0, newline);
  buffer_.erase(0, newline + 1);
  return parse_response(response);
}

}  // namespace surgtag
