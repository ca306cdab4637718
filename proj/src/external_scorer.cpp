#include "itb/external_scorer.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>
#include <thread>

#include "itb/errors.hpp"

namespace itb {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kProtocolVersion = 1;

void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] {
    struct sigaction current {};
    if (sigaction(SIGPIPE, nullptr, &current) == 0 && current.sa_handler == SIG_DFL) ::signal(SIGPIPE, SIG_IGN);
  });
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

std::string errno_text() { return std::strerror(errno); }

}  // namespace

ExternalEndpoint ExternalEndpoint::parse(const std::string& spec) {
  ExternalEndpoint e;
  std::string rest = spec;
  if (rest.rfind("external:", 0) == 0) rest = rest.substr(9);
  if (rest.rfind("cmd:", 0) == 0) {
    e.kind = Kind::Process;
    std::istringstream words(rest.substr(4));
    for (std::string w; words >> w;) e.argv.push_back(w);
    if (e.argv.empty()) throw ConfigError("external scorer command is empty");
    return e;
  }
  if (rest.rfind("tcp:", 0) == 0) {
    e.kind = Kind::Tcp;
    const std::string hp = rest.substr(4);
    const auto colon = hp.rfind(':');
    if (colon == std::string::npos || colon == 0) throw ConfigError("tcp endpoint must be tcp:<host>:<port>");
    e.host = hp.substr(0, colon);
    try {
      const long port = std::stol(hp.substr(colon + 1));
      if (port <= 0 || port > 65535) throw std::out_of_range("port");
      e.port = static_cast<std::uint16_t>(port);
    } catch (const std::logic_error&) {
      throw ConfigError("invalid tcp port in '" + spec + "'");
    }
    return e;
  }
  throw ConfigError("external scorer must be cmd:<program ...> or tcp:<host>:<port>, got '" + spec + "'");
}

std::string ExternalEndpoint::describe() const {
  if (kind == Kind::Tcp) return "tcp:" + host + ":" + std::to_string(port);
  std::string s = "cmd:";
  for (std::size_t i = 0; i < argv.size(); ++i) s += (i ? " " : "") + argv[i];
  return s;
}

ExternalScorer::ExternalScorer(const ExternalEndpoint& endpoint, std::optional<ExpectedShape> expected)
    : endpoint_(endpoint) {
  ignore_sigpipe_once();
  if (endpoint_.kind == ExternalEndpoint::Kind::Process) {
    if (endpoint_.argv.empty()) throw ConfigError("external scorer command is empty");
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw ExternalScorerFailure("pipe: " + errno_text());
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw ExternalScorerFailure("pipe: " + errno_text());
    }
    std::vector<char*> args;
    for (auto& a : endpoint_.argv) args.push_back(a.data());
    args.push_back(nullptr);
    const pid_t pid = ::fork();
    if (pid < 0) throw ExternalScorerFailure("fork: " + errno_text());
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execvp(args[0], args.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    child_pid_ = pid;
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  } else {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const int rc = ::getaddrinfo(endpoint_.host.c_str(), std::to_string(endpoint_.port).c_str(), &hints, &res);
    if (rc != 0) throw ExternalScorerFailure("cannot resolve " + endpoint_.host + ": " + ::gai_strerror(rc));
    int fd = -1;
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw ExternalScorerFailure("cannot connect to " + endpoint_.describe());
    read_fd_ = write_fd_ = fd;
    is_socket_ = true;
  }

  json ready;
  try {
    send_line(json{{"type", "hello"}, {"version", kProtocolVersion}}.dump());
    ready = json::parse(read_line());
  } catch (const Timeout&) {
    shutdown();
    throw HandshakeFailed(endpoint_.describe() + ": no ready frame within the timeout");
  } catch (const json::parse_error& e) {
    shutdown();
    throw HandshakeFailed(endpoint_.describe() + ": malformed ready frame: " + e.what());
  } catch (const ExternalScorerFailure& e) {
    shutdown();
    throw HandshakeFailed(endpoint_.describe() + ": " + e.what());
  }
  try {
    if (ready.at("type").get<std::string>() != "ready") throw HandshakeFailed("expected a ready frame");
    info_.n_classes = ready.at("n_classes").get<std::size_t>();
    info_.channels = ready.at("m").get<std::size_t>();
    info_.steps = ready.at("t").get<std::size_t>();
  } catch (const json::exception& e) {
    shutdown();
    throw HandshakeFailed(endpoint_.describe() + ": malformed ready frame: " + e.what());
  } catch (...) {
    shutdown();
    throw;
  }
  if (expected && (expected->n_classes != info_.n_classes || expected->channels != info_.channels ||
                   expected->steps != info_.steps)) {
    shutdown();
    throw HandshakeFailed(endpoint_.describe() + " serves n_classes=" + std::to_string(info_.n_classes) +
                          ", m=" + std::to_string(info_.channels) + ", t=" + std::to_string(info_.steps) +
                          "; the data needs n_classes=" + std::to_string(expected->n_classes) +
                          ", m=" + std::to_string(expected->channels) + ", t=" + std::to_string(expected->steps));
  }
  info_.max_concurrency = 1;
  info_.id = "external:" + endpoint_.describe();
}

ExternalScorer::~ExternalScorer() { shutdown(); }

void ExternalScorer::shutdown() noexcept {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  read_fd_ = write_fd_ = -1;
  if (child_pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(child_pid_, &status, WNOHANG) != 0) {
        child_pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(child_pid_, SIGKILL);
    ::waitpid(child_pid_, &status, 0);
    child_pid_ = -1;
  }
}

void ExternalScorer::send_line(const std::string& line) const {
  const std::string data = line + "\n";
  const auto deadline =
      Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(endpoint_.timeout_seconds));
  std::size_t sent = 0;
  while (sent < data.size()) {
    pollfd p{write_fd_, POLLOUT, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) throw Timeout(endpoint_.describe() + ": write timed out");
    if (rc < 0) throw ExternalScorerFailure("poll: " + errno_text());
    const ssize_t n = is_socket_ ? ::send(write_fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL)
                                 : ::write(write_fd_, data.data() + sent, data.size() - sent);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ExternalScorerFailure(endpoint_.describe() + ": write failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::string ExternalScorer::read_line() const {
  const auto deadline =
      Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(endpoint_.timeout_seconds));
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    pollfd p{read_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) throw Timeout(endpoint_.describe() + ": no response within " +
                               std::to_string(endpoint_.timeout_seconds) + " s");
    if (rc < 0) throw ExternalScorerFailure("poll: " + errno_text());
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw ExternalScorerFailure(endpoint_.describe() + ": read failed: " + errno_text());
    }
    if (n == 0) throw ExternalScorerFailure(endpoint_.describe() + ": connection closed by the scorer");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

Logits ExternalScorer::do_score(std::span<const double> inputs, std::size_t batch) const {
  std::lock_guard lock(mutex_);
  if (broken_) throw ExternalScorerFailure(endpoint_.describe() + ": connection unusable after an earlier failure");
  const std::uint64_t id = next_id_++;
  json response;
  try {
    send_line(json{{"type", "score"},
                   {"id", id},
                   {"batch", batch},
                   {"x", std::vector<double>(inputs.begin(), inputs.end())}}
                  .dump());
    const std::string line = read_line();
    try {
      response = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ProtocolViolation(endpoint_.describe() + ": malformed frame: " + e.what());
    }
  } catch (...) {
    broken_ = true;
    throw;
  }

  try {
    const auto type = response.at("type").get<std::string>();
    const auto rid = response.at("id").get<std::uint64_t>();
    if (rid != id) {
      broken_ = true;
      throw ProtocolViolation("response id " + std::to_string(rid) + " does not match request " + std::to_string(id));
    }
    if (type == "error")
      throw ExternalScorerFailure(endpoint_.describe() + ": " + response.value("msg", std::string("unspecified")));
    if (type != "logits") {
      broken_ = true;
      throw ProtocolViolation("unexpected frame type '" + type + "'");
    }
    Logits out{batch, info_.n_classes, response.at("y").get<std::vector<double>>()};
    if (out.values.size() != batch * info_.n_classes) {
      broken_ = true;
      throw ProtocolViolation("expected " + std::to_string(batch * info_.n_classes) + " logits, got " +
                              std::to_string(out.values.size()));
    }
    for (double v : out.values)
      if (!std::isfinite(v)) throw ProtocolViolation("scorer returned a non-finite logit");
    return out;
  } catch (const json::exception& e) {
    broken_ = true;
    throw ProtocolViolation(endpoint_.describe() + ": malformed frame: " + e.what());
  }
}

}  // namespace itb
