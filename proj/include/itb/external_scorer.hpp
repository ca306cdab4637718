#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "itb/models.hpp"

namespace itb {

// Where an external scorer lives. Textual forms:
//   cmd:<program> [args...]   child process speaking over stdin/stdout
//   tcp:<host>:<port>         already-running server
struct ExternalEndpoint {
  enum class Kind { Process, Tcp };
  Kind kind = Kind::Process;
  std::vector<std::string> argv;
  std::string host;
  std::uint16_t port = 0;
  double timeout_seconds = 60.0;

  static ExternalEndpoint parse(const std::string& spec);
  std::string describe() const;
};

// Shape the caller requires; any mismatch with the server's ready frame is a
// HandshakeFailed.
struct ExpectedShape {
  std::size_t n_classes = 0;
  std::size_t channels = 0;
  std::size_t steps = 0;
};

// Scorer backed by the newline-delimited JSON protocol:
//   -> {"type":"hello","version":1}
//   <- {"type":"ready","n_classes":K,"m":M,"t":T}
//   -> {"type":"score","id":n,"batch":B,"x":[...]}
//   <- {"type":"logits","id":n,"y":[...]}  or  {"type":"error","id":n,"msg":"..."}
// Requests are serialised per connection; info().max_concurrency is 1.
class ExternalScorer final : public Scorer {
 public:
  explicit ExternalScorer(const ExternalEndpoint& endpoint, std::optional<ExpectedShape> expected = std::nullopt);
  ~ExternalScorer() override;
  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  const ScorerInfo& info() const override { return info_; }

 protected:
  Logits do_score(std::span<const double> inputs, std::size_t batch) const override;

 private:
  void send_line(const std::string& line) const;
  std::string read_line() const;
  void shutdown() noexcept;

  ExternalEndpoint endpoint_;
  ScorerInfo info_;
  int read_fd_ = -1;
  int write_fd_ = -1;
  int child_pid_ = -1;
  bool is_socket_ = false;
  mutable std::string buffer_;
  mutable std::uint64_t next_id_ = 1;
  mutable std::mutex mutex_;
  mutable bool broken_ = false;
};

}  // namespace itb
