#pragma once

// Client for the Isabelle server: TCP with a password handshake, one line or
// length-prefixed messages, asynchronous tasks correlated by task id. Each
// pool slot owns one connection and one prover session.

#include <arpa/inet.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "hybridprover/checker.hpp"
#include "hybridprover/result.hpp"
#include "json.hpp"

namespace hybridprover::isabelle {

using checker::Clock;
using checker::Seconds;
using checker::Verdict;
using checker::VerdictStatus;

struct ServerInfo {
  std::string name;
  std::string host;
  int port = 0;
  std::string password;
};

/// Parses a line printed by `isabelle server`, e.g.
///   server "isabelle" = 127.0.0.1:4711 (password "4fd5a2bb-...")
inline std::optional<ServerInfo> parse_server_info(std::string_view line) {
  static const std::regex re(R"re(server\s+"([^"]*)"\s*=\s*([^:\s]+):(\d+)\s*\(password\s+"([^"]*)"\))re");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(line.begin(), line.end(), m, re)) return std::nullopt;
  return ServerInfo{m[1].str(), m[2].str(), std::stoi(m[3].str()), m[4].str()};
}

struct IsabelleConfig {
  std::string host = "127.0.0.1";
  int port = 0;
  std::string password;
  std::string session = "HOL";
  std::vector<std::string> session_dirs;
  std::string work_dir;  // theory files are written here; must be readable by the server
  double connect_timeout = 10;
  double session_start_timeout = 900;
  double grace = 5;
};

/// A server message: "NAME argument", the argument usually a JSON value.
struct Message {
  std::string name;
  nlohmann::json arg;
  std::string raw_arg;
};

inline Message parse_message(std::string_view text) {
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.remove_suffix(1);
  Message m;
  const auto sp = text.find(' ');
  m.name = std::string(text.substr(0, sp));
  if (sp != std::string_view::npos) {
    m.raw_arg = std::string(text.substr(sp + 1));
    m.arg = nlohmann::json::parse(m.raw_arg, nullptr, false);
    if (m.arg.is_discarded()) m.arg = m.raw_arg;
  }
  return m;
}

enum class IoStatus { Ok, Closed, Timeout, Stopped, Error };

/// Blocking socket with deadline- and stop-aware reads.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd) : fd_(fd) {}
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  Connection(Connection&& o) noexcept : fd_(std::exchange(o.fd_, -1)), buf_(std::move(o.buf_)) {}
  Connection& operator=(Connection&& o) noexcept {
    close();
    fd_ = std::exchange(o.fd_, -1);
    buf_ = std::move(o.buf_);
    return *this;
  }
  ~Connection() { close(); }

  bool open() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    buf_.clear();
  }

  static Result<Connection, std::string> connect(const std::string& host, int port, double timeout) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
      return unexpected(std::string("cannot resolve ") + host + ": " + ::gai_strerror(rc));
    std::string last = "no address";
    for (addrinfo* a = res; a; a = a->ai_next) {
      int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0) continue;
      timeval tv{static_cast<time_t>(timeout), static_cast<suseconds_t>((timeout - static_cast<long>(timeout)) * 1e6)};
      ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
        ::freeaddrinfo(res);
        return Connection(fd);
      }
      last = std::strerror(errno);
      ::close(fd);
    }
    ::freeaddrinfo(res);
    return unexpected("cannot connect to " + host + ":" + std::to_string(port) + ": " + last);
  }

  IoStatus write_all(std::string_view data) {
    while (!data.empty()) {
      const auto n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return IoStatus::Error;
      data.remove_prefix(static_cast<std::size_t>(n));
    }
    return IoStatus::Ok;
  }

  /// Sends a message as one line, or length-prefixed if it contains a newline.
  IoStatus send_message(std::string_view text) {
    if (text.find('\n') == std::string_view::npos) return write_all(std::string(text) + "\n");
    return write_all(std::to_string(text.size()) + "\n" + std::string(text));
  }

  /// Next message, reading a length-prefixed body when the line is a number.
  IoStatus read_message(std::string& out, Clock::time_point deadline, std::stop_token stop) {
    std::string line;
    if (auto s = read_line(line, deadline, stop); s != IoStatus::Ok) return s;
    if (!line.empty() && line.find_first_not_of("0123456789") == std::string::npos) {
      const std::size_t n = std::stoul(line);
      return read_exact(out, n, deadline, stop);
    }
    out = std::move(line);
    return IoStatus::Ok;
  }

 private:
  IoStatus fill(Clock::time_point deadline, std::stop_token stop) {
    for (;;) {
      if (stop.stop_requested()) return IoStatus::Stopped;
      const auto now = Clock::now();
      if (now >= deadline) return IoStatus::Timeout;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left + 1, 50)));
      if (rc < 0 && errno == EINTR) continue;
      if (rc < 0) return IoStatus::Error;
      if (rc == 0) continue;
      char chunk[8192];
      const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n == 0) return IoStatus::Closed;
      if (n < 0) return IoStatus::Error;
      buf_.append(chunk, static_cast<std::size_t>(n));
      return IoStatus::Ok;
    }
  }

  IoStatus read_line(std::string& out, Clock::time_point deadline, std::stop_token stop) {
    std::size_t nl;
    while ((nl = buf_.find('\n')) == std::string::npos)
      if (auto s = fill(deadline, stop); s != IoStatus::Ok) return s;
    out = buf_.substr(0, nl);
    if (!out.empty() && out.back() == '\r') out.pop_back();
    buf_.erase(0, nl + 1);
    return IoStatus::Ok;
  }

  IoStatus read_exact(std::string& out, std::size_t n, Clock::time_point deadline, std::stop_token stop) {
    while (buf_.size() < n)
      if (auto s = fill(deadline, stop); s != IoStatus::Ok) return s;
    out = buf_.substr(0, n);
    buf_.erase(0, n);
    return IoStatus::Ok;
  }

  int fd_ = -1;
  std::string buf_;
};

/// Outcome of an asynchronous server task.
struct TaskResult {
  enum class Kind { Finished, Failed, Cancelled, TimedOut, ProtocolError } kind = Kind::ProtocolError;
  nlohmann::json result;
  std::string detail;
};

inline Clock::time_point after(double seconds) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(Seconds(seconds));
}

/// One connection plus the prover session started on it.
class SessionClient {
 public:
  explicit SessionClient(const IsabelleConfig& cfg) : cfg_(cfg) {}

  const std::optional<std::string>& session_id() const { return session_id_; }

  /// Connects (if needed), authenticates and starts the session (if needed).
  Result<void*, std::string> ensure(std::stop_token stop) {
    if (!conn_.open()) {
      auto c = Connection::connect(cfg_.host, cfg_.port, cfg_.connect_timeout);
      if (!c) return unexpected(c.error());
      conn_ = std::move(*c);
      if (conn_.send_message(cfg_.password) != IoStatus::Ok) return fail("cannot send password");
      std::string reply;
      if (conn_.read_message(reply, after(cfg_.connect_timeout), stop) != IoStatus::Ok)
        return fail("no handshake reply");
      auto m = parse_message(reply);
      if (m.name != "OK") return fail("handshake rejected: " + reply);
    }
    if (!session_id_) {
      nlohmann::json args = {{"session", cfg_.session}};
      if (!cfg_.session_dirs.empty()) args["dirs"] = cfg_.session_dirs;
      auto r = run_task("session_start", args, cfg_.session_start_timeout, stop);
      if (r.kind != TaskResult::Kind::Finished) return fail("session_start failed: " + r.detail);
      if (!r.result.contains("session_id")) return fail("session_start returned no session_id");
      session_id_ = r.result["session_id"].get<std::string>();
    }
    return nullptr;
  }

  /// Synchronous command: "OK <json>" or "ERROR <json>".
  Result<nlohmann::json, std::string> call(const std::string& name, const nlohmann::json& args, double timeout) {
    if (conn_.send_message(name + " " + args.dump()) != IoStatus::Ok) return unexpected(std::string("send failed"));
    std::string reply;
    const auto deadline = after(timeout);
    for (;;) {
      if (conn_.read_message(reply, deadline, {}) != IoStatus::Ok) return unexpected(std::string("no reply to " + name));
      auto m = parse_message(reply);
      if (m.name == "OK") return m.arg;
      if (m.name == "ERROR") return unexpected(m.raw_arg);
      // NOTE/FINISHED of other tasks cannot occur: one command at a time per connection.
    }
  }

  /// Asynchronous command. On stop, the task is cancelled and the call waits up
  /// to the grace period for the server to acknowledge; after that the
  /// connection is dropped (the session itself survives on the server).
  TaskResult run_task(const std::string& name, const nlohmann::json& args, double timeout, std::stop_token stop,
                      std::vector<nlohmann::json>* notes = nullptr) {
    TaskResult out;
    if (conn_.send_message(name + " " + args.dump()) != IoStatus::Ok) {
      conn_.close();
      out.detail = "send failed";
      return out;
    }
    std::string reply;
    const auto hard_deadline = after(timeout + 2 * cfg_.grace);
    if (conn_.read_message(reply, hard_deadline, {}) != IoStatus::Ok) {
      conn_.close();
      out.detail = "no reply to " + name;
      return out;
    }
    auto ack = parse_message(reply);
    if (ack.name == "ERROR") {
      out.kind = TaskResult::Kind::Failed;
      out.result = ack.arg;
      out.detail = ack.raw_arg;
      return out;
    }
    if (ack.name != "OK" || !ack.arg.is_object() || !ack.arg.contains("task")) {
      conn_.close();
      out.detail = "unexpected reply: " + reply;
      return out;
    }
    const auto task = ack.arg["task"];
    std::optional<Clock::time_point> cancel_deadline;
    bool cancelled = false;
    for (;;) {
      const auto deadline = cancel_deadline ? *cancel_deadline : hard_deadline;
      const auto s = conn_.read_message(reply, deadline, cancelled ? std::stop_token{} : stop);
      if (s == IoStatus::Stopped || (s == IoStatus::Timeout && !cancelled)) {
        // Interrupt the task and keep reading until the server confirms.
        cancelled = true;
        cancel_deadline = after(cfg_.grace);
        if (conn_.send_message("cancel " + nlohmann::json{{"task", task}}.dump()) != IoStatus::Ok) break;
        continue;
      }
      if (s != IoStatus::Ok) break;
      auto m = parse_message(reply);
      const bool ours = m.arg.is_object() && m.arg.contains("task") && m.arg["task"] == task;
      if (m.name == "NOTE") {
        if (ours && notes) notes->push_back(m.arg);
        continue;
      }
      if (!ours) continue;  // OK for the cancel command, or stray replies
      if (m.name == "FINISHED") {
        out.kind = cancelled ? TaskResult::Kind::Cancelled : TaskResult::Kind::Finished;
        out.result = m.arg;
        return out;
      }
      if (m.name == "FAILED") {
        const bool interrupt = m.arg.is_object() && m.arg.value("kind", std::string{}) == "interrupt";
        out.kind = cancelled || interrupt ? TaskResult::Kind::Cancelled : TaskResult::Kind::Failed;
        out.result = m.arg;
        out.detail = m.arg.is_object() ? m.arg.value("message", m.raw_arg) : m.raw_arg;
        return out;
      }
    }
    conn_.close();
    out.kind = cancelled ? TaskResult::Kind::Cancelled : TaskResult::Kind::ProtocolError;
    out.detail = cancelled ? "task did not acknowledge cancel" : "connection lost";
    return out;
  }

  void stop_session() {
    if (conn_.open() && session_id_) {
      run_task("session_stop", {{"session_id", *session_id_}}, cfg_.grace, {});
    }
    session_id_.reset();
    conn_.close();
  }

 private:
  Result<void*, std::string> fail(std::string detail) {
    conn_.close();
    return unexpected(std::move(detail));
  }

  const IsabelleConfig& cfg_;
  Connection conn_;
  std::optional<std::string> session_id_;
};

/// Verdict from a use_theories result: Valid iff the call succeeded and every
/// node is fully processed with no failure.
inline Verdict verdict_from_use_theories(const nlohmann::json& r, std::string* output = nullptr) {
  auto first_error = [&]() -> std::optional<std::pair<std::string, std::optional<std::size_t>>> {
    auto scan = [](const nlohmann::json& msgs) -> std::optional<std::pair<std::string, std::optional<std::size_t>>> {
      if (!msgs.is_array()) return std::nullopt;
      for (const auto& m : msgs) {
        if (m.value("kind", std::string{}) != "error") continue;
        std::optional<std::size_t> pos;
        if (m.contains("pos") && m["pos"].contains("offset") && m["pos"]["offset"].get<long>() > 0)
          pos = static_cast<std::size_t>(m["pos"]["offset"].get<long>() - 1);  // server offsets are 1-based
        return std::make_pair(m.value("message", std::string{}), pos);
      }
      return std::nullopt;
    };
    if (auto e = scan(r.value("errors", nlohmann::json::array()))) return e;
    for (const auto& n : r.value("nodes", nlohmann::json::array()))
      if (auto e = scan(n.value("messages", nlohmann::json::array()))) return e;
    return std::nullopt;
  };
  if (output) {
    for (const auto& n : r.value("nodes", nlohmann::json::array()))
      for (const auto& m : n.value("messages", nlohmann::json::array())) *output += m.value("message", std::string{}) + "\n";
  }
  bool canceled = false;
  bool complete = true;
  for (const auto& n : r.value("nodes", nlohmann::json::array())) {
    const auto st = n.value("status", nlohmann::json::object());
    canceled = canceled || st.value("canceled", false);
    complete = complete && st.value("ok", true) && st.value("unprocessed", 0) == 0 && st.value("running", 0) == 0;
  }
  if (canceled) return Verdict::make(VerdictStatus::Timeout, "theory processing canceled");
  if (auto e = first_error()) return Verdict::make(VerdictStatus::Invalid, e->first, e->second);
  if (!r.value("ok", false) || !complete) return Verdict::make(VerdictStatus::Invalid, "theory not fully processed");
  return Verdict::make(VerdictStatus::Valid);
}

/// Renames the theory in a document produced by wrap_theory.
inline std::string rename_theory(std::string_view doc, const std::string& name) {
  static constexpr std::string_view kHead = "theory ";
  const auto at = doc.find(kHead);
  if (at == std::string_view::npos) return std::string(doc);
  const auto name_start = at + kHead.size();
  const auto name_end = doc.find_first_of(" \t\n", name_start);
  return std::string(doc.substr(0, name_start)) + name + std::string(doc.substr(name_end));
}

class IsabelleBackend : public checker::ProverBackend {
 public:
  IsabelleBackend(IsabelleConfig cfg, std::size_t slots) : cfg_(std::move(cfg)) {
    if (cfg_.work_dir.empty())
      cfg_.work_dir = (std::filesystem::temp_directory_path() / ("hybridprover-" + std::to_string(::getpid()))).string();
    std::filesystem::create_directories(cfg_.work_dir);
    for (std::size_t i = 0; i < std::max<std::size_t>(1, slots); ++i)
      clients_.push_back(std::make_unique<SessionClient>(cfg_));
  }

  ~IsabelleBackend() override {
    for (auto& c : clients_) c->stop_session();
  }

  Verdict check(const checker::CheckRequest& r, std::size_t slot, std::stop_token stop) override {
    return use(r, slot, stop, nullptr);
  }

  checker::HammerOutput hammer(const checker::CheckRequest& r, std::size_t slot, std::stop_token stop) override {
    checker::HammerOutput out;
    std::string output;
    out.verdict = use(r, slot, stop, &output);
    out.suggestions = checker::parse_try_this(output);
    return out;
  }

  bool restart(std::size_t slot) override {
    auto& c = *clients_.at(slot % clients_.size());
    c.stop_session();
    return static_cast<bool>(c.ensure({}));
  }

 private:
  Verdict use(const checker::CheckRequest& r, std::size_t slot, std::stop_token stop, std::string* output) {
    auto& client = *clients_.at(slot % clients_.size());
    if (auto ok = client.ensure(stop); !ok) return Verdict::make(VerdictStatus::CheckerError, ok.error());
    const std::string name = "HP_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++);
    const auto path = std::filesystem::path(cfg_.work_dir) / (name + ".thy");
    {
      std::ofstream f(path);
      f << rename_theory(r.theory_text, name);
      if (!f) return Verdict::make(VerdictStatus::CheckerError, "cannot write " + path.string());
    }
    nlohmann::json args = {{"session_id", *client.session_id()},
                           {"theories", {name}},
                           {"master_dir", cfg_.work_dir},
                           {"watchdog_timeout", r.timeout}};
    auto t = client.run_task("use_theories", args, r.timeout, stop);
    Verdict v;
    switch (t.kind) {
      case TaskResult::Kind::Finished: v = verdict_from_use_theories(t.result, output); break;
      case TaskResult::Kind::Cancelled: v = Verdict::make(VerdictStatus::Cancelled, t.detail); break;
      case TaskResult::Kind::TimedOut: v = Verdict::make(VerdictStatus::Timeout, t.detail); break;
      case TaskResult::Kind::Failed:
      case TaskResult::Kind::ProtocolError: v = Verdict::make(VerdictStatus::CheckerError, t.detail); break;
    }
    if (client.session_id()) {
      (void)client.call("purge_theories", {{"session_id", *client.session_id()}, {"theories", {name}}, {"master_dir", cfg_.work_dir}},
                        cfg_.grace);
    }
    std::error_code ec;
    std::filesystem::remove(path, ec);
    return v;
  }

  IsabelleConfig cfg_;
  std::vector<std::unique_ptr<SessionClient>> clients_;
  std::atomic<std::size_t> counter_{0};
};

}  // namespace hybridprover::isabelle
