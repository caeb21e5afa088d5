#include "toxipipe/scorer.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <unordered_map>

#include "json.hpp"
#include "toxipipe/text.hpp"

namespace toxipipe::classify {

using nlohmann::json;

ScorerEndpoint ScorerEndpoint::parse(std::string_view spec) {
  ScorerEndpoint ep;
  if (spec.starts_with("exec:")) {
    ep.kind = Kind::Exec;
    ep.command = std::string(spec.substr(5));
    if (text::trim(ep.command).empty()) throw ContractError("scorer endpoint: empty command");
    return ep;
  }
  if (spec.starts_with("tcp:")) {
    ep.kind = Kind::Tcp;
    const std::string_view rest = spec.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw ContractError("scorer endpoint: expected tcp:<host>:<port>");
    }
    ep.host = std::string(rest.substr(0, colon));
    const std::string_view port = rest.substr(colon + 1);
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
    if (ec != std::errc() || ptr != port.data() + port.size() || value == 0 || value > 65535) {
      throw ContractError("scorer endpoint: invalid port '" + std::string(port) + "'");
    }
    ep.port = static_cast<std::uint16_t>(value);
    return ep;
  }
  throw ContractError("scorer endpoint must start with exec: or tcp:");
}

bool ScorerEndpoint::looks_like_endpoint(std::string_view spec) {
  return spec.starts_with("exec:") || spec.starts_with("tcp:");
}

std::vector<Prediction> parse_scorer_replies(std::string_view replies,
                                             std::span<const ScoreRequest> batch) {
  std::unordered_map<std::string, std::size_t> pending;
  for (std::size_t i = 0; i < batch.size(); ++i) pending.emplace(batch[i].id, i);
  std::vector<std::optional<Prediction>> slots(batch.size());

  std::size_t pos = 0;
  while (pos < replies.size()) {
    auto end = replies.find('\n', pos);
    if (end == std::string_view::npos) end = replies.size();
    const std::string_view line = text::trim(replies.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty()) continue;
    const auto malformed = [&](const std::string& why) {
      return ScorerError("malformed scorer reply (" + why + "): " + std::string(line));
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw malformed("invalid JSON");
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("scores") ||
        !j["scores"].is_object()) {
      throw malformed("expected {\"id\", \"scores\"}");
    }
    const std::string id = j["id"].get<std::string>();
    const auto it = pending.find(id);
    if (it == pending.end()) {
      throw ScorerError("scorer replied for unknown or repeated id '" + id + "'");
    }
    std::array<double, kNumClasses> scores{};
    double sum = 0.0;
    for (auto c : kAllClasses) {
      const auto& js = j["scores"];
      const std::string key(to_string(c));
      if (!js.contains(key) || !js[key].is_number()) throw malformed("missing score '" + key + "'");
      const double v = js[key].get<double>();
      if (!std::isfinite(v) || v < 0.0) throw malformed("invalid score '" + key + "'");
      scores[index_of(c)] = v;
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-3) {
      throw ScorerError("scores for id '" + id + "' sum to " + std::to_string(sum) +
                        ", outside 1 +/- 1e-3");
    }
    for (double& v : scores) v /= sum;
    slots[it->second] = Prediction::from_scores(id, scores);
    pending.erase(it);
  }
  std::vector<Prediction> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!slots[i]) {
      throw ScorerError("scorer reply is missing id '" + batch[i].id + "' (" +
                        std::to_string(pending.size()) + " missing)");
    }
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd_ = std::exchange(o.fd_, -1);
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::string encode_batch(std::span<const ScoreRequest> batch) {
  std::string out;
  for (const auto& r : batch) {
    out += json{{"id", r.id}, {"text", r.text}}.dump();
    out += '\n';
  }
  return out;
}

// Writes `payload` to write_fd (then closes it, or half-closes a socket) while
// draining read_fd until EOF. Interleaving avoids pipe-buffer deadlock.
std::string exchange(int read_fd, Fd& write_fd, bool socket, const std::string& payload,
                     std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::size_t written = 0;
  std::string reply;
  bool read_open = true;
  if (payload.empty()) {
    if (socket) {
      ::shutdown(write_fd.get(), SHUT_WR);
    } else {
      write_fd.reset();
    }
  }
  char buf[8192];
  while (read_open) {
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      throw ScorerError("scorer timed out after " + std::to_string(timeout.count()) + " ms");
    }
    pollfd fds[2];
    nfds_t n = 0;
    fds[n++] = {read_fd, POLLIN, 0};
    const bool writing = written < payload.size();
    if (writing) fds[n++] = {write_fd.get(), POLLOUT, 0};
    const int rc = ::poll(fds, n, static_cast<int>(remaining.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ScorerError(std::string("poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) continue;
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      const ssize_t got = ::read(read_fd, buf, sizeof buf);
      if (got > 0) {
        reply.append(buf, static_cast<std::size_t>(got));
      } else if (got == 0) {
        read_open = false;
      } else if (errno != EINTR && errno != EAGAIN) {
        throw ScorerError(std::string("read from scorer failed: ") + std::strerror(errno));
      }
    }
    if (writing && n == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t put = socket ? ::send(write_fd.get(), payload.data() + written,
                                          payload.size() - written, MSG_NOSIGNAL)
                                 : ::write(write_fd.get(), payload.data() + written,
                                           payload.size() - written);
      if (put < 0) {
        if (errno == EPIPE) {
          written = payload.size();  // peer closed early; its replies decide the outcome
        } else if (errno != EINTR && errno != EAGAIN) {
          throw ScorerError(std::string("write to scorer failed: ") + std::strerror(errno));
        }
      } else {
        written += static_cast<std::size_t>(put);
      }
      if (written == payload.size()) {
        if (socket) {
          ::shutdown(write_fd.get(), SHUT_WR);
        } else {
          write_fd.reset();
        }
      }
    }
  }
  return reply;
}

std::string run_exec(const ScorerEndpoint& ep, const std::string& payload) {
  // Writing to a scorer that exited must surface as EPIPE, not kill us.
  ::signal(SIGPIPE, SIG_IGN);
  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw ScorerError("pipe failed");
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw ScorerError("pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw ScorerError("fork failed");
  if (pid == 0) {
    // Own process group, so a timeout also reaches whatever the shell started.
    ::setpgid(0, 0);
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", ep.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(to_child[0]);
  ::close(from_child[1]);
  Fd write_fd(to_child[1]);
  Fd read_fd(from_child[0]);
  ::fcntl(write_fd.get(), F_SETFL, ::fcntl(write_fd.get(), F_GETFL) | O_NONBLOCK);
  std::string reply;
  try {
    reply = exchange(read_fd.get(), write_fd, false, payload, ep.timeout);
  } catch (...) {
    ::kill(-pid, SIGKILL);
    ::waitpid(pid, nullptr, 0);
    throw;
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  if (WIFEXITED(status) && WEXITSTATUS(status) == 127) {
    throw ScorerError("scorer command could not be run: " + ep.command);
  }
  return reply;
}

std::string run_tcp(const ScorerEndpoint& ep, const std::string& payload) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw ScorerError("cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  Fd sock;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Fd s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (s.get() < 0) continue;
    if (::connect(s.get(), ai->ai_addr, ai->ai_addrlen) == 0) {
      sock = std::move(s);
      break;
    }
  }
  ::freeaddrinfo(res);
  if (sock.get() < 0) {
    throw ScorerError("cannot connect to scorer at " + ep.host + ":" + port);
  }
  ::fcntl(sock.get(), F_SETFL, ::fcntl(sock.get(), F_GETFL) | O_NONBLOCK);
  return exchange(sock.get(), sock, true, payload, ep.timeout);
}

}  // namespace

std::vector<Prediction> external_score(std::span<const ScoreRequest> batch,
                                       const ScorerEndpoint& endpoint) {
  if (batch.empty()) return {};
  const std::string payload = encode_batch(batch);
  const std::string reply = endpoint.kind == ScorerEndpoint::Kind::Exec
                                ? run_exec(endpoint, payload)
                                : run_tcp(endpoint, payload);
  return parse_scorer_replies(reply, batch);
}

}  // namespace toxipipe::classify
