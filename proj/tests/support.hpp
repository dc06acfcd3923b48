#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <httplib.h>
#include <json.hpp>
#include <arpa/inet.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <mutex>
#include <stdexcept>
#include <chrono>
#include <cstdio>
#include <thread>
#include <vector>

#include "slidestream/image.hpp"
#include "slidestream/pyramid.hpp"

namespace slidestream::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("slidestream-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Raster random_raster(std::int64_t w, std::int64_t h, std::uint64_t seed) {
  Raster r;
  r.width = w;
  r.height = h;
  r.channels = 3;
  r.pixels.resize(static_cast<std::size_t>(w * h * 3));
  std::mt19937_64 rng(seed);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
  return r;
}

/// Real-valued mean of the source block that level pixel (x, y) covers at
/// `downsample`, clipped to the source.
inline double block_mean(const Raster& src, std::int64_t downsample, std::int64_t x, std::int64_t y,
                         int channel) {
  const std::int64_t x0 = x * downsample, y0 = y * downsample;
  const std::int64_t x1 = std::min(x0 + downsample, src.width);
  const std::int64_t y1 = std::min(y0 + downsample, src.height);
  double sum = 0;
  for (std::int64_t yy = y0; yy < y1; ++yy) {
    for (std::int64_t xx = x0; xx < x1; ++xx) sum += src.pixels[((yy * src.width) + xx) * 3 + channel];
  }
  return sum / static_cast<double>((x1 - x0) * (y1 - y0));
}

inline std::string http_base(int port) { return "http://127.0.0.1:" + std::to_string(port); }

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

/// Runs `command` through the shell.
inline CommandResult run_command(const std::string& command) {
  CommandResult r;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

/// A currently unused loopback port (racy, adequate for tests).
inline int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

/// Child process started with argv (no shell); output goes to `log_path`.
class ChildProcess {
 public:
  ChildProcess(const std::vector<std::string>& argv, const std::string& log_path) {
    pid_ = ::fork();
    if (pid_ == 0) {
      FILE* log = std::fopen(log_path.c_str(), "w");
      if (log) {
        ::dup2(fileno(log), 1);
        ::dup2(fileno(log), 2);
      }
      std::vector<char*> args;
      for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
      args.push_back(nullptr);
      ::execv(args[0], args.data());
      ::_exit(127);
    }
  }
  ~ChildProcess() {
    if (pid_ > 0 && !reaped_) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  bool started() const { return pid_ > 0; }

  /// Sends `sig` and waits for the exit status (-1 when killed by a signal).
  int stop(int sig = SIGINT) {
    if (pid_ <= 0 || reaped_) return -1;
    ::kill(pid_, sig);
    int status = 0;
    ::waitpid(pid_, &status, 0);
    reaped_ = true;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

 private:
  pid_t pid_ = -1;
  bool reaped_ = false;
};

/// Polls GET `path` until it answers or `timeout` passes.
inline bool wait_for_http(int port, std::chrono::milliseconds timeout, const std::string& path = "/api/v1/slides") {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    httplib::Client c(http_base(port));
    c.set_connection_timeout(0, 200'000);
    if (auto r = c.Get(path)) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return false;
}

/// Accepts TCP connections into its backlog and never answers.
class SilentListener {
 public:
  SilentListener() {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 16) != 0) {
      throw std::runtime_error("listener setup failed");
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  ~SilentListener() { ::close(fd_); }
  int port() const { return port_; }

 private:
  int fd_ = -1;
  int port_ = 0;
};

/// Minimal chat-completion upstream recording the Authorization header.
class FakeUpstream {
 public:
  explicit FakeUpstream(int status) {
    server_.Post("/v1/chat/completions", [this, status](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex_);
        auth_.push_back(req.get_header_value("Authorization"));
      }
      res.status = status;
      if (status == 200) {
        const auto body = nlohmann::json::parse(req.body);
        const std::string last = body.at("messages").back().at("content");
        res.set_content(nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "re: " + last}}}}}}}.dump(),
                        "application/json");
      } else {
        res.set_content(R"({"error":{"message":"rate limited"}})", "application/json");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeUpstream() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
  std::vector<std::string> auth() const {
    std::lock_guard lock(mutex_);
    return auth_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mutex_;
  std::vector<std::string> auth_;
};

}  // namespace slidestream::testing
