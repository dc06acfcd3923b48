#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "slidestream/assistant.hpp"
#include "slidestream/cbir.hpp"
#include "slidestream/config.hpp"
#include "slidestream/slide_repository.hpp"

namespace httplib {
class Server;
}

namespace slidestream {

/// Best-effort background cache warmer. Workers run at reduced scheduling
/// priority so foreground requests win the CPU; a full queue drops hints.
class PrefetchPool {
 public:
  PrefetchPool(SlideRepository& repo, unsigned workers, std::size_t max_queue);
  ~PrefetchPool();
  PrefetchPool(const PrefetchPool&) = delete;
  PrefetchPool& operator=(const PrefetchPool&) = delete;

  /// Queues `tiles`; returns how many were accepted.
  std::size_t schedule(const std::vector<TileAddress>& tiles);

  /// Blocks until the queue is empty and no worker is busy.
  void drain();

 private:
  void run();

  SlideRepository& repo_;
  std::size_t max_queue_;
  std::mutex mutex_;
  std::condition_variable work_cv_;
  std::condition_variable idle_cv_;
  std::deque<TileAddress> queue_;
  std::size_t busy_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

/// The HTTP face of the store: slide listing, metadata, tiles, regions,
/// prefetch, similarity search and assistant sessions under /api/v1.
class TileService {
 public:
  explicit TileService(ServerConfig cfg);
  TileService(ServerConfig cfg, std::shared_ptr<assistant::ChatBackend> backend);
  ~TileService();
  TileService(const TileService&) = delete;
  TileService& operator=(const TileService&) = delete;

  /// Binds the configured address (port 0 picks a free one) and returns the
  /// bound port. Errc::address_in_use on failure.
  int bind();

  /// Serves until `stop()`; in-flight requests complete before it returns.
  void listen();

  /// bind() + listen() on a background thread; returns the bound port.
  int start();

  void stop();

  int port() const { return port_; }
  const ServerConfig& config() const { return cfg_; }
  SlideRepository& repository() { return repo_; }
  cbir::CbirService& cbir() { return cbir_; }
  assistant::Assistant& assistant() { return assistant_; }
  PrefetchPool& prefetch() { return prefetch_; }

 private:
  void install_routes();

  ServerConfig cfg_;
  SlideRepository repo_;
  cbir::CbirService cbir_;
  assistant::Assistant assistant_;
  PrefetchPool prefetch_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace slidestream
