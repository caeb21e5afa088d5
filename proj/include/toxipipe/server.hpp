#pragma once

// HTTP API: annotation task queue and label intake, agreement, guideline,
// aggregated stats export and cohort counts.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "toxipipe/annotation.hpp"
#include "toxipipe/config.hpp"

namespace httplib {
class Server;
}

namespace toxipipe::gateway {

struct ServerOptions {
  ServerSettings settings;
  annotation::StoreConfig store;
  std::filesystem::path work_dir;
  std::filesystem::path labels_path;  // persisted after every accepted label
  std::string salt;
  std::string guideline;
  annotation::AnnotationStore::Clock clock;  // empty: wall clock
};

// Options from a config. Reads the guideline file.
ServerOptions server_options(const PipelineConfig& config);

class Server {
 public:
  // Loads tasks from the work directory's matched posts (if present) and
  // restores persisted labels.
  explicit Server(ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Replaces the task set.
  void load_tasks(std::vector<corpus::MatchedPost> tasks);

  // Binds and serves on a background thread; returns the bound port (port 0
  // picks a free one). IoError when the address cannot be bound.
  int start();
  // Stops accepting connections and waits for in-flight requests.
  void stop();
  int port() const { return port_; }

  annotation::AnnotationStore& store() { return store_; }

 private:
  void routes();
  void persist_labels();

  ServerOptions options_;
  annotation::AnnotationStore store_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  std::mutex persist_mu_;
  int port_ = -1;
};

}  // namespace toxipipe::gateway
