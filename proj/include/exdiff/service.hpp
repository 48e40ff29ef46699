#pragma once

#include <memory>
#include <string>

namespace exdiff {

struct ServiceConfig {
  int port = 8080;
  std::string data_dir = ".";
  // Detect requests with ensemble <= this run synchronously; larger ones
  // return 202 and are polled via /api/runs/{id}.
  int sync_ensemble_limit = 20;
};

// HTTP JSON API over loaded datasets:
//   GET  /api/datasets
//   GET  /api/datasets/{id}/scenes/{sid}        (?hide_gt=1)
//   POST /api/detect
//   GET  /api/runs/{run_id}
// Run records are persisted under data_dir/runs, one file per content-keyed
// run id, written to a temp name and renamed.
class Service {
 public:
  explicit Service(const ServiceConfig& cfg);
  ~Service();

  // Loads every dataset JSON in data_dir; returns the number loaded.
  int load_data();

  // Blocking listen on cfg.port.
  bool run();

  // Test hooks: start on an ephemeral port in a background thread.
  int start_background();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace exdiff
