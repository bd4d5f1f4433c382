#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "smfem/harness.hpp"

namespace smfem {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
  /// Step and broadcast rate when paced; capped at 60 Hz.
  double rate_hz = 60.0;
  /// Pace steps to the wall clock. Off, steps run back to back and every
  /// frame is still sent.
  bool realtime = true;
  /// Hold the clock until the first client has received its init message.
  bool wait_for_client = false;
  /// Stop stepping after this many steps.
  std::optional<std::int64_t> max_steps;
};

/// WebSocket server streaming reduced coordinates of a live simulation.
/// The first connected client controls it; later clients are read-only
/// until the controller leaves.
class SimService {
 public:
  SimService(SceneContext ctx, ServiceOptions options);
  ~SimService();
  SimService(const SimService&) = delete;
  SimService& operator=(const SimService&) = delete;

  /// Binds, starts the network and simulation threads and returns the
  /// bound port.
  unsigned short start();
  /// Blocks until max_steps are done or stop() is called.
  void wait();
  /// Like wait() with a timeout; true when the service is done.
  bool wait_for(std::chrono::milliseconds timeout);
  void stop();

  std::int64_t steps_taken() const;

  struct Impl;  // opaque

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace smfem
