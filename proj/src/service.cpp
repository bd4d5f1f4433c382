#include "smfem/service.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "smfem/interactive.hpp"
#include "smfem/protocol.hpp"

namespace smfem {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

// Frames queued for a client that reads slower than we step; the oldest
// queued frames are dropped past this. Init and error messages never are.
constexpr std::size_t kMaxQueuedFrames = 256;

struct Outgoing {
  std::shared_ptr<const std::string> text;
  bool droppable = false;
};

}  // namespace

class Session;

struct SimService::Impl {
  Impl(SceneContext ctx, ServiceOptions opts) : sim(std::move(ctx)), options(std::move(opts)) {
    init_text = std::make_shared<const std::string>(init_message(sim.surface()));
    surface_count = static_cast<int>(sim.surface().vertex_ids.size());
  }

  // Network side; touched only on the io thread.
  void accept_next();
  void add(const std::shared_ptr<Session>& s);
  void remove(const Session* s);
  void handle(const std::shared_ptr<Session>& s, const std::string& text);
  void broadcast(const Outgoing& msg);

  void sim_loop();

  InteractiveSim sim;
  ServiceOptions options;
  std::shared_ptr<const std::string> init_text;
  int surface_count = 0;

  net::io_context ioc;
  std::optional<net::executor_work_guard<net::io_context::executor_type>> work;
  tcp::acceptor acceptor{ioc};
  std::vector<std::shared_ptr<Session>> sessions;  // front is the controller
  std::thread net_thread;
  std::thread sim_thread;

  std::mutex mu;
  std::condition_variable cv;
  std::deque<ClientMessage> inbound;
  bool client_seen = false;
  bool stopping = false;
  bool finished = false;
  bool started = false;
  bool stopped = false;
  std::atomic<std::int64_t> steps{0};
};

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, SimService::Impl& server) : ws_(std::move(socket)), server_(server) {}

  void run() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(1 << 16);
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

  void send(const Outgoing& msg) {
    if (closed_) return;
    queue_.push_back(msg);
    std::size_t frames = 0;
    for (const Outgoing& o : queue_) frames += o.droppable;
    // Index 0 may be in flight; never drop it.
    for (auto it = queue_.begin() + 1; frames > kMaxQueuedFrames && it != queue_.end();) {
      if (it->droppable) {
        it = queue_.erase(it);
        --frames;
      } else {
        ++it;
      }
    }
    if (queue_.size() == 1) write();
  }

  void shutdown() {
    closed_ = true;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
    beast::get_lowest_layer(ws_).close();
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    ws_.text(true);
    server_.add(shared_from_this());
    send({server_.init_text, false});
    read();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->server_.remove(self.get());
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->server_.handle(self, text);
      self->read();
    });
  }

  void write() {
    ws_.async_write(net::buffer(*queue_.front().text), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->server_.remove(self.get());
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  SimService::Impl& server_;
  beast::flat_buffer buffer_;
  std::deque<Outgoing> queue_;
  bool closed_ = false;
};

void SimService::Impl::accept_next() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;  // acceptor closed
    std::make_shared<Session>(std::move(socket), *this)->run();
    accept_next();
  });
}

void SimService::Impl::add(const std::shared_ptr<Session>& s) {
  sessions.push_back(s);
  std::lock_guard lock(mu);
  client_seen = true;
  cv.notify_all();
}

void SimService::Impl::remove(const Session* s) {
  sessions.erase(std::remove_if(sessions.begin(), sessions.end(), [s](const auto& p) { return p.get() == s; }),
                 sessions.end());
}

void SimService::Impl::handle(const std::shared_ptr<Session>& s, const std::string& text) {
  if (sessions.empty() || sessions.front() != s) {
    s->send({std::make_shared<const std::string>(error_message("read-only client: another client controls the simulation")),
             false});
    return;
  }
  try {
    ClientMessage msg = parse_client_message(text);
    if (const auto* drag = std::get_if<DragCommand>(&msg); drag && drag->vertex >= surface_count) {
      throw ProtocolError("drag vertex " + std::to_string(drag->vertex) + " is not a surface vertex (" +
                          std::to_string(surface_count) + " available)");
    }
    std::lock_guard lock(mu);
    inbound.push_back(std::move(msg));
  } catch (const ProtocolError& e) {
    s->send({std::make_shared<const std::string>(error_message(e.what())), false});
  }
}

void SimService::Impl::broadcast(const Outgoing& msg) {
  const auto targets = sessions;  // sends may remove sessions
  for (const auto& s : targets) s->send(msg);
}

void SimService::Impl::sim_loop() {
  using clock = std::chrono::steady_clock;
  const double rate = std::min(options.rate_hz, 60.0);
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / rate));
  auto next = clock::now();
  while (true) {
    std::deque<ClientMessage> batch;
    {
      std::unique_lock lock(mu);
      if (options.wait_for_client) cv.wait(lock, [this] { return stopping || client_seen; });
      if (stopping) break;
      batch.swap(inbound);
    }
    for (const ClientMessage& m : batch) {
      try {
        sim.submit(m);
      } catch (const ProtocolError&) {
        // validated on receipt
      }
    }
    std::optional<std::string> error;
    std::shared_ptr<const std::string> frame;
    try {
      error = sim.step();
      frame = std::make_shared<const std::string>(frame_message(sim.state().step_index, sim.state().u));
    } catch (const std::exception& e) {
      error = std::string("simulation stopped: ") + e.what();
    }
    ++steps;
    net::post(ioc, [this, error, frame] {
      if (error) broadcast({std::make_shared<const std::string>(error_message(*error)), false});
      if (frame) broadcast({frame, true});
    });
    if (!frame || (options.max_steps && steps >= *options.max_steps)) {
      std::lock_guard lock(mu);
      finished = true;
      cv.notify_all();
      break;
    }
    if (options.realtime) {
      next += period;
      std::unique_lock lock(mu);
      if (cv.wait_until(lock, next, [this] { return stopping; })) break;
    }
  }
}

SimService::SimService(SceneContext ctx, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(ctx), std::move(options))) {
  if (!(impl_->options.rate_hz > 0.0)) throw ConfigError("service rate must be positive");
}

SimService::~SimService() { stop(); }

unsigned short SimService::start() {
  Impl& s = *impl_;
  if (s.started) throw std::logic_error("service already started");
  beast::error_code ec;
  const net::ip::address address = net::ip::make_address(s.options.host, ec);
  if (ec) throw ConfigError("invalid bind address \"" + s.options.host + "\"");
  const tcp::endpoint endpoint(address, s.options.port);
  s.acceptor.open(endpoint.protocol());
  s.acceptor.set_option(net::socket_base::reuse_address(true));
  s.acceptor.bind(endpoint, ec);
  if (ec) throw std::runtime_error("cannot bind " + s.options.host + ":" + std::to_string(s.options.port) + ": " +
                                   ec.message());
  s.acceptor.listen(net::socket_base::max_listen_connections);
  const unsigned short port = s.acceptor.local_endpoint().port();
  s.work.emplace(net::make_work_guard(s.ioc));
  s.accept_next();
  s.started = true;
  s.net_thread = std::thread([&s] { s.ioc.run(); });
  s.sim_thread = std::thread([&s] { s.sim_loop(); });
  return port;
}

void SimService::wait() {
  std::unique_lock lock(impl_->mu);
  impl_->cv.wait(lock, [this] { return impl_->finished || impl_->stopping; });
}

bool SimService::wait_for(std::chrono::milliseconds timeout) {
  std::unique_lock lock(impl_->mu);
  return impl_->cv.wait_for(lock, timeout, [this] { return impl_->finished || impl_->stopping; });
}

void SimService::stop() {
  Impl& s = *impl_;
  if (!s.started || s.stopped) return;
  s.stopped = true;
  {
    std::lock_guard lock(s.mu);
    s.stopping = true;
    s.cv.notify_all();
  }
  s.sim_thread.join();
  net::post(s.ioc, [&s] {
    beast::error_code ec;
    s.acceptor.close(ec);
    for (const auto& session : s.sessions) session->shutdown();
    s.sessions.clear();
    s.ioc.stop();
  });
  s.work.reset();
  s.net_thread.join();
}

std::int64_t SimService::steps_taken() const { return impl_->steps.load(); }

}  // namespace smfem
