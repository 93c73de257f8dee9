#pragma once

#include <memory>
#include <string>
#include <thread>

#include "rlhf/label_service/service.hpp"

namespace httplib {
class Server;
}

namespace rlhf::label_service {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kBindEnv = "RLHF_LABEL_BIND";

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8080;
};

// Parses "host:port", ":port" or "port".
BindAddress parse_bind(const std::string& s);
// From RLHF_LABEL_BIND, else the defaults.
BindAddress bind_from_env();

// JSON-over-HTTP front end for a LabelService.
class LabelServer {
 public:
  explicit LabelServer(LabelService& service);
  ~LabelServer();
  LabelServer(const LabelServer&) = delete;
  LabelServer& operator=(const LabelServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port.
  int start(const BindAddress& addr);
  // Binds and serves on the calling thread until stop().
  void run(const BindAddress& addr);
  void stop();

 private:
  LabelService& service_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
};

}  // namespace rlhf::label_service
