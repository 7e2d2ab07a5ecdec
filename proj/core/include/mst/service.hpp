#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mst/clicks.hpp"
#include "mst/model.hpp"

namespace httplib {
class Server;
}

namespace mst {

struct Reply {
  int status = 200;
  nlohmann::json body = nlohmann::json::object();
};

struct ServiceOptions {
  std::size_t max_sessions = 64;
  std::chrono::seconds ttl{30 * 60};
  std::string cors_origin = "*";
};

/// One interactive segmentation session. Clicks are kept in source image
/// coordinates; history holds the model-resolution probability map after
/// every applied click, starting with the empty mask.
struct Session {
  std::string id;
  Image source;
  Image square;
  Letterbox box;
  std::optional<Mask> gt;
  std::vector<Click> clicks;
  std::vector<std::vector<float>> history;
  std::chrono::steady_clock::time_point created;
  std::chrono::steady_clock::time_point last_used;
  std::mutex mutex;
};

/// Session store and request logic, independent of the transport.
class SessionService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  /// `model` may be null: every model-backed request then answers 503.
  SessionService(std::shared_ptr<const MstModel<float>> model, std::string checkpoint_hash,
                 ServiceOptions options = {}, Clock clock = {});

  Reply health() const;
  Reply create(std::span<const std::uint8_t> image_png, std::span<const std::uint8_t> gt_png = {});
  Reply click(const std::string& id, const nlohmann::json& request, bool soft = false);
  Reply undo(const std::string& id, bool soft = false);
  Reply reset(const std::string& id);
  Reply summary(const std::string& id);

  std::size_t session_count() const;
  const ServiceOptions& options() const { return options_; }

 private:
  std::shared_ptr<Session> find(const std::string& id);
  void evict_expired(std::chrono::steady_clock::time_point now);
  std::string new_id();
  nlohmann::json mask_body(const Session& s, bool soft) const;
  std::chrono::steady_clock::time_point now() const { return clock_ ? clock_() : std::chrono::steady_clock::now(); }

  std::shared_ptr<const MstModel<float>> model_;
  std::string hash_;
  ServiceOptions options_;
  Clock clock_;
  mutable std::mutex store_mutex_;
  std::list<std::string> lru_;  // front: most recently used
  std::unordered_map<std::string, std::pair<std::shared_ptr<Session>, std::list<std::string>::iterator>> sessions_;
  std::mt19937_64 id_rng_;
};

/// Registers the HTTP routes and CORS handling on `server`.
void mount_routes(httplib::Server& server, SessionService& service);

}  // namespace mst
