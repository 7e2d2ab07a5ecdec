#include "mst/service.hpp"

#include <httplib.h>

#include <cstdio>
#include <random>

#include "mst/image_io.hpp"
#include "mst/segmenter.hpp"

namespace mst {
namespace {

Reply error(int status, const std::string& message) { return {status, {{"error", message}}}; }

std::span<const std::uint8_t> bytes_of(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

nlohmann::json click_json(const Click& c) {
  return {{"x", c.point.x}, {"y", c.point.y}, {"positive", c.positive}};
}

}  // namespace

SessionService::SessionService(std::shared_ptr<const MstModel<float>> model, std::string checkpoint_hash,
                               ServiceOptions options, Clock clock)
    : model_(std::move(model)),
      hash_(std::move(checkpoint_hash)),
      options_(options),
      clock_(std::move(clock)),
      id_rng_(std::random_device{}()) {
  if (options_.max_sessions == 0) throw ConfigError("service: max_sessions must be positive");
}

Reply SessionService::health() const {
  if (!model_) return {503, {{"status", "unavailable"}, {"checkpoint_hash", nullptr}}};
  return {200, {{"status", "ok"}, {"checkpoint_hash", hash_}}};
}

std::string SessionService::new_id() {
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(id_rng_()),
                static_cast<unsigned long long>(id_rng_()));
  return buf;
}

void SessionService::evict_expired(std::chrono::steady_clock::time_point t) {
  while (!lru_.empty()) {
    auto it = sessions_.find(lru_.back());
    if (t - it->second.first->last_used < options_.ttl) break;
    sessions_.erase(it);
    lru_.pop_back();
  }
}

std::size_t SessionService::session_count() const {
  std::lock_guard lock(store_mutex_);
  return sessions_.size();
}

std::shared_ptr<Session> SessionService::find(const std::string& id) {
  std::lock_guard lock(store_mutex_);
  const auto t = now();
  evict_expired(t);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  lru_.splice(lru_.begin(), lru_, it->second.second);
  it->second.first->last_used = t;
  return it->second.first;
}

Reply SessionService::create(std::span<const std::uint8_t> image_png, std::span<const std::uint8_t> gt_png) {
  if (!model_) return error(503, "model not loaded");
  auto s = std::make_shared<Session>();
  try {
    s->source = decode_png(image_png);
    if (!gt_png.empty()) {
      s->gt = decode_mask_png(gt_png);
      if (s->gt->width != s->source.width || s->gt->height != s->source.height) {
        return error(400, "gt is " + std::to_string(s->gt->width) + "x" + std::to_string(s->gt->height) +
                              ", image is " + std::to_string(s->source.width) + "x" +
                              std::to_string(s->source.height));
      }
    }
  } catch (const FormatError& e) {
    return error(400, e.what());
  }
  const std::size_t w = model_->config().image_size;
  s->box = Letterbox::fit(s->source.width, s->source.height, w);
  s->square = letterbox_image(s->source, s->box);
  s->history.push_back(std::vector<float>(w * w, 0.0f));

  std::lock_guard lock(store_mutex_);
  const auto t = now();
  evict_expired(t);
  s->created = s->last_used = t;
  do s->id = new_id();
  while (sessions_.count(s->id));
  while (sessions_.size() >= options_.max_sessions) {
    sessions_.erase(lru_.back());
    lru_.pop_back();
  }
  lru_.push_front(s->id);
  sessions_.emplace(s->id, std::make_pair(s, lru_.begin()));
  return {201, {{"session_id", s->id}, {"W", s->source.width}, {"H", s->source.height}}};
}

nlohmann::json SessionService::mask_body(const Session& s, bool soft) const {
  const auto plane = unletterbox_plane(s.history.back(), s.box);
  const Mask mask = binarize(plane, s.source.width, s.source.height);
  nlohmann::json body{{"mask", base64_encode(encode_mask_png(mask))}, {"click_count", s.clicks.size()}};
  if (s.gt) body["iou"] = iou(mask, *s.gt);
  if (soft) {
    std::vector<std::uint8_t> px(plane.size());
    for (std::size_t i = 0; i < px.size(); ++i)
      px[i] = static_cast<std::uint8_t>(std::lround(std::clamp(plane[i], 0.0f, 1.0f) * 255.0f));
    body["soft"] = base64_encode(encode_png_gray(px, s.source.width, s.source.height));
  }
  return body;
}

Reply SessionService::click(const std::string& id, const nlohmann::json& request, bool soft) {
  if (!model_) return error(503, "model not loaded");
  auto s = find(id);
  if (!s) return error(404, "unknown session " + id);
  if (!request.is_object() || !request.contains("x") || !request.contains("y") || !request["x"].is_number_integer() ||
      !request["y"].is_number_integer()) {
    return error(400, "expected {\"x\": int, \"y\": int, \"positive\": bool}");
  }
  const bool positive = request.value("positive", true);
  const auto x = request["x"].get<long long>(), y = request["y"].get<long long>();
  std::lock_guard lock(s->mutex);
  if (x < 0 || y < 0 || x >= static_cast<long long>(s->source.width) ||
      y >= static_cast<long long>(s->source.height)) {
    return error(422, "click (" + std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                          std::to_string(s->source.width) + "x" + std::to_string(s->source.height));
  }
  s->clicks.push_back({{static_cast<int>(x), static_cast<int>(y)}, positive});
  ClickState state;
  for (const auto& c : s->clicks) state.clicks.push_back({s->box.to_square(c.point), c.positive});
  state.previous = s->history.back();
  ModelSegmenter<float> seg(*model_);
  s->history.push_back(seg.predict(s->square, state));
  return {200, mask_body(*s, soft)};
}

Reply SessionService::undo(const std::string& id, bool soft) {
  auto s = find(id);
  if (!s) return error(404, "unknown session " + id);
  std::lock_guard lock(s->mutex);
  if (s->clicks.empty()) return error(409, "nothing to undo");
  s->clicks.pop_back();
  s->history.pop_back();
  return {200, mask_body(*s, soft)};
}

Reply SessionService::reset(const std::string& id) {
  auto s = find(id);
  if (!s) return error(404, "unknown session " + id);
  std::lock_guard lock(s->mutex);
  s->clicks.clear();
  s->history.resize(1);
  return {200, {{"session_id", s->id}, {"click_count", 0}}};
}

Reply SessionService::summary(const std::string& id) {
  auto s = find(id);
  if (!s) return error(404, "unknown session " + id);
  std::lock_guard lock(s->mutex);
  nlohmann::json clicks = nlohmann::json::array();
  for (const auto& c : s->clicks) clicks.push_back(click_json(c));
  nlohmann::json body{{"session_id", s->id},     {"W", s->source.width},         {"H", s->source.height},
                      {"clicks", clicks},        {"click_count", s->clicks.size()},
                      {"history_depth", s->history.size()}, {"has_gt", s->gt.has_value()}};
  return {200, body};
}

void mount_routes(httplib::Server& server, SessionService& service) {
  const std::string origin = service.options().cors_origin;
  server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto soft = [](const httplib::Request& req) { return req.has_param("soft") && req.get_param_value("soft") == "1"; };

  server.Get("/healthz", [&service, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.health());
  });
  server.Post("/sessions", [&service, send](const httplib::Request& req, httplib::Response& res) {
    if (req.is_multipart_form_data()) {
      if (!req.has_file("image")) return send(res, error(400, "multipart body needs an 'image' part"));
      const auto image = req.get_file_value("image").content;
      const std::string gt = req.has_file("gt") ? req.get_file_value("gt").content : std::string();
      return send(res, service.create(bytes_of(image), bytes_of(gt)));
    }
    const auto type = req.get_header_value("Content-Type");
    if (type.rfind("application/json", 0) == 0) {
      const auto j = nlohmann::json::parse(req.body, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("image") || !j["image"].is_string()) {
        return send(res, error(400, "expected {\"image\": base64 png, \"gt\"?: base64 png}"));
      }
      try {
        const auto image = base64_decode(j["image"].get<std::string>());
        const auto gt = j.contains("gt") && j["gt"].is_string() ? base64_decode(j["gt"].get<std::string>())
                                                                : std::vector<std::uint8_t>{};
        return send(res, service.create(image, gt));
      } catch (const FormatError& e) {
        return send(res, error(400, e.what()));
      }
    }
    send(res, service.create(bytes_of(req.body)));
  });
  server.Get(R"(/sessions/([0-9a-zA-Z]+))", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.summary(req.matches[1]));
  });
  server.Post(R"(/sessions/([0-9a-zA-Z]+)/clicks)",
              [&service, send, soft](const httplib::Request& req, httplib::Response& res) {
                const auto j = nlohmann::json::parse(req.body, nullptr, false);
                if (j.is_discarded()) return send(res, error(400, "body is not JSON"));
                send(res, service.click(req.matches[1], j, soft(req)));
              });
  server.Post(R"(/sessions/([0-9a-zA-Z]+)/undo)",
              [&service, send, soft](const httplib::Request& req, httplib::Response& res) {
                send(res, service.undo(req.matches[1], soft(req)));
              });
  server.Post(R"(/sessions/([0-9a-zA-Z]+)/reset)", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.reset(req.matches[1]));
  });
  server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send(res, error(500, e.what()));
    }
  });
}

}  // namespace mst
