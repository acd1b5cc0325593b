#include "compose/service.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "compose/errors.hpp"
#include "compose/evaluator.hpp"

namespace compose {

namespace fs = std::filesystem;

namespace {

int be16(const std::string& b, std::size_t i) {
  return (static_cast<unsigned char>(b[i]) << 8) | static_cast<unsigned char>(b[i + 1]);
}

std::uint32_t be32(const std::string& b, std::size_t i) {
  return (static_cast<std::uint32_t>(be16(b, i)) << 16) | static_cast<std::uint32_t>(be16(b, i + 2));
}

bool is_png(const std::string& b) { return b.size() >= 8 && b.compare(0, 8, "\x89PNG\r\n\x1a\n") == 0; }
bool is_jpeg(const std::string& b) {
  return b.size() >= 3 && static_cast<unsigned char>(b[0]) == 0xFF && static_cast<unsigned char>(b[1]) == 0xD8;
}

std::string encode_png(const cv::Mat& image) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", image, buf)) throw IoError("PNG encoding failed");
  return {buf.begin(), buf.end()};
}

nlohmann::json cell_json(const GridCell& c) { return {{"col", c.col}, {"row", c.row}, {"index", c.index}}; }

nlohmann::json box_json(const PixelBox& b) { return {b.x_min, b.y_min, b.width(), b.height()}; }

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::optional<cv::Size> sniff_image_size(const std::string& b) {
  if (is_png(b)) {
    if (b.size() < 24 || b.compare(12, 4, "IHDR") != 0) return std::nullopt;
    const std::uint32_t w = be32(b, 16), h = be32(b, 20);
    if (w == 0 || h == 0 || w > 0x7fffffffu || h > 0x7fffffffu) return std::nullopt;
    return cv::Size(static_cast<int>(w), static_cast<int>(h));
  }
  if (is_jpeg(b)) {
    std::size_t pos = 2;
    while (pos + 4 <= b.size()) {
      if (static_cast<unsigned char>(b[pos]) != 0xFF) return std::nullopt;
      const int marker = static_cast<unsigned char>(b[pos + 1]);
      if (marker == 0xFF) {
        ++pos;
        continue;
      }
      if (marker == 0x01 || (marker >= 0xD0 && marker <= 0xD8)) {
        pos += 2;
        continue;
      }
      const int len = be16(b, pos + 2);
      const bool sof = marker >= 0xC0 && marker <= 0xCF && marker != 0xC4 && marker != 0xC8 && marker != 0xCC;
      if (sof) {
        if (pos + 9 > b.size()) return std::nullopt;
        const int h = be16(b, pos + 5), w = be16(b, pos + 7);
        if (w == 0 || h == 0) return std::nullopt;
        return cv::Size(w, h);
      }
      if (len < 2) return std::nullopt;
      pos += 2 + static_cast<std::size_t>(len);
    }
  }
  return std::nullopt;
}

bool image_is_complete(const std::string& b) {
  if (is_png(b)) return b.size() >= 12 && b.compare(b.size() - 8, 4, "IEND") == 0;
  if (is_jpeg(b)) {
    std::size_t end = b.size();
    while (end > 0 && (b[end - 1] == '\0' || std::isspace(static_cast<unsigned char>(b[end - 1])))) --end;
    return end >= 4 && static_cast<unsigned char>(b[end - 2]) == 0xFF && static_cast<unsigned char>(b[end - 1]) == 0xD9;
  }
  return false;
}

void from_json(const nlohmann::json& j, PlacementEdit& e) {
  e.box = j.at("box").get<int>();
  if (j.contains("segment_id") && !j.at("segment_id").is_null()) e.segment_id = j.at("segment_id").get<std::int64_t>();
  e.dx = j.value("dx", 0.0);
  e.dy = j.value("dy", 0.0);
  e.scale = j.value("scale", 1.0);
}

struct ComposeService::Session {
  std::mutex mutex;
  std::string id;
  cv::Mat background;
  std::vector<Detection> detections;
  std::string background_png;

  int n_people = 0;
  std::optional<ScenePrediction> prediction;
  std::string heatmap_png;
  std::map<int, std::pair<PixelBox, nlohmann::json>> candidates;  // per box, keyed on its geometry

  CompositeSpec spec;
  Provenance provenance;
  std::string composite_png;
  std::uint64_t revision = 0;
};

ComposeService::ComposeService(std::shared_ptr<const PlacementModel> model, std::shared_ptr<const CandidatePool> pool,
                               ServiceOptions options)
    : model_(std::move(model)), pool_(std::move(pool)), options_(std::move(options)) {
  if (pool_) extractor_ = pool_extractor(*pool_);
  if (options_.persist_dir) {
    fs::create_directories(*options_.persist_dir);
    restore();
  }
}

ComposeService::~ComposeService() = default;

void ComposeService::require_ready() const {
  if (!model_) throw ServiceError(503, "no placement model is loaded");
  if (!pool_) throw ServiceError(503, "no candidate pool is loaded");
}

std::shared_ptr<ComposeService::Session> ComposeService::find(const std::string& id) const {
  const std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session " + id);
  return it->second;
}

std::size_t ComposeService::session_count() const {
  const std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

nlohmann::json ComposeService::create_session(const std::string& bytes, std::vector<Detection> detections) {
  if (bytes.size() > options_.max_upload_bytes) throw ServiceError(413, "upload exceeds the size limit");
  const auto size = sniff_image_size(bytes);
  if (!size) throw ServiceError(400, "not a PNG or JPEG image");
  if (static_cast<std::int64_t>(size->width) * size->height > options_.max_pixels) {
    throw ServiceError(413, "image has " + std::to_string(static_cast<std::int64_t>(size->width) * size->height) +
                                " pixels, limit is " + std::to_string(options_.max_pixels));
  }
  if (!image_is_complete(bytes)) throw ServiceError(400, "image data is truncated");
  const std::vector<std::uint8_t> buf(bytes.begin(), bytes.end());
  cv::Mat image = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (image.empty()) throw ServiceError(400, "image could not be decoded");

  auto s = std::make_shared<Session>();
  s->background = std::move(image);
  s->detections = std::move(detections);
  s->background_png = encode_png(s->background);
  {
    const std::unique_lock lock(sessions_mutex_);
    char id[16];
    std::snprintf(id, sizeof id, "%06llu", static_cast<unsigned long long>(next_id_++));
    s->id = id;
    sessions_.emplace(s->id, s);
  }
  const std::lock_guard lock(s->mutex);
  persist(*s);
  spdlog::info("session {} created ({}x{})", s->id, s->background.cols, s->background.rows);
  return describe(*s);
}

nlohmann::json ComposeService::describe(const Session& s) const {
  const std::string base = "/sessions/" + s.id;
  nlohmann::json j{{"id", s.id},
                   {"width", s.background.cols},
                   {"height", s.background.rows},
                   {"background_url", base + "/background.png"},
                   {"n_people", s.n_people},
                   {"revision", s.revision}};
  if (!s.prediction) {
    j["boxes"] = nlohmann::json::array();
    return j;
  }
  nlohmann::json boxes = nlohmann::json::array();
  for (std::size_t i = 0; i < s.prediction->people.size(); ++i) {
    const PlacementPrediction& p = s.prediction->people[i];
    const ProvenanceEntry& placed = s.provenance.placements.at(i);
    boxes.push_back({{"index", i},
                     {"predicted_box", box_json(s.prediction->boxes[i])},
                     {"location", cell_json(p.location)},
                     {"size", cell_json(p.size)},
                     {"location_probability", p.hypotheses.front().probability},
                     {"size_probability", p.hypotheses.front().sizes.front().probability},
                     {"segment_id", placed.segment_id},
                     {"box", box_json(placed.box)},
                     {"scale", placed.scale}});
  }
  j["boxes"] = std::move(boxes);
  j["heatmap_url"] = base + "/heatmap.png";
  j["composite_url"] = base + "/composite.png?rev=" + std::to_string(s.revision);
  j["provenance"] = s.provenance;
  return j;
}

nlohmann::json ComposeService::session_state(const std::string& id) const {
  const auto s = find(id);
  const std::lock_guard lock(s->mutex);
  return describe(*s);
}

nlohmann::json ComposeService::render(Session& s) {
  CompositeResult r = compose(s.background, s.spec, *pool_);
  s.composite_png = encode_png(r.image);
  s.provenance = std::move(r.provenance);
  s.spec.placements.clear();
  for (const auto& e : s.provenance.placements) s.spec.placements.push_back({e.segment_id, e.box});
  ++s.revision;
  persist(s);
  return describe(s);
}

nlohmann::json ComposeService::predict(const std::string& id, int n_people) {
  const auto s = find(id);
  require_ready();
  if (n_people < 1 || n_people > options_.max_people) {
    throw ServiceError(422, "n_people must be between 1 and " + std::to_string(options_.max_people));
  }
  const std::lock_guard lock(s->mutex);
  ScenePrediction pred = predict_scene(*model_, s->background, s->detections, n_people);
  for (const auto& b : pred.boxes) {
    if (!b.valid()) throw ServiceError(422, "a predicted box falls outside the background");
  }
  s->spec = automatic_spec(*pool_, *extractor_, s->background, pred.boxes, options_.feather_radius);
  s->heatmap_png = encode_png(export_heatmap(pred.people.front(), pred.frame, s->background));
  s->prediction = std::move(pred);
  s->n_people = n_people;
  s->candidates.clear();
  spdlog::info("session {} predicted {} placement(s)", s->id, n_people);
  return render(*s);
}

nlohmann::json ComposeService::candidates(const std::string& id, int box) {
  const auto s = find(id);
  const std::lock_guard lock(s->mutex);
  if (!s->prediction) throw ServiceError(409, "predict has not been called for this session");
  if (box < 0 || box >= static_cast<int>(s->spec.placements.size())) {
    throw ServiceError(404, "unknown box " + std::to_string(box));
  }
  const PixelBox& current = s->spec.placements[static_cast<std::size_t>(box)].box;
  const auto cached = s->candidates.find(box);
  if (cached != s->candidates.end() && cached->second.first == current) return cached->second.second;

  const UiCandidates c = candidates_for_box(*pool_, *extractor_, s->background, current, options_.candidate_count);
  const double side = pad_to_square(s->background.cols, s->background.rows).side;
  nlohmann::json list = nlohmann::json::array();
  for (const Match& m : c.matches) {
    const auto [w, h] = m.record->normalized_size();
    list.push_back({{"segment_id", m.record->id},
                    {"distance", m.distance},
                    {"size_iou", center_aligned_iou({w, h}, {current.width() / side, current.height() / side})},
                    {"source", m.record->source},
                    {"thumbnail_url", "/segments/" + std::to_string(m.record->id) + "/thumbnail.png"}});
  }
  nlohmann::json j{{"box", box},
                   {"query_box", box_json(current)},
                   {"candidates", std::move(list)},
                   {"padded", c.padded},
                   {"incomplete", c.incomplete}};
  s->candidates[box] = {current, j};
  return j;
}

nlohmann::json ComposeService::place(const std::string& id, const PlacementEdit& edit) {
  const auto s = find(id);
  const std::lock_guard lock(s->mutex);
  if (!s->prediction) throw ServiceError(409, "predict has not been called for this session");
  if (edit.box < 0 || edit.box >= static_cast<int>(s->spec.placements.size())) {
    throw ServiceError(404, "unknown box " + std::to_string(edit.box));
  }
  if (edit.segment_id && !pool_->find(*edit.segment_id)) {
    throw ServiceError(404, "unknown segment " + std::to_string(*edit.segment_id));
  }
  if (!std::isfinite(edit.dx) || !std::isfinite(edit.dy)) throw ServiceError(422, "translation must be finite");
  if (!std::isfinite(edit.scale) || edit.scale <= 0.0) throw ServiceError(422, "scale must be positive");

  const Placement& cur = s->spec.placements[static_cast<std::size_t>(edit.box)];
  const double cx = cur.box.center_x() + edit.dx, cy = cur.box.center_y() + edit.dy;
  const double w = cur.box.width() * edit.scale, h = cur.box.height() * edit.scale;
  const PixelBox moved = edit.scale == 1.0 ? PixelBox{cur.box.x_min + edit.dx, cur.box.y_min + edit.dy,
                                                      cur.box.x_max + edit.dx, cur.box.y_max + edit.dy}
                                           : PixelBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  const PixelBox clamped = clip_box(moved, s->background.cols, s->background.rows);
  if (!clamped.valid() || clamped.height() < 1.0 || clamped.width() < 1.0) {
    throw ServiceError(422, "the edited box is degenerate inside the background");
  }

  CompositeSpec next = s->spec;
  next.placements[static_cast<std::size_t>(edit.box)] = {edit.segment_id.value_or(cur.segment_id), clamped};
  const CompositeSpec previous = std::move(s->spec);
  s->spec = std::move(next);
  try {
    return render(*s);
  } catch (const InvalidArgument& e) {
    s->spec = previous;
    throw ServiceError(422, e.what());
  }
}

std::string ComposeService::image(const std::string& id, const std::string& which) const {
  const auto s = find(id);
  const std::lock_guard lock(s->mutex);
  if (which == "background") return s->background_png;
  if (which == "composite" || which == "heatmap") {
    if (!s->prediction) throw ServiceError(409, "predict has not been called for this session");
    return which == "composite" ? s->composite_png : s->heatmap_png;
  }
  throw ServiceError(404, "unknown image " + which);
}

std::string ComposeService::thumbnail(std::int64_t segment_id) {
  if (!pool_) throw ServiceError(503, "no candidate pool is loaded");
  const std::lock_guard lock(thumbnails_mutex_);
  if (const auto it = thumbnails_.find(segment_id); it != thumbnails_.end()) return it->second;
  const SegmentRecord* r = pool_->find(segment_id);
  if (!r) throw ServiceError(404, "unknown segment " + std::to_string(segment_id));
  cv::Mat bgra;
  cv::cvtColor(r->pixels, bgra, cv::COLOR_BGR2BGRA);
  cv::Mat channels[4];
  cv::split(bgra, channels);
  channels[3] = r->mask.clone();
  cv::merge(channels, 4, bgra);
  const double f = static_cast<double>(options_.thumbnail_height) / bgra.rows;
  if (f < 1.0) {
    cv::resize(bgra, bgra, {std::max(1, static_cast<int>(std::lround(bgra.cols * f))), options_.thumbnail_height}, 0, 0,
               cv::INTER_AREA);
  }
  return thumbnails_[segment_id] = encode_png(bgra);
}

void ComposeService::persist(const Session& s) const {
  if (!options_.persist_dir) return;
  const fs::path dir = *options_.persist_dir / s.id;
  fs::create_directories(dir);
  if (!fs::exists(dir / "background.png")) write_file(dir / "background.png", s.background_png);
  nlohmann::json placements = nlohmann::json::array();
  for (const auto& p : s.spec.placements) placements.push_back({{"segment_id", p.segment_id}, {"box", box_json(p.box)}});
  const nlohmann::json state{{"n_people", s.n_people},
                             {"feather_radius", s.spec.feather_radius},
                             {"placements", placements},
                             {"detections", s.detections}};
  write_file(dir / "state.json", state.dump(1));
  if (s.prediction) {
    write_file(dir / "composite.png", s.composite_png);
    write_file(dir / "heatmap.png", s.heatmap_png);
  }
}

void ComposeService::restore() {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(*options_.persist_dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const fs::path& dir : dirs) {
    try {
      auto s = std::make_shared<Session>();
      s->id = dir.filename().string();
      s->background_png = read_file(dir / "background.png");
      const std::vector<std::uint8_t> buf(s->background_png.begin(), s->background_png.end());
      s->background = cv::imdecode(buf, cv::IMREAD_COLOR);
      if (s->background.empty()) throw IoError("undecodable background");
      const auto state = nlohmann::json::parse(read_file(dir / "state.json"));
      s->detections = state.at("detections").get<std::vector<Detection>>();
      const int n = state.at("n_people").get<int>();
      if (n > 0 && model_ && pool_) {
        ScenePrediction pred = predict_scene(*model_, s->background, s->detections, n);
        s->heatmap_png = encode_png(export_heatmap(pred.people.front(), pred.frame, s->background));
        s->prediction = std::move(pred);
        s->n_people = n;
        s->spec.feather_radius = state.at("feather_radius").get<double>();
        for (const auto& p : state.at("placements")) {
          const auto b = p.at("box");
          s->spec.placements.push_back({p.at("segment_id").get<std::int64_t>(),
                                        PixelBox::from_xywh(b[0].get<double>(), b[1].get<double>(),
                                                            b[2].get<double>(), b[3].get<double>())});
        }
        render(*s);
      }
      if (!s->id.empty() && std::all_of(s->id.begin(), s->id.end(), ::isdigit)) {
        next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(s->id) + 1);
      }
      sessions_.emplace(s->id, std::move(s));
    } catch (const std::exception& e) {
      spdlog::warn("skipping persisted session {}: {}", dir.string(), e.what());
    }
  }
  if (!sessions_.empty()) spdlog::info("restored {} session(s) from {}", sessions_.size(), options_.persist_dir->string());
}

struct HttpServer::Impl {
  ComposeService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(ComposeService& s) : service(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}, {"status", status}});
}

template <typename F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, std::string("malformed request: ") + e.what());
    } catch (const InvalidArgument& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      spdlog::error("{} {}: {}", req.method, req.path, e.what());
      send_error(res, 500, e.what());
    }
  };
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(req.body);
  if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
  return j;
}

}  // namespace

HttpServer::HttpServer(ComposeService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  ComposeService& svc = service;
  srv.set_payload_max_length(svc.options().max_upload_bytes + (1u << 20));

  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

  srv.Post("/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             std::string bytes;
             std::vector<Detection> detections;
             if (req.is_multipart_form_data()) {
               if (!req.has_file("image")) throw ServiceError(400, "multipart upload needs an \"image\" part");
               bytes = req.get_file_value("image").content;
               if (req.has_file("detections")) {
                 const auto d = nlohmann::json::parse(req.get_file_value("detections").content);
                 detections = (d.is_object() ? d.at("detections") : d).get<std::vector<Detection>>();
               }
             } else {
               bytes = req.body;
             }
             send_json(res, 201, svc.create_session(bytes, std::move(detections)));
           }));

  srv.Get(R"(/sessions/([0-9A-Za-z_-]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, svc.session_state(req.matches[1]));
          }));

  srv.Post(R"(/sessions/([0-9A-Za-z_-]+)/predict)",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             send_json(res, 200, svc.predict(req.matches[1], body.value("n_people", 1)));
           }));

  srv.Get(R"(/sessions/([0-9A-Za-z_-]+)/candidates)",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            int box = 0;
            if (req.has_param("box")) {
              const std::string v = req.get_param_value("box");
              std::size_t used = 0;
              try {
                box = std::stoi(v, &used);
              } catch (const std::exception&) {
                used = 0;
              }
              if (used == 0 || used != v.size()) throw ServiceError(400, "box must be an integer");
            }
            send_json(res, 200, svc.candidates(req.matches[1], box));
          }));

  srv.Post(R"(/sessions/([0-9A-Za-z_-]+)/placements)",
           guarded([&svc](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 200, svc.place(req.matches[1], parse_body(req).get<PlacementEdit>()));
           }));

  srv.Get(R"(/sessions/([0-9A-Za-z_-]+)/(background|composite|heatmap)\.png)",
          guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            res.set_content(svc.image(req.matches[1], req.matches[2]), "image/png");
          }));

  srv.Get(R"(/segments/(-?[0-9]+)/thumbnail\.png)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
            res.set_content(svc.thumbnail(std::stoll(req.matches[1])), "image/png");
          }));

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      send_error(res, res.status, res.status == 413 ? "upload exceeds the size limit" : httplib::status_message(res.status));
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace compose
