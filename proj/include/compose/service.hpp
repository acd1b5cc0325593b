#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "compose/pipeline.hpp"

namespace compose {

/// A request the service refuses, carrying the HTTP status it maps to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ServiceOptions {
  std::size_t max_upload_bytes = 64u << 20;
  std::int64_t max_pixels = 20'000'000;
  std::optional<std::filesystem::path> persist_dir;
  double feather_radius = kDefaultFeatherRadius;
  int candidate_count = 9;
  int thumbnail_height = 128;
  int max_people = 10;
};

/// Width and height read from a PNG IHDR or a JPEG SOF marker without decoding the pixels.
std::optional<cv::Size> sniff_image_size(const std::string& bytes);

/// False when a PNG lacks its IEND chunk or a JPEG its end-of-image marker.
bool image_is_complete(const std::string& bytes);

struct PlacementEdit {
  int box = 0;
  std::optional<std::int64_t> segment_id;  // keep the current segment when absent
  double dx = 0.0;
  double dy = 0.0;
  double scale = 1.0;
};

void from_json(const nlohmann::json& j, PlacementEdit& e);

/// Interactive compositing sessions over one model and one candidate pool. Every method is safe to
/// call concurrently; calls on one session are serialized. Errors are ServiceError.
class ComposeService {
 public:
  ComposeService(std::shared_ptr<const PlacementModel> model, std::shared_ptr<const CandidatePool> pool,
                 ServiceOptions options = {});
  ~ComposeService();

  /// Decodes the upload and opens a session. detections feed the layout input of later predictions.
  nlohmann::json create_session(const std::string& image_bytes, std::vector<Detection> detections = {});
  nlohmann::json session_state(const std::string& id) const;

  /// Predicts n_people boxes, picks the top candidate for each and renders the automatic composite.
  nlohmann::json predict(const std::string& id, int n_people);
  nlohmann::json candidates(const std::string& id, int box);
  nlohmann::json place(const std::string& id, const PlacementEdit& edit);

  /// PNG bytes of "background", "composite" or "heatmap".
  std::string image(const std::string& id, const std::string& which) const;
  /// PNG (BGRA, transparent outside the mask) of a pool segment.
  std::string thumbnail(std::int64_t segment_id);

  std::size_t session_count() const;
  const ServiceOptions& options() const { return options_; }

 private:
  struct Session;

  std::shared_ptr<Session> find(const std::string& id) const;
  nlohmann::json render(Session& s);
  nlohmann::json describe(const Session& s) const;
  void persist(const Session& s) const;
  void restore();
  void require_ready() const;

  std::shared_ptr<const PlacementModel> model_;
  std::shared_ptr<const CandidatePool> pool_;
  std::unique_ptr<FeatureExtractor> extractor_;
  ServiceOptions options_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;

  std::mutex thumbnails_mutex_;
  std::map<std::int64_t, std::string> thumbnails_;
};

/// HTTP front end for a ComposeService, served from a background thread.
///
///   POST /sessions                      image body (or multipart "image" + optional "detections")
///   GET  /sessions/{id}
///   POST /sessions/{id}/predict         {"n_people": n}
///   GET  /sessions/{id}/candidates?box=i
///   POST /sessions/{id}/placements      {"box", "segment_id", "dx", "dy", "scale"}
///   GET  /sessions/{id}/{background,composite,heatmap}.png
///   GET  /segments/{id}/thumbnail.png
///   GET  /health
class HttpServer {
 public:
  explicit HttpServer(ComposeService& service);
  ~HttpServer();

  /// Binds (port 0 picks a free one) and starts serving. Returns the bound port.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace compose
