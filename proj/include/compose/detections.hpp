#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "compose/coco.hpp"
#include "compose/scene.hpp"

namespace compose {

/// What a detector is asked to look at: the (possibly inpainted) pixels plus their provenance.
struct DetectionRequest {
  std::string key;                     // "<image id>" or "<image id>/<erased instance id>"
  const CocoImage* image = nullptr;    // annotations, when the image comes from a dataset
  std::optional<std::int64_t> erased;  // instance removed from the pixels
  const cv::Mat* pixels = nullptr;
};

class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const DetectionRequest& request) = 0;
};

/// Detections stored as JSON lines: {"key": ..., "detections": [{category, box:[x,y,w,h], score}]}.
class DetectionCache {
 public:
  static DetectionCache load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void put(const std::string& key, std::vector<Detection> detections);
  const std::vector<Detection>* find(const std::string& key) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::vector<Detection>> entries_;
};

/// Serves detections from a cache; a missing key is an IoError.
class CachedDetector : public Detector {
 public:
  explicit CachedDetector(DetectionCache cache) : cache_(std::move(cache)) {}
  std::vector<Detection> detect(const DetectionRequest& request) override;

 private:
  DetectionCache cache_;
};

/// Treats the dataset's own annotations (minus the erased instance and crowd regions) as perfect
/// detections with score 1. Stand-in when no detector output is available.
class AnnotationDetector : public Detector {
 public:
  std::vector<Detection> detect(const DetectionRequest& request) override;
};

std::string detection_key(std::int64_t image_id, std::optional<std::int64_t> erased = std::nullopt);

}  // namespace compose
