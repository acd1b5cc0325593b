#include "compose/detections.hpp"

#include <fstream>

#include <json.hpp>

#include "compose/errors.hpp"

namespace compose {

DetectionCache DetectionCache::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detection cache " + path.string());
  DetectionCache cache;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      cache.put(j.at("key").get<std::string>(), j.at("detections").get<std::vector<Detection>>());
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cache;
}

void DetectionCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write detection cache " + path.string());
  for (const auto& [key, dets] : entries_) out << nlohmann::json{{"key", key}, {"detections", dets}}.dump() << '\n';
}

void DetectionCache::put(const std::string& key, std::vector<Detection> detections) {
  entries_[key] = std::move(detections);
}

const std::vector<Detection>* DetectionCache::find(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<Detection> CachedDetector::detect(const DetectionRequest& request) {
  if (const auto* hit = cache_.find(request.key)) return *hit;
  throw IoError("no cached detections for " + request.key);
}

std::vector<Detection> AnnotationDetector::detect(const DetectionRequest& request) {
  std::vector<Detection> out;
  if (!request.image) return out;
  for (const auto& inst : request.image->instances) {
    if (inst.crowd || (request.erased && inst.id == *request.erased)) continue;
    out.push_back({inst.category_id, inst.box, 1.0});
  }
  return out;
}

std::string detection_key(std::int64_t image_id, std::optional<std::int64_t> erased) {
  std::string key = std::to_string(image_id);
  if (erased) key += "/" + std::to_string(*erased);
  return key;
}

}  // namespace compose
