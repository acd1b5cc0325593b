#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "compose/coco.hpp"
#include "compose/features.hpp"
#include "compose/filters.hpp"
#include "compose/geometry.hpp"
#include "compose/kdtree.hpp"

namespace compose {

inline constexpr double kSizePrefilterIou = 0.4;

struct SegmentRecord {
  std::int64_t id = 0;
  std::string source;  // source image file name
  std::int64_t image_id = 0;
  std::int64_t instance_id = 0;
  PixelBox box;        // tight mask bounds in the source image
  SquareFrame frame;   // square frame of the source image
  Descriptor global;   // unit norm
  Descriptor local;    // unit norm
  cv::Mat pixels;      // BGR crop of box
  cv::Mat mask;        // CV_8UC1 crop of box, 0/255
  nlohmann::json metadata = nlohmann::json::object();

  /// (w, h) relative to the source square frame.
  std::pair<double, double> normalized_size() const;
};

/// Immutable set of segments with an exact kd-tree over their [global | local] descriptors.
class CandidatePool {
 public:
  CandidatePool() = default;
  /// Throws InvalidArgument for an empty list, duplicate ids, mismatched dimensions, descriptors that
  /// are not unit norm, or empty masks.
  explicit CandidatePool(std::vector<SegmentRecord> records, nlohmann::json params = nlohmann::json::object());

  const std::vector<SegmentRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  int descriptor_dim() const { return dim_; }  // length of each of global and local
  const SegmentRecord* find(std::int64_t id) const;
  const KdTree& index() const { return index_; }
  const nlohmann::json& params() const { return params_; }

  /// Directory archive: manifest.json, descriptors.bin (row-major float32 little-endian, one
  /// [global | local] row per record), masks/<id>.png, pixels/<id>.png.
  void save(const std::filesystem::path& dir) const;
  static CandidatePool load(const std::filesystem::path& dir);

 private:
  std::vector<SegmentRecord> records_;
  nlohmann::json params_;
  int dim_ = 0;
  KdTree index_;
};

struct PoolBuildConfig {
  std::string category = "person";
  FilterOptions filters;
};

/// One record per filtered instance. Global descriptors come from the whole source image (person
/// present), local ones from the 2x context patch. Throws StateError when nothing survives.
CandidatePool build_pool(const CocoDataset& dataset, const std::filesystem::path& image_dir,
                         const FeatureExtractor& extractor, const PoolBuildConfig& config);

/// 1 - cosine similarity of the concatenated descriptors, i.e. 1 - (g.g' + l.l') / 2.
double cosine_distance(const SegmentRecord& a, const SegmentRecord& b);

struct QueryDescriptor {
  Descriptor global;
  Descriptor local;
  double w = 0.0;  // query box size in its normalized frame
  double h = 0.0;
};

QueryDescriptor describe_query(const cv::Mat& background, const PixelBox& box, const FeatureExtractor& extractor);

struct Match {
  const SegmentRecord* record = nullptr;
  double distance = 0.0;  // cosine distance
};

enum class QueryStatus { Ok, AllFilteredBySize };

struct QueryResult {
  QueryStatus status = QueryStatus::Ok;
  std::vector<Match> matches;  // ascending (distance, id)
};

/// Candidates whose center-aligned IoU with the query size is below min_iou are excluded; the rest
/// are ranked by cosine distance.
QueryResult query(const CandidatePool& pool, const QueryDescriptor& q, int k, double min_iou = kSizePrefilterIou);

struct UiCandidates {
  std::vector<Match> matches;
  bool padded = false;      // some entries failed the size prefilter
  bool incomplete = false;  // the pool holds fewer than the requested count
};

/// query with k = count, topped up with the nearest candidates that failed the size prefilter.
UiCandidates top_candidates_for_ui(const CandidatePool& pool, const QueryDescriptor& q, int count = 9,
                                   double min_iou = kSizePrefilterIou);

}  // namespace compose
