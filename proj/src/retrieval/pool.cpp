#include "compose/pool.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <spdlog/spdlog.h>

#include "compose/errors.hpp"
#include "compose/image_ops.hpp"

namespace compose {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "descriptor files are written in host order");

std::pair<double, double> SegmentRecord::normalized_size() const {
  const double s = frame.side;
  return {box.width() / s, box.height() / s};
}

namespace {

double norm_of(const Descriptor& d) {
  double acc = 0.0;
  for (float v : d) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

double dot(const Descriptor& a, const Descriptor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

std::vector<float> concat(const Descriptor& g, const Descriptor& l) {
  std::vector<float> out(g);
  out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace

CandidatePool::CandidatePool(std::vector<SegmentRecord> records, nlohmann::json params)
    : records_(std::move(records)), params_(std::move(params)) {
  if (records_.empty()) throw InvalidArgument("candidate pool is empty");
  dim_ = static_cast<int>(records_.front().global.size());
  if (dim_ == 0) throw InvalidArgument("candidate pool descriptors are empty");
  std::set<std::int64_t> ids;
  std::vector<float> rows;
  std::vector<std::int64_t> row_ids;
  rows.reserve(records_.size() * 2 * static_cast<std::size_t>(dim_));
  for (const auto& r : records_) {
    if (!ids.insert(r.id).second) throw InvalidArgument("duplicate segment id " + std::to_string(r.id));
    if (static_cast<int>(r.global.size()) != dim_ || static_cast<int>(r.local.size()) != dim_) {
      throw InvalidArgument("segment " + std::to_string(r.id) + " has mismatched descriptor dimensions");
    }
    if (std::abs(norm_of(r.global) - 1.0) > 1e-6 || std::abs(norm_of(r.local) - 1.0) > 1e-6) {
      throw InvalidArgument("segment " + std::to_string(r.id) + " descriptors are not unit norm");
    }
    if (r.mask.empty() || cv::countNonZero(r.mask) == 0) {
      throw InvalidArgument("segment " + std::to_string(r.id) + " has an empty mask");
    }
    const auto row = concat(r.global, r.local);
    rows.insert(rows.end(), row.begin(), row.end());
    row_ids.push_back(r.id);
  }
  index_ = KdTree(std::move(rows), 2 * dim_, std::move(row_ids));
}

const SegmentRecord* CandidatePool::find(std::int64_t id) const {
  for (const auto& r : records_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

void CandidatePool::save(const fs::path& dir) const {
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "pixels");
  nlohmann::json recs = nlohmann::json::array();
  std::vector<float> matrix;
  for (const auto& r : records_) {
    const std::string name = std::to_string(r.id) + ".png";
    write_image(dir / "masks" / name, r.mask);
    write_image(dir / "pixels" / name, r.pixels);
    recs.push_back({{"id", r.id},
                    {"source", r.source},
                    {"image_id", r.image_id},
                    {"instance_id", r.instance_id},
                    {"box", {r.box.x_min, r.box.y_min, r.box.x_max, r.box.y_max}},
                    {"frame", {r.frame.side, r.frame.offset_x, r.frame.offset_y, r.frame.width, r.frame.height}},
                    {"mask", "masks/" + name},
                    {"pixels", "pixels/" + name},
                    {"metadata", r.metadata}});
    const auto row = concat(r.global, r.local);
    matrix.insert(matrix.end(), row.begin(), row.end());
  }
  const nlohmann::json manifest{{"format", "compose-pool"}, {"version", 1},          {"dimension", dim_},
                                {"size", records_.size()},  {"params", params_}, {"records", recs}};
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(1) << '\n';

  std::ofstream bin(dir / "descriptors.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + (dir / "descriptors.bin").string());
  for (float v : matrix) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!bin) throw IoError("short write to " + (dir / "descriptors.bin").string());
}

CandidatePool CandidatePool::load(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("no pool manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed pool manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "compose-pool" || manifest.value("version", 0) != 1) {
    throw IoError(dir.string() + " is not a version 1 pool");
  }
  const auto dim = manifest.at("dimension").get<std::size_t>();
  const auto& recs = manifest.at("records");
  const std::size_t floats = recs.size() * 2 * dim;
  std::ifstream bin(dir / "descriptors.bin", std::ios::binary | std::ios::ate);
  if (!bin || static_cast<std::size_t>(bin.tellg()) != floats * sizeof(float)) {
    throw IoError("descriptor matrix in " + dir.string() + " does not match the manifest");
  }
  bin.seekg(0);
  std::vector<float> matrix(floats);
  for (float& v : matrix) {
    std::uint32_t bits = 0;
    bin.read(reinterpret_cast<char*>(&bits), sizeof bits);
    v = std::bit_cast<float>(bits);
  }

  std::vector<SegmentRecord> records;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& j = recs[i];
    SegmentRecord r;
    r.id = j.at("id").get<std::int64_t>();
    r.source = j.at("source").get<std::string>();
    r.image_id = j.at("image_id").get<std::int64_t>();
    r.instance_id = j.at("instance_id").get<std::int64_t>();
    const auto b = j.at("box").get<std::vector<double>>();
    r.box = {b.at(0), b.at(1), b.at(2), b.at(3)};
    const auto f = j.at("frame").get<std::vector<int>>();
    r.frame = {f.at(0), f.at(1), f.at(2), f.at(3), f.at(4)};
    const float* row = matrix.data() + i * 2 * dim;
    r.global.assign(row, row + dim);
    r.local.assign(row + dim, row + 2 * dim);
    r.mask = read_mask_image(dir / j.at("mask").get<std::string>());
    r.pixels = read_color_image(dir / j.at("pixels").get<std::string>());
    r.metadata = j.value("metadata", nlohmann::json::object());
    records.push_back(std::move(r));
  }
  return CandidatePool(std::move(records), manifest.value("params", nlohmann::json::object()));
}

CandidatePool build_pool(const CocoDataset& dataset, const fs::path& image_dir, const FeatureExtractor& extractor,
                         const PoolBuildConfig& config) {
  const int category = dataset.category_id(config.category);
  const auto refs = filter_instances(dataset.images(), category, config.filters);
  std::vector<SegmentRecord> records;
  std::int64_t loaded_id = -1;
  cv::Mat pixels;
  Descriptor global;
  for (const auto& ref : refs) {
    const CocoImage& image = *dataset.find_image(ref.image_id);
    const CocoInstance& inst = *image.find_instance(ref.instance_id);
    try {
      if (loaded_id != image.id) {
        pixels = read_color_image(image_dir / image.file_name);
        loaded_id = image.id;
        global = extract_global(pixels, extractor);
      }
      const cv::Mat mask = decode_segmentation(inst.segmentation, image.width, image.height);
      const auto bounds = mask_bounds(mask);
      if (!bounds) throw InvalidArgument("empty mask");
      const cv::Rect crop(static_cast<int>(bounds->x_min), static_cast<int>(bounds->y_min),
                          static_cast<int>(bounds->width()), static_cast<int>(bounds->height()));
      SegmentRecord r;
      r.id = static_cast<std::int64_t>(records.size()) + 1;
      r.source = image.file_name;
      r.image_id = image.id;
      r.instance_id = inst.id;
      r.box = *bounds;
      r.frame = pad_to_square(image.width, image.height);
      r.global = global;
      r.local = extract_local(pixels, inst.box, extractor);
      r.pixels = pixels(crop).clone();
      r.mask = mask(crop).clone();
      r.metadata = {{"category", config.category}};
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      spdlog::warn("pool: skipping image {} instance {}: {}", image.id, inst.id, e.what());
    }
  }
  if (records.empty()) throw StateError("no segments survived filtering; the pool would be empty");
  spdlog::info("pool: {} segments from {} filtered instances", records.size(), refs.size());
  const nlohmann::json params{{"category", config.category},
                              {"filters", config.filters},
                              {"extractor", extractor.id()},
                              {"candidates", refs.size()}};
  return CandidatePool(std::move(records), params);
}

double cosine_distance(const SegmentRecord& a, const SegmentRecord& b) {
  return 1.0 - (dot(a.global, b.global) + dot(a.local, b.local)) / 2.0;
}

QueryDescriptor describe_query(const cv::Mat& background, const PixelBox& box, const FeatureExtractor& extractor) {
  const SquareFrame frame = pad_to_square(background.cols, background.rows);
  return {extract_global(background, extractor), extract_local(background, box, extractor), box.width() / frame.side,
          box.height() / frame.side};
}

namespace {

std::vector<Match> ranked(const CandidatePool& pool, const QueryDescriptor& q, int k,
                          const std::function<bool(std::size_t)>& accept) {
  if (static_cast<int>(q.global.size()) != pool.descriptor_dim() ||
      static_cast<int>(q.local.size()) != pool.descriptor_dim()) {
    throw InvalidArgument("query descriptors do not match the pool's dimension");
  }
  const auto row = concat(q.global, q.local);
  std::vector<Match> out;
  // |a - b|^2 = 4 (1 - cos) for concatenations of two unit halves
  for (const auto& n : pool.index().knn(row, k, accept)) out.push_back({&pool.records()[n.row], n.distance2 / 4.0});
  return out;
}

}  // namespace

QueryResult query(const CandidatePool& pool, const QueryDescriptor& q, int k, double min_iou) {
  if (!(q.w > 0.0) || !(q.h > 0.0)) throw InvalidArgument("query box must have positive size");
  const auto passes = [&](std::size_t row) {
    const auto [w, h] = pool.records()[row].normalized_size();
    return center_aligned_iou({q.w, q.h}, {w, h}) >= min_iou;
  };
  QueryResult result;
  result.matches = ranked(pool, q, k, passes);
  if (result.matches.empty() && k > 0) result.status = QueryStatus::AllFilteredBySize;
  return result;
}

UiCandidates top_candidates_for_ui(const CandidatePool& pool, const QueryDescriptor& q, int count, double min_iou) {
  if (pool.size() == 0) throw StateError("candidate pool is empty");
  UiCandidates ui;
  ui.matches = query(pool, q, count, min_iou).matches;
  if (static_cast<int>(ui.matches.size()) < count) {
    std::set<const SegmentRecord*> taken;
    for (const auto& m : ui.matches) taken.insert(m.record);
    for (const auto& m : ranked(pool, q, count, [&](std::size_t row) { return !taken.count(&pool.records()[row]); })) {
      if (static_cast<int>(ui.matches.size()) >= count) break;
      ui.matches.push_back(m);
      ui.padded = true;
    }
  }
  ui.incomplete = static_cast<int>(ui.matches.size()) < count;
  return ui;
}

}  // namespace compose
