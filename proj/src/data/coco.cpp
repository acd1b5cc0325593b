#include "compose/coco.hpp"

#include <algorithm>
#include <fstream>

#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "compose/errors.hpp"

namespace compose {

const CocoInstance* CocoImage::find_instance(std::int64_t instance_id) const {
  const auto it = std::lower_bound(instances.begin(), instances.end(), instance_id,
                                   [](const CocoInstance& a, std::int64_t id) { return a.id < id; });
  return it != instances.end() && it->id == instance_id ? &*it : nullptr;
}

CocoDataset CocoDataset::load(const std::filesystem::path& annotation_file) {
  std::ifstream in(annotation_file);
  if (!in) throw IoError("cannot open annotations " + annotation_file.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed annotations " + annotation_file.string() + ": " + e.what());
  }
  return from_json(doc);
}

CocoDataset CocoDataset::from_json(const nlohmann::json& doc) {
  CocoDataset ds;
  for (const auto& c : doc.value("categories", nlohmann::json::array())) {
    ds.categories_[c.at("id").get<int>()] = c.at("name").get<std::string>();
  }
  std::map<std::int64_t, CocoImage> images;
  for (const auto& im : doc.at("images")) {
    CocoImage img;
    img.id = im.at("id").get<std::int64_t>();
    img.file_name = im.at("file_name").get<std::string>();
    img.width = im.at("width").get<int>();
    img.height = im.at("height").get<int>();
    images[img.id] = std::move(img);
  }
  for (const auto& a : doc.value("annotations", nlohmann::json::array())) {
    CocoInstance inst;
    inst.id = a.at("id").get<std::int64_t>();
    inst.image_id = a.at("image_id").get<std::int64_t>();
    inst.category_id = a.at("category_id").get<int>();
    inst.crowd = a.value("iscrowd", 0) != 0;
    const auto& bb = a.at("bbox");
    inst.box = PixelBox::from_xywh(bb.at(0).get<double>(), bb.at(1).get<double>(), bb.at(2).get<double>(),
                                   bb.at(3).get<double>());
    inst.segmentation = a.value("segmentation", nlohmann::json());
    const auto it = images.find(inst.image_id);
    if (it == images.end() || !inst.box.valid()) {
      spdlog::warn("dropping annotation {}: {}", inst.id,
                   it == images.end() ? "unknown image" : "degenerate bounding box");
      ++ds.rejected_;
      continue;
    }
    it->second.instances.push_back(std::move(inst));
  }
  for (auto& [id, img] : images) {
    std::sort(img.instances.begin(), img.instances.end(),
              [](const CocoInstance& a, const CocoInstance& b) { return a.id < b.id; });
    ds.images_.push_back(std::move(img));
  }
  return ds;
}

const CocoImage* CocoDataset::find_image(std::int64_t image_id) const {
  const auto it = std::lower_bound(images_.begin(), images_.end(), image_id,
                                   [](const CocoImage& a, std::int64_t id) { return a.id < id; });
  return it != images_.end() && it->id == image_id ? &*it : nullptr;
}

int CocoDataset::category_id(const std::string& name) const {
  for (const auto& [id, n] : categories_) {
    if (n == name) return id;
  }
  throw InvalidArgument("unknown category '" + name + "'");
}

std::vector<int> CocoDataset::category_ids() const {
  std::vector<int> ids;
  for (const auto& [id, n] : categories_) ids.push_back(id);
  return ids;
}

std::vector<std::uint32_t> decode_rle_string(const std::string& s) {
  // LEB128-like 6-bit groups with the first-difference trick from the COCO API.
  std::vector<std::uint32_t> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    long long x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw InvalidArgument("truncated RLE string");
      const long long c = static_cast<long long>(s[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1LL << (5 * k);
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    if (x < 0) throw InvalidArgument("corrupt RLE string");
    counts.push_back(static_cast<std::uint32_t>(x));
  }
  return counts;
}

namespace {

cv::Mat rle_to_mask(const std::vector<std::uint32_t>& counts, int width, int height) {
  // Column-major runs, starting with background.
  cv::Mat mask(height, width, CV_8UC1, cv::Scalar(0));
  const std::size_t total = static_cast<std::size_t>(width) * height;
  std::size_t pos = 0;
  bool on = false;
  for (std::uint32_t run : counts) {
    if (pos + run > total) throw InvalidArgument("RLE runs exceed mask size");
    if (on) {
      for (std::size_t i = pos; i < pos + run; ++i) {
        mask.at<std::uint8_t>(static_cast<int>(i % height), static_cast<int>(i / height)) = 255;
      }
    }
    pos += run;
    on = !on;
  }
  return mask;
}

}  // namespace

cv::Mat decode_segmentation(const nlohmann::json& seg, int width, int height) {
  if (seg.is_array()) {
    cv::Mat mask(height, width, CV_8UC1, cv::Scalar(0));
    std::vector<std::vector<cv::Point>> polys;
    for (const auto& poly : seg) {
      std::vector<cv::Point> pts;
      for (std::size_t i = 0; i + 1 < poly.size(); i += 2) {
        pts.emplace_back(static_cast<int>(std::lround(poly[i].get<double>())),
                         static_cast<int>(std::lround(poly[i + 1].get<double>())));
      }
      if (pts.size() >= 3) polys.push_back(std::move(pts));
    }
    if (!polys.empty()) cv::fillPoly(mask, polys, cv::Scalar(255));
    return mask;
  }
  if (seg.is_object() && seg.contains("counts")) {
    const auto& size = seg.at("size");
    if (size.at(0).get<int>() != height || size.at(1).get<int>() != width) {
      throw InvalidArgument("RLE size does not match image");
    }
    const auto& counts = seg.at("counts");
    if (counts.is_string()) return rle_to_mask(decode_rle_string(counts.get<std::string>()), width, height);
    return rle_to_mask(counts.get<std::vector<std::uint32_t>>(), width, height);
  }
  throw InvalidArgument("unsupported segmentation encoding");
}

std::optional<PixelBox> mask_bounds(const cv::Mat& mask) {
  std::vector<cv::Point> nz;
  cv::findNonZero(mask, nz);
  if (nz.empty()) return std::nullopt;
  const cv::Rect r = cv::boundingRect(nz);
  return PixelBox{static_cast<double>(r.x), static_cast<double>(r.y), static_cast<double>(r.x + r.width),
                  static_cast<double>(r.y + r.height)};
}

}  // namespace compose
