#include <random>
#include <string>

#include <gtest/gtest.h>
#include <opencv2/core.hpp>

#include "compose/coco.hpp"
#include "compose/errors.hpp"

namespace compose {
namespace {

// Reference encoders following the COCO mask API.
std::vector<std::uint32_t> encode_counts(const cv::Mat& mask) {
  std::vector<std::uint32_t> counts;
  std::uint8_t prev = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < mask.cols; ++x) {
    for (int y = 0; y < mask.rows; ++y) {
      const std::uint8_t v = mask.at<std::uint8_t>(y, x) ? 1 : 0;
      if (v != prev) {
        counts.push_back(run);
        run = 0;
        prev = v;
      }
      ++run;
    }
  }
  counts.push_back(run);
  return counts;
}

std::string counts_to_string(const std::vector<std::uint32_t>& cnts) {
  std::string s;
  for (std::size_t i = 0; i < cnts.size(); ++i) {
    long long x = cnts[i];
    if (i > 2) x -= static_cast<long long>(cnts[i - 2]);
    bool more = true;
    while (more) {
      long long c = x & 0x1f;
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

cv::Mat random_blob_mask(std::mt19937& rng, int w, int h) {
  cv::Mat m(h, w, CV_8UC1, cv::Scalar(0));
  std::uniform_int_distribution<int> px(0, w - 1), py(0, h - 1), r(1, 12);
  for (int i = 0; i < 4; ++i) {
    const int x0 = px(rng), y0 = py(rng), rr = r(rng);
    for (int y = std::max(0, y0 - rr); y < std::min(h, y0 + rr); ++y) {
      for (int x = std::max(0, x0 - rr); x < std::min(w, x0 + rr); ++x) m.at<std::uint8_t>(y, x) = 255;
    }
  }
  return m;
}

TEST(Coco, UncompressedRleIsColumnMajorStartingWithBackground) {
  // 3x2 image, column-major: [0,1,1 | 1,0,0] -> counts 1,3,2
  const nlohmann::json seg = {{"size", {3, 2}}, {"counts", {1, 3, 2}}};
  const cv::Mat m = decode_segmentation(seg, 2, 3);
  EXPECT_EQ(m.at<std::uint8_t>(0, 0), 0);
  EXPECT_EQ(m.at<std::uint8_t>(1, 0), 255);
  EXPECT_EQ(m.at<std::uint8_t>(2, 0), 255);
  EXPECT_EQ(m.at<std::uint8_t>(0, 1), 255);
  EXPECT_EQ(m.at<std::uint8_t>(1, 1), 0);
  EXPECT_EQ(m.at<std::uint8_t>(2, 1), 0);
}

TEST(Coco, CompressedRleMatchesReferenceEncoderOnRandomMasks) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 20 + trial, h = 15 + 2 * trial;
    const cv::Mat mask = random_blob_mask(rng, w, h);
    const auto counts = encode_counts(mask);
    EXPECT_EQ(decode_rle_string(counts_to_string(counts)), counts);
    const nlohmann::json seg = {{"size", {h, w}}, {"counts", counts_to_string(counts)}};
    EXPECT_EQ(cv::norm(decode_segmentation(seg, w, h), mask, cv::NORM_INF), 0.0);
    const nlohmann::json raw = {{"size", {h, w}}, {"counts", counts}};
    EXPECT_EQ(cv::norm(decode_segmentation(raw, w, h), mask, cv::NORM_INF), 0.0);
  }
}

TEST(Coco, KnownCompressedString) {
  // counts [5, 10, 300, 2] encoded by the reference algorithm
  EXPECT_EQ(decode_rle_string(counts_to_string({5, 10, 300, 2})), (std::vector<std::uint32_t>{5, 10, 300, 2}));
  EXPECT_EQ(decode_rle_string("52"), (std::vector<std::uint32_t>{5, 2}));
}

TEST(Coco, RejectsMalformedRle) {
  EXPECT_THROW(decode_segmentation({{"size", {2, 2}}, {"counts", {1, 9}}}, 2, 2), InvalidArgument);
  EXPECT_THROW(decode_segmentation({{"size", {3, 2}}, {"counts", {1}}}, 2, 2), InvalidArgument);
  EXPECT_THROW(decode_rle_string("5P"), InvalidArgument);
  EXPECT_THROW(decode_segmentation(nlohmann::json(5), 2, 2), InvalidArgument);
}

TEST(Coco, PolygonRasterizesInsideItsBounds) {
  const nlohmann::json seg = {{10, 10, 30, 10, 30, 25, 10, 25}};
  const cv::Mat m = decode_segmentation(seg, 50, 40);
  const auto b = mask_bounds(m);
  ASSERT_TRUE(b);
  EXPECT_EQ(b->x_min, 10);
  EXPECT_EQ(b->y_min, 10);
  EXPECT_EQ(b->x_max, 31);
  EXPECT_EQ(b->y_max, 26);
  EXPECT_EQ(cv::countNonZero(m), 21 * 16);
  EXPECT_FALSE(mask_bounds(cv::Mat(4, 4, CV_8UC1, cv::Scalar(0))));
}

TEST(Coco, DatasetGroupsSortsAndDropsDegenerateBoxes) {
  const nlohmann::json doc = {
      {"images", {{{"id", 2}, {"file_name", "b.png"}, {"width", 100}, {"height", 80}},
                  {{"id", 1}, {"file_name", "a.png"}, {"width", 64}, {"height", 48}}}},
      {"annotations",
       {{{"id", 9}, {"image_id", 2}, {"category_id", 1}, {"bbox", {1, 2, 30, 40}}, {"iscrowd", 0}},
        {{"id", 3}, {"image_id", 2}, {"category_id", 3}, {"bbox", {5, 5, 10, 10}}, {"iscrowd", 1}},
        {{"id", 4}, {"image_id", 1}, {"category_id", 1}, {"bbox", {5, 5, 0, 10}}},
        {{"id", 5}, {"image_id", 77}, {"category_id", 1}, {"bbox", {5, 5, 10, 10}}}}},
      {"categories", {{{"id", 1}, {"name", "person"}}, {{"id", 3}, {"name", "car"}}}}};
  const CocoDataset ds = CocoDataset::from_json(doc);
  ASSERT_EQ(ds.images().size(), 2u);
  EXPECT_EQ(ds.images()[0].id, 1);
  EXPECT_TRUE(ds.images()[0].instances.empty());
  const CocoImage* b = ds.find_image(2);
  ASSERT_NE(b, nullptr);
  ASSERT_EQ(b->instances.size(), 2u);
  EXPECT_EQ(b->instances[0].id, 3);
  EXPECT_TRUE(b->instances[0].crowd);
  EXPECT_EQ(b->find_instance(9)->box.x_max, 31);
  EXPECT_EQ(b->find_instance(10), nullptr);
  EXPECT_EQ(ds.rejected_annotations(), 2u);
  EXPECT_EQ(ds.category_id("car"), 3);
  EXPECT_THROW(ds.category_id("dog"), InvalidArgument);
  EXPECT_EQ(ds.find_image(3), nullptr);
}

}  // namespace
}  // namespace compose
