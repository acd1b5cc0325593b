#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "compose/geometry.hpp"
#include "compose/nn/tensor.hpp"

namespace compose {

/// Filter triple of one residual bottleneck block plus the stride of its last 1x1 layer.
struct BlockConfig {
  int reduce = 64;
  int middle = 64;
  int expand = 128;
  int stride = 2;

  friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

struct NetworkConfig {
  int input_resolution = 480;
  int input_channels = 6;
  int grid_size = kGridSize;

  int stem_channels = 64;
  int stem_kernel = 7;
  int stem_stride = 2;
  int stem_padding = 0;

  int pool_kernel = 3;
  int pool_stride = 2;
  int pool_padding = 0;

  std::array<BlockConfig, 3> blocks{{{64, 64, 128, 2}, {64, 64, 128, 2}, {128, 128, 512, 2}}};

  int location_channels = 64;
  int size_channels = 512;
  int dilation = 2;
  int fc_hidden = 512;

  int num_location_classes() const { return grid_size * grid_size; }
  int num_size_classes() const { return grid_size * grid_size; }

  /// Throws InvalidArgument when the layer arithmetic does not land on grid_size x grid_size.
  void validate() const;

  /// The full-resolution architecture (6 x 480 x 480 input, 512 x 15 x 15 trunk).
  static NetworkConfig reference();
  /// Same topology at 60 x 60 input with narrow channels; trains on a CPU in minutes.
  static NetworkConfig compact();
  /// Grid 5, at most 8 channels; for finite-difference gradient checks.
  static NetworkConfig tiny();

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);

/// Name and activation shape of each layer for a given config, computed from the layer arithmetic alone.
struct LayerShape {
  std::string layer;
  std::vector<int> shape;
};
std::vector<LayerShape> expected_activation_shapes(const NetworkConfig& config);

enum class RoiSource { GroundTruth, Predicted };

/// Every intermediate activation of one forward pass, kept for backprop and inspection.
struct ForwardState {
  struct Block {
    nn::Tensor input;
    nn::Tensor reduce;  // post-ReLU
    nn::Tensor middle;  // post-ReLU
    nn::Tensor output;  // post-ReLU, after the residual sum
  };

  nn::Tensor input;
  nn::Tensor stem;  // post-ReLU
  std::vector<int> pool_argmax;
  nn::Tensor pool;
  std::array<Block, 3> blocks;
  nn::Tensor trunk;

  nn::Tensor location_hidden;  // post-ReLU
  nn::Tensor location_map;     // 1 x G x G logits

  nn::Tensor size_features;  // post-ReLU
  GridCell roi_cell;
  RoiSource roi_source = RoiSource::Predicted;
  nn::Tensor roi;
  std::vector<int> roi_argmax;
  nn::Tensor pooled;
  nn::Tensor size_hidden;  // post-ReLU
  nn::Tensor size_logits;
};

struct LossBreakdown {
  double location = 0.0;
  double size = 0.0;
  double total() const { return location + size; }
};

struct SizeHypothesis {
  GridCell cell;
  double probability = 0.0;
};

struct LocationHypothesis {
  GridCell cell;
  double probability = 0.0;
  std::vector<double> size_probabilities;
  std::vector<SizeHypothesis> sizes;  // top-k, descending
};

struct PlacementPrediction {
  int grid = kGridSize;
  std::vector<double> location_probabilities;  // grid*grid, row-major
  GridCell location;                           // top-1 location
  std::vector<double> size_probabilities;      // size distribution at the top-1 location
  GridCell size;                               // top-1 size at the top-1 location
  std::vector<LocationHypothesis> hypotheses;  // location-major
  std::vector<NormalizedBox> boxes;            // one per (location, size) pair, location-major

  NormalizedBox top_box() const { return boxes.front(); }
};

/// Box whose standing point and size are the centers of the given cells.
NormalizedBox decode_box(const GridCell& location, const GridCell& size, int grid = kGridSize);

/// The two-branch placement network: shared residual trunk, location branch (G x G logits) and a
/// size branch that reads a 3 x 3 slice of its feature map at a location cell.
class PlacementNet {
 public:
  PlacementNet(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<nn::Tensor>& parameters() { return params_; }
  const std::vector<nn::Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_count() const;
  nn::Tensor& parameter(const std::string& name);

  /// Zero-initialized tensors matching the parameter shapes.
  std::vector<nn::Tensor> zero_gradients() const;

  /// Full forward pass. With a ground-truth cell the size branch slices there; otherwise it slices at
  /// the arg-max of the location map.
  ForwardState forward(const nn::Tensor& input, std::optional<GridCell> roi_cell = std::nullopt) const;

  /// Cross-entropy of both heads for a state produced with roi_cell = size target's location.
  LossBreakdown loss(const ForwardState& state, int location_target, int size_target) const;

  /// Loss plus gradients accumulated into grads (scaled by weight).
  LossBreakdown backward(const ForwardState& state, int location_target, int size_target,
                         std::vector<nn::Tensor>& grads, double weight = 1.0) const;

  /// Two-stage inference: top-k locations, then a size distribution for each chosen location.
  PlacementPrediction predict(const nn::Tensor& input, int k_location, int k_size) const;

  /// n_people locations by repeated arg-max with 3 x 3 neighborhood suppression, each with its size stage.
  /// A non-empty eligible mask (one flag per cell) restricts the choice; see select_separated_cells.
  std::vector<PlacementPrediction> predict_multi(const nn::Tensor& input, int n_people, int k_size = 1,
                                                 std::span<const char> eligible = {}) const;

  /// Stage-2 only: size logits for a trunk feature map at the given cell.
  std::vector<double> size_logits_at(const nn::Tensor& size_features, const GridCell& cell) const;

 private:
  struct Trunk {
    nn::Tensor trunk;
    nn::Tensor size_features;
    std::vector<double> location_probabilities;
  };
  Trunk run_trunk(const nn::Tensor& input) const;
  PlacementPrediction assemble(const Trunk& trunk, const std::vector<GridCell>& locations, int k_size) const;

  void add_param(const std::string& name, std::vector<int> shape);
  const nn::Tensor& p(int index) const { return params_[static_cast<std::size_t>(index)]; }

  NetworkConfig config_;
  std::uint64_t seed_;
  std::vector<nn::Tensor> params_;
  std::vector<std::string> names_;
};

/// Selects n cells from a probability map by repeated arg-max, suppressing the 3 x 3 neighborhood of
/// every chosen cell. When every remaining cell is suppressed, the best unchosen cell is taken.
/// Cells flagged 0 in a non-empty eligible mask are only taken once every eligible cell is chosen.
std::vector<GridCell> select_separated_cells(std::span<const double> probabilities, int grid, int n,
                                            std::span<const char> eligible = {});

}  // namespace compose
