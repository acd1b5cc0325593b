#include "compose/placement_net.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "compose/errors.hpp"
#include "compose/nn/layers.hpp"

namespace compose {

using nn::ConvSpec;
using nn::Tensor;

namespace {

// Parameter slots, in registration order.
constexpr int kStemW = 0;
constexpr int kStemB = 1;
constexpr int kBlockBase = 2;
constexpr int kBlockStride = 8;  // conv1 w/b, conv2 w/b, conv3 w/b, shortcut w/b
constexpr int kLocConv1W = 26;
constexpr int kLocConv1B = 27;
constexpr int kLocConv2W = 28;
constexpr int kLocConv2B = 29;
constexpr int kSizeConvW = 30;
constexpr int kSizeConvB = 31;
constexpr int kSizeFc1W = 32;
constexpr int kSizeFc1B = 33;
constexpr int kSizeFc2W = 34;
constexpr int kSizeFc2B = 35;

struct BlockSpecs {
  ConvSpec reduce, middle, expand, shortcut;
};

ConvSpec stem_spec(const NetworkConfig& c) {
  return {c.input_channels, c.stem_channels, c.stem_kernel, c.stem_stride, c.stem_padding, 1};
}

BlockSpecs block_specs(const NetworkConfig& c, int b) {
  const int in = b == 0 ? c.stem_channels : c.blocks[static_cast<std::size_t>(b - 1)].expand;
  const BlockConfig& bc = c.blocks[static_cast<std::size_t>(b)];
  return {{in, bc.reduce, 1, 1, 0, 1},
          {bc.reduce, bc.middle, 3, 1, 1, 1},
          {bc.middle, bc.expand, 1, bc.stride, 0, 1},
          {in, bc.expand, 1, bc.stride, 0, 1}};
}

ConvSpec loc1_spec(const NetworkConfig& c) {
  return {c.blocks[2].expand, c.location_channels, 3, 1, c.dilation, c.dilation};
}
ConvSpec loc2_spec(const NetworkConfig& c) { return {c.location_channels, 1, 3, 1, c.dilation, c.dilation}; }
ConvSpec size_spec(const NetworkConfig& c) {
  return {c.blocks[2].expand, c.size_channels, 3, 1, c.dilation, c.dilation};
}

int block_w(int b) { return kBlockBase + b * kBlockStride; }

void fill_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
}

}  // namespace

void NetworkConfig::validate() const {
  auto positive = [](int v) { return v > 0; };
  if (!positive(input_resolution) || !positive(input_channels) || !positive(grid_size) ||
      !positive(stem_channels) || !positive(location_channels) || !positive(size_channels) ||
      !positive(fc_hidden) || !positive(dilation)) {
    throw InvalidArgument("network config: sizes must be positive");
  }
  for (const auto& b : blocks) {
    if (!positive(b.reduce) || !positive(b.middle) || !positive(b.expand) || !positive(b.stride)) {
      throw InvalidArgument("network config: block sizes must be positive");
    }
  }
  const auto shapes = expected_activation_shapes(*this);
  const auto& trunk = shapes[5].shape;
  if (trunk[1] != grid_size || trunk[2] != grid_size) {
    throw InvalidArgument("network config: trunk output " + std::to_string(trunk[1]) + "x" +
                          std::to_string(trunk[2]) + " does not match grid " + std::to_string(grid_size));
  }
}

NetworkConfig NetworkConfig::reference() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::compact() {
  NetworkConfig c;
  c.input_resolution = 60;
  c.stem_channels = 16;
  c.stem_padding = 3;
  c.pool_padding = 1;
  c.blocks = {{{16, 16, 32, 1}, {16, 16, 32, 1}, {32, 32, 64, 1}}};
  c.location_channels = 32;
  c.size_channels = 64;
  c.fc_hidden = 64;
  return c;
}

NetworkConfig NetworkConfig::tiny() {
  NetworkConfig c;
  c.input_resolution = 20;
  c.grid_size = 5;
  c.stem_channels = 8;
  c.stem_padding = 3;
  c.pool_padding = 1;
  c.blocks = {{{4, 4, 8, 1}, {4, 4, 8, 1}, {8, 8, 8, 1}}};
  c.location_channels = 8;
  c.size_channels = 8;
  c.fc_hidden = 8;
  return c;
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.blocks) blocks.push_back({b.reduce, b.middle, b.expand, b.stride});
  j = {{"input_resolution", c.input_resolution},
       {"input_channels", c.input_channels},
       {"grid_size", c.grid_size},
       {"stem_channels", c.stem_channels},
       {"stem_kernel", c.stem_kernel},
       {"stem_stride", c.stem_stride},
       {"stem_padding", c.stem_padding},
       {"pool_kernel", c.pool_kernel},
       {"pool_stride", c.pool_stride},
       {"pool_padding", c.pool_padding},
       {"blocks", blocks},
       {"location_channels", c.location_channels},
       {"size_channels", c.size_channels},
       {"dilation", c.dilation},
       {"fc_hidden", c.fc_hidden}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.input_resolution = j.value("input_resolution", d.input_resolution);
  c.input_channels = j.value("input_channels", d.input_channels);
  c.grid_size = j.value("grid_size", d.grid_size);
  c.stem_channels = j.value("stem_channels", d.stem_channels);
  c.stem_kernel = j.value("stem_kernel", d.stem_kernel);
  c.stem_stride = j.value("stem_stride", d.stem_stride);
  c.stem_padding = j.value("stem_padding", d.stem_padding);
  c.pool_kernel = j.value("pool_kernel", d.pool_kernel);
  c.pool_stride = j.value("pool_stride", d.pool_stride);
  c.pool_padding = j.value("pool_padding", d.pool_padding);
  if (j.contains("blocks")) {
    const auto& blocks = j.at("blocks");
    if (blocks.size() != 3) throw InvalidArgument("network config: expected 3 blocks");
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& b = blocks[i];
      c.blocks[i] = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
    }
  } else {
    c.blocks = d.blocks;
  }
  c.location_channels = j.value("location_channels", d.location_channels);
  c.size_channels = j.value("size_channels", d.size_channels);
  c.dilation = j.value("dilation", d.dilation);
  c.fc_hidden = j.value("fc_hidden", d.fc_hidden);
}

std::vector<LayerShape> expected_activation_shapes(const NetworkConfig& c) {
  using nn::window_output_size;
  std::vector<LayerShape> out;
  int size = c.input_resolution;
  out.push_back({"input", {c.input_channels, size, size}});
  size = window_output_size(size, c.stem_kernel, c.stem_stride, c.stem_padding);
  out.push_back({"stem_conv", {c.stem_channels, size, size}});
  size = window_output_size(size, c.pool_kernel, c.pool_stride, c.pool_padding);
  out.push_back({"max_pool", {c.stem_channels, size, size}});
  for (int b = 0; b < 3; ++b) {
    const auto& bc = c.blocks[static_cast<std::size_t>(b)];
    size = window_output_size(size, 1, bc.stride, 0);
    out.push_back({"conv_block_" + std::to_string(b + 1), {bc.expand, size, size}});
  }
  if (size <= 0) throw InvalidArgument("network config: input too small for the trunk");
  const int loc = window_output_size(size, 3, 1, c.dilation, c.dilation);
  out.push_back({"location_conv_1", {c.location_channels, loc, loc}});
  out.push_back({"location_conv_2", {loc, loc}});
  out.push_back({"size_conv", {c.size_channels, loc, loc}});
  out.push_back({"roi_slice", {c.size_channels, 3, 3}});
  out.push_back({"global_max_pool", {c.size_channels}});
  out.push_back({"fully_connected", {c.num_size_classes()}});
  return out;
}

NormalizedBox decode_box(const GridCell& location, const GridCell& size, int grid) {
  const auto [x, y] = decode_cell(location, grid);
  const auto [w, h] = decode_cell(size, grid);
  return {x, y, w, h};
}

PlacementNet::PlacementNet(NetworkConfig config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  const auto& c = config_;
  auto add_conv = [&](const std::string& name, const ConvSpec& s) {
    add_param(name + ".weight", {s.out_channels, s.in_channels, s.kernel, s.kernel});
    add_param(name + ".bias", {s.out_channels});
  };
  add_conv("stem", stem_spec(c));
  for (int b = 0; b < 3; ++b) {
    const auto specs = block_specs(c, b);
    const std::string prefix = "block" + std::to_string(b + 1);
    add_conv(prefix + ".reduce", specs.reduce);
    add_conv(prefix + ".middle", specs.middle);
    add_conv(prefix + ".expand", specs.expand);
    add_conv(prefix + ".shortcut", specs.shortcut);
  }
  add_conv("location.conv1", loc1_spec(c));
  add_conv("location.conv2", loc2_spec(c));
  add_conv("size.conv", size_spec(c));
  add_param("size.fc1.weight", {c.fc_hidden, c.size_channels});
  add_param("size.fc1.bias", {c.fc_hidden});
  add_param("size.fc2.weight", {c.num_size_classes(), c.fc_hidden});
  add_param("size.fc2.bias", {c.num_size_classes()});

  // Fan-in scaled normal init; output layers start near zero so both heads begin close to uniform.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i];
    if (t.rank() == 1) continue;
    const std::size_t fan_in = t.size() / static_cast<std::size_t>(t.dim(0));
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    if (static_cast<int>(i) == kLocConv2W || static_cast<int>(i) == kSizeFc2W) stddev *= 0.01;
    fill_normal(t, stddev, rng);
  }
}

void PlacementNet::add_param(const std::string& name, std::vector<int> shape) {
  params_.emplace_back(std::move(shape));
  names_.push_back(name);
}

std::size_t PlacementNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : params_) n += t.size();
  return n;
}

Tensor& PlacementNet::parameter(const std::string& name) {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw InvalidArgument("unknown parameter " + name);
  return params_[static_cast<std::size_t>(it - names_.begin())];
}

std::vector<Tensor> PlacementNet::zero_gradients() const {
  std::vector<Tensor> grads;
  grads.reserve(params_.size());
  for (const auto& t : params_) grads.emplace_back(t.shape());
  return grads;
}

ForwardState PlacementNet::forward(const Tensor& input, std::optional<GridCell> roi_cell) const {
  const auto& c = config_;
  if (input.rank() != 3 || input.dim(0) != c.input_channels || input.dim(1) != c.input_resolution ||
      input.dim(2) != c.input_resolution) {
    throw InvalidArgument("placement net: unexpected input shape " + input.shape_string());
  }
  ForwardState s;
  s.input = input;
  s.stem = nn::conv2d_forward(input, p(kStemW), p(kStemB), stem_spec(c));
  nn::relu_inplace(s.stem);
  s.pool = nn::maxpool_forward(s.stem, c.pool_kernel, c.pool_stride, c.pool_padding, s.pool_argmax);

  const Tensor* x = &s.pool;
  for (int b = 0; b < 3; ++b) {
    auto& st = s.blocks[static_cast<std::size_t>(b)];
    const auto specs = block_specs(c, b);
    const int w = block_w(b);
    st.input = *x;
    st.reduce = nn::conv2d_forward(st.input, p(w), p(w + 1), specs.reduce);
    nn::relu_inplace(st.reduce);
    st.middle = nn::conv2d_forward(st.reduce, p(w + 2), p(w + 3), specs.middle);
    nn::relu_inplace(st.middle);
    st.output = nn::conv2d_forward(st.middle, p(w + 4), p(w + 5), specs.expand);
    const Tensor shortcut = nn::conv2d_forward(st.input, p(w + 6), p(w + 7), specs.shortcut);
    for (std::size_t i = 0; i < st.output.size(); ++i) st.output[i] += shortcut[i];
    nn::relu_inplace(st.output);
    x = &st.output;
  }
  s.trunk = *x;

  s.location_hidden = nn::conv2d_forward(s.trunk, p(kLocConv1W), p(kLocConv1B), loc1_spec(c));
  nn::relu_inplace(s.location_hidden);
  s.location_map = nn::conv2d_forward(s.location_hidden, p(kLocConv2W), p(kLocConv2B), loc2_spec(c));

  s.size_features = nn::conv2d_forward(s.trunk, p(kSizeConvW), p(kSizeConvB), size_spec(c));
  nn::relu_inplace(s.size_features);
  if (roi_cell) {
    s.roi_cell = *roi_cell;
    s.roi_source = RoiSource::GroundTruth;
  } else {
    const int best = nn::top_k_indices(s.location_map.values(), 1).front();
    s.roi_cell = GridCell::from_index(best, c.grid_size);
    s.roi_source = RoiSource::Predicted;
  }
  s.roi = nn::roi_slice(s.size_features, s.roi_cell);
  s.pooled = nn::global_maxpool_forward(s.roi, s.roi_argmax);
  s.size_hidden = nn::linear_forward(s.pooled, p(kSizeFc1W), p(kSizeFc1B));
  nn::relu_inplace(s.size_hidden);
  s.size_logits = nn::linear_forward(s.size_hidden, p(kSizeFc2W), p(kSizeFc2B));
  return s;
}

LossBreakdown PlacementNet::loss(const ForwardState& state, int location_target, int size_target) const {
  return {nn::softmax_cross_entropy(state.location_map.values(), location_target, nullptr),
          nn::softmax_cross_entropy(state.size_logits.values(), size_target, nullptr)};
}

LossBreakdown PlacementNet::backward(const ForwardState& s, int location_target, int size_target,
                                     std::vector<Tensor>& g, double weight) const {
  const auto& c = config_;
  auto grad = [&](int i) -> Tensor& { return g[static_cast<std::size_t>(i)]; };

  std::vector<double> dloc_logits, dsize_logits;
  LossBreakdown out;
  out.location = nn::softmax_cross_entropy(s.location_map.values(), location_target, &dloc_logits);
  out.size = nn::softmax_cross_entropy(s.size_logits.values(), size_target, &dsize_logits);

  // Size branch.
  Tensor dsize({c.num_size_classes()});
  for (std::size_t i = 0; i < dsize.size(); ++i) dsize[i] = weight * dsize_logits[i];
  Tensor dhidden;
  nn::linear_backward(s.size_hidden, p(kSizeFc2W), dsize, &dhidden, grad(kSizeFc2W), grad(kSizeFc2B));
  nn::relu_backward_inplace(s.size_hidden, dhidden);
  Tensor dpooled;
  nn::linear_backward(s.pooled, p(kSizeFc1W), dhidden, &dpooled, grad(kSizeFc1W), grad(kSizeFc1B));
  const Tensor droi = nn::global_maxpool_backward(dpooled, s.roi_argmax, s.roi.shape());
  Tensor dsize_features(s.size_features.shape());
  nn::roi_slice_backward(droi, s.roi_cell, dsize_features);
  nn::relu_backward_inplace(s.size_features, dsize_features);
  Tensor dtrunk;
  nn::conv2d_backward(s.trunk, p(kSizeConvW), dsize_features, size_spec(c), &dtrunk, grad(kSizeConvW),
                      grad(kSizeConvB));

  // Location branch.
  Tensor dmap(s.location_map.shape());
  for (std::size_t i = 0; i < dmap.size(); ++i) dmap[i] = weight * dloc_logits[i];
  Tensor dloc_hidden;
  nn::conv2d_backward(s.location_hidden, p(kLocConv2W), dmap, loc2_spec(c), &dloc_hidden, grad(kLocConv2W),
                      grad(kLocConv2B));
  nn::relu_backward_inplace(s.location_hidden, dloc_hidden);
  Tensor dtrunk_loc;
  nn::conv2d_backward(s.trunk, p(kLocConv1W), dloc_hidden, loc1_spec(c), &dtrunk_loc, grad(kLocConv1W),
                      grad(kLocConv1B));
  for (std::size_t i = 0; i < dtrunk.size(); ++i) dtrunk[i] += dtrunk_loc[i];

  // Trunk, last block first.
  Tensor dx = std::move(dtrunk);
  for (int b = 2; b >= 0; --b) {
    const auto& st = s.blocks[static_cast<std::size_t>(b)];
    const auto specs = block_specs(c, b);
    const int w = block_w(b);
    nn::relu_backward_inplace(st.output, dx);
    Tensor dinput_short;
    nn::conv2d_backward(st.input, p(w + 6), dx, specs.shortcut, &dinput_short, grad(w + 6), grad(w + 7));
    Tensor dmiddle;
    nn::conv2d_backward(st.middle, p(w + 4), dx, specs.expand, &dmiddle, grad(w + 4), grad(w + 5));
    nn::relu_backward_inplace(st.middle, dmiddle);
    Tensor dreduce;
    nn::conv2d_backward(st.reduce, p(w + 2), dmiddle, specs.middle, &dreduce, grad(w + 2), grad(w + 3));
    nn::relu_backward_inplace(st.reduce, dreduce);
    Tensor dinput;
    nn::conv2d_backward(st.input, p(w), dreduce, specs.reduce, &dinput, grad(w), grad(w + 1));
    for (std::size_t i = 0; i < dinput.size(); ++i) dinput[i] += dinput_short[i];
    dx = std::move(dinput);
  }
  Tensor dstem = nn::maxpool_backward(dx, s.pool_argmax, s.stem.shape());
  nn::relu_backward_inplace(s.stem, dstem);
  nn::conv2d_backward(s.input, p(kStemW), dstem, stem_spec(c), nullptr, grad(kStemW), grad(kStemB));
  return out;
}

PlacementNet::Trunk PlacementNet::run_trunk(const Tensor& input) const {
  // Reuses forward(); the size-branch slice it computes is discarded.
  ForwardState s = forward(input);
  Trunk t;
  t.trunk = std::move(s.trunk);
  t.size_features = std::move(s.size_features);
  t.location_probabilities = nn::softmax(s.location_map.values());
  return t;
}

std::vector<double> PlacementNet::size_logits_at(const Tensor& size_features, const GridCell& cell) const {
  const Tensor roi = nn::roi_slice(size_features, cell);
  std::vector<int> argmax;
  const Tensor pooled = nn::global_maxpool_forward(roi, argmax);
  Tensor hidden = nn::linear_forward(pooled, p(kSizeFc1W), p(kSizeFc1B));
  nn::relu_inplace(hidden);
  const Tensor logits = nn::linear_forward(hidden, p(kSizeFc2W), p(kSizeFc2B));
  return {logits.values().begin(), logits.values().end()};
}

PlacementPrediction PlacementNet::assemble(const Trunk& t, const std::vector<GridCell>& locations,
                                           int k_size) const {
  const int grid = config_.grid_size;
  PlacementPrediction pred;
  pred.grid = grid;
  pred.location_probabilities = t.location_probabilities;
  for (const GridCell& cell : locations) {
    LocationHypothesis hyp;
    hyp.cell = cell;
    hyp.probability = t.location_probabilities[static_cast<std::size_t>(cell.index)];
    hyp.size_probabilities = nn::softmax(size_logits_at(t.size_features, cell));
    for (int idx : nn::top_k_indices(hyp.size_probabilities, k_size)) {
      hyp.sizes.push_back({GridCell::from_index(idx, grid), hyp.size_probabilities[static_cast<std::size_t>(idx)]});
      pred.boxes.push_back(decode_box(cell, hyp.sizes.back().cell, grid));
    }
    pred.hypotheses.push_back(std::move(hyp));
  }
  pred.location = pred.hypotheses.front().cell;
  pred.size_probabilities = pred.hypotheses.front().size_probabilities;
  pred.size = pred.hypotheses.front().sizes.front().cell;
  return pred;
}

PlacementPrediction PlacementNet::predict(const Tensor& input, int k_location, int k_size) const {
  if (k_location < 1 || k_size < 1) throw InvalidArgument("predict: k must be at least 1");
  const Trunk t = run_trunk(input);
  std::vector<GridCell> cells;
  for (int idx : nn::top_k_indices(t.location_probabilities, k_location)) {
    cells.push_back(GridCell::from_index(idx, config_.grid_size));
  }
  return assemble(t, cells, k_size);
}

std::vector<PlacementPrediction> PlacementNet::predict_multi(const Tensor& input, int n_people, int k_size,
                                                            std::span<const char> eligible) const {
  const int classes = config_.num_location_classes();
  if (n_people < 1 || n_people > classes) {
    throw InvalidArgument("predict_multi: n_people must be in [1, " + std::to_string(classes) + "]");
  }
  const Trunk t = run_trunk(input);
  std::vector<PlacementPrediction> out;
  for (const GridCell& cell : select_separated_cells(t.location_probabilities, config_.grid_size, n_people, eligible)) {
    out.push_back(assemble(t, {cell}, k_size));
  }
  return out;
}

std::vector<GridCell> select_separated_cells(std::span<const double> probabilities, int grid, int n,
                                            std::span<const char> eligible) {
  const int classes = grid * grid;
  if (static_cast<int>(probabilities.size()) != classes) {
    throw InvalidArgument("select_separated_cells: map size does not match grid");
  }
  if (!eligible.empty() && static_cast<int>(eligible.size()) != classes) {
    throw InvalidArgument("select_separated_cells: eligibility mask does not match grid");
  }
  auto ok = [&](int i) { return eligible.empty() || eligible[static_cast<std::size_t>(i)] != 0; };
  if (n < 1 || n > classes) throw InvalidArgument("select_separated_cells: n out of range");
  std::vector<char> chosen(static_cast<std::size_t>(classes), 0), suppressed(static_cast<std::size_t>(classes), 0);
  std::vector<GridCell> cells;
  auto best_where = [&](auto&& allowed) {
    int best = -1;
    for (int i = 0; i < classes; ++i) {
      if (!allowed(i)) continue;
      if (best < 0 || probabilities[static_cast<std::size_t>(i)] > probabilities[static_cast<std::size_t>(best)]) {
        best = i;
      }
    }
    return best;
  };
  while (static_cast<int>(cells.size()) < n) {
    int best = best_where([&](int i) { return ok(i) && !suppressed[static_cast<std::size_t>(i)]; });
    if (best < 0) best = best_where([&](int i) { return ok(i) && !chosen[static_cast<std::size_t>(i)]; });
    if (best < 0) best = best_where([&](int i) { return !chosen[static_cast<std::size_t>(i)]; });
    const GridCell cell = GridCell::from_index(best, grid);
    cells.push_back(cell);
    chosen[static_cast<std::size_t>(best)] = 1;
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int r = cell.row + dr, col = cell.col + dc;
        if (r >= 0 && r < grid && col >= 0 && col < grid) suppressed[static_cast<std::size_t>(r * grid + col)] = 1;
      }
    }
  }
  return cells;
}

}  // namespace compose
