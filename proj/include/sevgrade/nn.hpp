#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace sevgrade::nn {

/// Dense C×H×W activation for a single image.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
};

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  std::vector<float> weight;  // out × (in·k·k), row-major
  std::vector<float> bias;    // out
};

struct ReLU {};

struct MaxPool2d {
  int kernel = 2;
  int stride = 2;
  int padding = 0;
};

using Layer = std::variant<Conv2d, ReLU, MaxPool2d>;

/// Spatial footprint of one layer; ReLU is the identity window.
struct LayerGeometry {
  int kernel = 1;
  int stride = 1;
  int padding = 0;
};

LayerGeometry geometry_of(const Layer& layer);

/// Output side for a square input of the given side.
int output_side(const Layer& layer, int input_side);

/// Per-layer activations kept by a training forward pass.
struct Trace {
  std::vector<Tensor> inputs;
  std::vector<std::vector<std::int32_t>> argmax;  // max-pool winners
};

/// Gradient buffers aligned with Network::parameters().
using Gradients = std::vector<std::vector<float>>;

/// A plain feed-forward stack of conv / relu / max-pool layers.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  const std::vector<Layer>& layers() const { return layers_; }

  /// Kaiming-normal conv weights (fan-in, gain √2) with zero bias.
  void initialise(std::uint64_t seed);

  Tensor forward(const Tensor& input) const;
  Tensor forward(const Tensor& input, Trace& trace) const;

  /// Accumulates parameter gradients for d(loss)/d(output) into grads.
  void backward(const Trace& trace, const Tensor& grad_output, Gradients& grads) const;

  Gradients zero_gradients() const;

  /// Flat views over every trainable tensor: weight then bias per conv layer.
  std::vector<std::span<float>> parameters();
  std::vector<std::span<const float>> parameters() const;
  std::vector<std::string> parameter_names() const;

  std::size_t parameter_count() const;
  int out_channels() const;

 private:
  std::vector<Layer> layers_;
};

/// Binary blob: magic "SGW1", tensor count, then per tensor its name, shape
/// and little-endian float32 data. Names follow `features.<index>.weight`.
void save_weights(const std::filesystem::path& path, const Network& net);

/// Loads every parameter of net by name. Missing tensors or shape mismatches
/// throw a geometry Error.
void load_weights(const std::filesystem::path& path, Network& net);

struct AdamConfig {
  double lr = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2 penalty added to the gradient.
  double weight_decay = 0.1;
};

class Adam {
 public:
  Adam(const Network& net, AdamConfig config);

  /// Applies one update with the given (already averaged) gradients.
  void step(Network& net, const Gradients& grads);

  long steps() const { return t_; }

 private:
  AdamConfig config_;
  Gradients m_;
  Gradients v_;
  long t_ = 0;
};

}  // namespace sevgrade::nn
