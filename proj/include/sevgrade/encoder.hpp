#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "sevgrade/embedding.hpp"
#include "sevgrade/geometry.hpp"
#include "sevgrade/image.hpp"
#include "sevgrade/nn.hpp"

namespace sevgrade {

struct EncoderConfig {
  /// "tiny", "alexnet" or "vgg16"; the latter two mirror the torchvision
  /// `features` stacks so exported ImageNet parameters load by name.
  std::string backbone_id = "tiny";
  int truncate_at_layer = 5;
  bool patch_mode = true;
  int window = 3;
  int input_side = 64;
  /// Optional pretrained parameter blob; empty means seeded Kaiming init.
  std::filesystem::path weights;

  bool operator==(const EncoderConfig&) const = default;
};

/// Full layer stack of a named backbone.
std::vector<nn::Layer> backbone_layers(const std::string& backbone_id);

/// Validates the config against the backbone and input size.
void validate(const EncoderConfig& config);

/// Feature-map geometry produced by the truncated backbone.
FeatureGeometry feature_geometry(const EncoderConfig& config);

/// Truncated convolutional feature extractor. Grayscale inputs are
/// replicated to three channels and normalised with ImageNet statistics.
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig config, nn::Network network);

  /// Builds the truncated backbone; loads config.weights when set, otherwise
  /// initialises from the seed.
  static Encoder create(const EncoderConfig& config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  const FeatureGeometry& geometry() const { return geometry_; }
  nn::Network& network() { return network_; }
  const nn::Network& network() const { return network_; }

  nn::Tensor preprocess(const Image& image) const;
  nn::Tensor features(const Image& image) const;

  /// Average pool of every sw×sw window (stride 1) of the feature map.
  PatchEmbeddingMap encode_patches(const Image& image) const;
  /// Global average pool of the whole feature map.
  Embedding encode_global(const Image& image) const;
  /// Dispatches on config().patch_mode.
  std::variant<PatchEmbeddingMap, Embedding> encode(const Image& image) const;

  /// Training-time forward pass keeping the activations needed by backward.
  struct Pass {
    nn::Trace trace;
    nn::Tensor feature_map;
  };
  PatchEmbeddingMap forward_patches(const Image& image, Pass& pass) const;
  Embedding forward_global(const Image& image, Pass& pass) const;

  /// Back-propagates gradients w.r.t. patch (or global) embeddings into grads.
  void backward_patches(const Pass& pass, const PatchEmbeddingMap& grad, nn::Gradients& grads) const;
  void backward_global(const Pass& pass, const Embedding& grad, nn::Gradients& grads) const;

 private:
  EncoderConfig config_;
  nn::Network network_;
  FeatureGeometry geometry_;
};

/// Sliding-window average pooling of a C×H×W map into a patch embedding map.
PatchEmbeddingMap pool_patches(const nn::Tensor& feature_map, int window);
Embedding pool_global(const nn::Tensor& feature_map);

}  // namespace sevgrade
