#include "sevgrade/encoder.hpp"

#include <array>

#include "sevgrade/error.hpp"

namespace sevgrade {
namespace {

nn::Layer conv(int in, int out, int k, int s = 1, int p = 0) {
  nn::Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = k;
  c.stride = s;
  c.padding = p;
  return c;
}

nn::Layer relu() { return nn::ReLU{}; }
nn::Layer maxpool(int k, int s) { return nn::MaxPool2d{k, s, 0}; }

constexpr std::array<float, 3> kImageNetMean{0.485f, 0.456f, 0.406f};
constexpr std::array<float, 3> kImageNetStd{0.229f, 0.224f, 0.225f};

}  // namespace

std::vector<nn::Layer> backbone_layers(const std::string& id) {
  if (id == "tiny") {
    return {conv(3, 16, 3, 1, 1), relu(), maxpool(2, 2), conv(16, 32, 3, 1, 1), relu(),
            maxpool(2, 2), conv(32, 32, 3, 1, 1), relu()};
  }
  if (id == "alexnet") {
    return {conv(3, 64, 11, 4, 2), relu(), maxpool(3, 2), conv(64, 192, 5, 1, 2), relu(),
            maxpool(3, 2), conv(192, 384, 3, 1, 1), relu(), conv(384, 256, 3, 1, 1), relu(),
            conv(256, 256, 3, 1, 1), relu(), maxpool(3, 2)};
  }
  if (id == "vgg16") {
    std::vector<nn::Layer> layers;
    int in = 3;
    for (int width : {64, 64, -1, 128, 128, -1, 256, 256, 256, -1, 512, 512, 512, -1, 512, 512, 512, -1}) {
      if (width < 0) {
        layers.push_back(maxpool(2, 2));
      } else {
        layers.push_back(conv(in, width, 3, 1, 1));
        layers.push_back(relu());
        in = width;
      }
    }
    return layers;
  }
  throw Error(ErrorKind::config, "unknown backbone '" + id + "'");
}

namespace {

std::vector<nn::Layer> truncated(const EncoderConfig& config) {
  auto layers = backbone_layers(config.backbone_id);
  if (config.truncate_at_layer < 1 || config.truncate_at_layer > static_cast<int>(layers.size())) {
    throw Error(ErrorKind::config, "truncate_at_layer " + std::to_string(config.truncate_at_layer) +
                                       " outside 1.." + std::to_string(layers.size()) + " for " +
                                       config.backbone_id);
  }
  layers.resize(static_cast<std::size_t>(config.truncate_at_layer));
  return layers;
}

}  // namespace

FeatureGeometry feature_geometry(const EncoderConfig& config) {
  const auto layers = truncated(config);
  std::vector<nn::LayerGeometry> geo;
  for (const auto& l : layers) geo.push_back(nn::geometry_of(l));
  FeatureGeometry g;
  g.receptive_field = ReceptiveField(geo, config.input_side);
  g.feature_h = g.feature_w = g.receptive_field.feature_side();
  g.window = config.patch_mode ? config.window : 1;
  return g;
}

void validate(const EncoderConfig& config) {
  if (config.input_side <= 0) throw Error(ErrorKind::config, "input_side must be positive");
  if (config.patch_mode && config.window < 1) throw Error(ErrorKind::config, "window must be >= 1");
  const auto g = feature_geometry(config);
  if (config.patch_mode && g.grid_rows() < 1) {
    throw Error(ErrorKind::config, "window " + std::to_string(config.window) +
                                       " exceeds feature map side " + std::to_string(g.feature_h));
  }
}

Encoder::Encoder(EncoderConfig config, nn::Network network)
    : config_(std::move(config)), network_(std::move(network)) {
  validate(config_);
  geometry_ = feature_geometry(config_);
  const auto expected = truncated(config_);
  const auto& actual = network_.layers();
  bool same = expected.size() == actual.size();
  for (std::size_t i = 0; same && i < expected.size(); ++i) {
    same = expected[i].index() == actual[i].index();
    if (same && std::holds_alternative<nn::Conv2d>(expected[i])) {
      const auto& e = std::get<nn::Conv2d>(expected[i]);
      const auto& a = std::get<nn::Conv2d>(actual[i]);
      same = e.in_channels == a.in_channels && e.out_channels == a.out_channels && e.kernel == a.kernel &&
             e.stride == a.stride && e.padding == a.padding &&
             a.weight.size() == static_cast<std::size_t>(a.out_channels) * a.in_channels * a.kernel * a.kernel &&
             a.bias.size() == static_cast<std::size_t>(a.out_channels);
    }
  }
  if (!same) {
    throw Error(ErrorKind::geometry, "network parameters do not match encoder config " +
                                         config_.backbone_id + "[:" + std::to_string(config_.truncate_at_layer) + "]");
  }
}

Encoder Encoder::create(const EncoderConfig& config, std::uint64_t seed) {
  validate(config);
  nn::Network net(truncated(config));
  net.initialise(seed);
  if (!config.weights.empty()) nn::load_weights(config.weights, net);
  return Encoder(config, std::move(net));
}

nn::Tensor Encoder::preprocess(const Image& image) const {
  if (image.height != config_.input_side || image.width != config_.input_side) {
    throw Error(ErrorKind::geometry, "image is " + std::to_string(image.height) + "x" +
                                         std::to_string(image.width) + ", encoder expects side " +
                                         std::to_string(config_.input_side));
  }
  nn::Tensor t(3, image.height, image.width);
  const std::size_t plane = t.plane();
  for (int c = 0; c < 3; ++c) {
    float* dst = t.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (image.pixels[i] - kImageNetMean[c]) / kImageNetStd[c];
  }
  return t;
}

nn::Tensor Encoder::features(const Image& image) const { return network_.forward(preprocess(image)); }

PatchEmbeddingMap pool_patches(const nn::Tensor& f, int window) {
  const int rows = f.height - window + 1;
  const int cols = f.width - window + 1;
  if (window < 1 || rows < 1 || cols < 1) throw Error(ErrorKind::geometry, "window larger than feature map");
  PatchEmbeddingMap map(rows, cols, f.channels);
  const double inv = 1.0 / (static_cast<double>(window) * window);
  // integral image per channel
  std::vector<double> integral(static_cast<std::size_t>(f.height + 1) * (f.width + 1));
  const int iw = f.width + 1;
  for (int c = 0; c < f.channels; ++c) {
    std::fill(integral.begin(), integral.end(), 0.0);
    for (int y = 0; y < f.height; ++y) {
      double row = 0.0;
      for (int x = 0; x < f.width; ++x) {
        row += f.at(c, y, x);
        integral[static_cast<std::size_t>(y + 1) * iw + x + 1] = integral[static_cast<std::size_t>(y) * iw + x + 1] + row;
      }
    }
    auto I = [&](int y, int x) { return integral[static_cast<std::size_t>(y) * iw + x]; };
    for (int z = 0; z < rows; ++z) {
      for (int k = 0; k < cols; ++k) {
        const double s = I(z + window, k + window) - I(z, k + window) - I(z + window, k) + I(z, k);
        map.patch(z, k)[static_cast<std::size_t>(c)] = s * inv;
      }
    }
  }
  return map;
}

Embedding pool_global(const nn::Tensor& f) {
  Embedding e(static_cast<std::size_t>(f.channels), 0.0);
  const std::size_t plane = f.plane();
  for (int c = 0; c < f.channels; ++c) {
    double s = 0.0;
    const float* p = f.data.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    e[static_cast<std::size_t>(c)] = s / static_cast<double>(plane);
  }
  return e;
}

PatchEmbeddingMap Encoder::encode_patches(const Image& image) const {
  return pool_patches(features(image), geometry_.window);
}

Embedding Encoder::encode_global(const Image& image) const { return pool_global(features(image)); }

std::variant<PatchEmbeddingMap, Embedding> Encoder::encode(const Image& image) const {
  if (config_.patch_mode) return encode_patches(image);
  return encode_global(image);
}

PatchEmbeddingMap Encoder::forward_patches(const Image& image, Pass& pass) const {
  pass.feature_map = network_.forward(preprocess(image), pass.trace);
  return pool_patches(pass.feature_map, geometry_.window);
}

Embedding Encoder::forward_global(const Image& image, Pass& pass) const {
  pass.feature_map = network_.forward(preprocess(image), pass.trace);
  return pool_global(pass.feature_map);
}

void Encoder::backward_patches(const Pass& pass, const PatchEmbeddingMap& grad, nn::Gradients& grads) const {
  const auto& f = pass.feature_map;
  const int w = geometry_.window;
  nn::Tensor df(f.channels, f.height, f.width);
  const double inv = 1.0 / (static_cast<double>(w) * w);
  for (int z = 0; z < grad.rows; ++z) {
    for (int k = 0; k < grad.cols; ++k) {
      const auto g = grad.patch(z, k);
      for (int c = 0; c < f.channels; ++c) {
        const auto v = static_cast<float>(g[static_cast<std::size_t>(c)] * inv);
        if (v == 0.0f) continue;
        for (int a = 0; a < w; ++a) {
          float* row = &df.at(c, z + a, k);
          for (int b = 0; b < w; ++b) row[b] += v;
        }
      }
    }
  }
  network_.backward(pass.trace, df, grads);
}

void Encoder::backward_global(const Pass& pass, const Embedding& grad, nn::Gradients& grads) const {
  const auto& f = pass.feature_map;
  nn::Tensor df(f.channels, f.height, f.width);
  const std::size_t plane = f.plane();
  for (int c = 0; c < f.channels; ++c) {
    const auto v = static_cast<float>(grad[static_cast<std::size_t>(c)] / static_cast<double>(plane));
    std::fill(df.data.begin() + static_cast<std::ptrdiff_t>(c * plane),
              df.data.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane), v);
  }
  network_.backward(pass.trace, df, grads);
}

}  // namespace sevgrade
