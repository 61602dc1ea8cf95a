#include "sevgrade/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <random>

#include "sevgrade/error.hpp"

namespace sevgrade::nn {
namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

/// Unfolds input patches into a (C·k·k) × (Ho·Wo) matrix.
void im2col(const Tensor& x, int k, int s, int p, int ho, int wo, std::vector<float>& cols) {
  const std::size_t hw = static_cast<std::size_t>(ho) * wo;
  cols.assign(static_cast<std::size_t>(x.channels) * k * k * hw, 0.0f);
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= x.height) continue;
          const float* src = x.data.data() + (static_cast<std::size_t>(c) * x.height + iy) * x.width;
          float* dst = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < x.width) dst[ox] = src[ix];
          }
        }
      }
    }
  }
}

void col2im(const std::vector<float>& cols, int k, int s, int p, int ho, int wo, Tensor& dx) {
  const std::size_t hw = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < dx.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * hw;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= dx.height) continue;
          float* dst = dx.data.data() + (static_cast<std::size_t>(c) * dx.height + iy) * dx.width;
          const float* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < dx.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Conv2d& conv, const Tensor& x) {
  if (x.channels != conv.in_channels) {
    throw Error(ErrorKind::geometry, "conv expects " + std::to_string(conv.in_channels) +
                                         " input channels, got " + std::to_string(x.channels));
  }
  const int ho = conv_out(x.height, conv.kernel, conv.stride, conv.padding);
  const int wo = conv_out(x.width, conv.kernel, conv.stride, conv.padding);
  if (ho <= 0 || wo <= 0) throw Error(ErrorKind::geometry, "input too small for conv layer");
  std::vector<float> cols;
  im2col(x, conv.kernel, conv.stride, conv.padding, ho, wo, cols);
  const int kdim = conv.in_channels * conv.kernel * conv.kernel;
  const int hw = ho * wo;
  Tensor y(conv.out_channels, ho, wo);
  ConstMatMap w(conv.weight.data(), conv.out_channels, kdim);
  ConstMatMap c(cols.data(), kdim, hw);
  MatMap out(y.data.data(), conv.out_channels, hw);
  out.noalias() = w * c;
  for (int o = 0; o < conv.out_channels; ++o) out.row(o).array() += conv.bias[static_cast<std::size_t>(o)];
  return y;
}

Tensor pool_forward(const MaxPool2d& pool, const Tensor& x, std::vector<std::int32_t>* argmax) {
  const int ho = conv_out(x.height, pool.kernel, pool.stride, pool.padding);
  const int wo = conv_out(x.width, pool.kernel, pool.stride, pool.padding);
  if (ho <= 0 || wo <= 0) throw Error(ErrorKind::geometry, "input too small for max-pool layer");
  Tensor y(x.channels, ho, wo);
  if (argmax) argmax->assign(y.data.size(), -1);
  for (int c = 0; c < x.channels; ++c) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_idx = -1;
        for (int ky = 0; ky < pool.kernel; ++ky) {
          const int iy = oy * pool.stride - pool.padding + ky;
          if (iy < 0 || iy >= x.height) continue;
          for (int kx = 0; kx < pool.kernel; ++kx) {
            const int ix = ox * pool.stride - pool.padding + kx;
            if (ix < 0 || ix >= x.width) continue;
            const float v = x.at(c, iy, ix);
            if (v > best || best_idx < 0) {
              best = v;
              best_idx = static_cast<std::int32_t>((static_cast<std::size_t>(c) * x.height + iy) * x.width + ix);
            }
          }
        }
        y.at(c, oy, ox) = best;
        if (argmax) (*argmax)[(static_cast<std::size_t>(c) * ho + oy) * wo + ox] = best_idx;
      }
    }
  }
  return y;
}

}  // namespace

LayerGeometry geometry_of(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Conv2d& c) { return LayerGeometry{c.kernel, c.stride, c.padding}; },
                        [](const ReLU&) { return LayerGeometry{1, 1, 0}; },
                        [](const MaxPool2d& p) { return LayerGeometry{p.kernel, p.stride, p.padding}; },
                    },
                    layer);
}

int output_side(const Layer& layer, int input_side) {
  const auto g = geometry_of(layer);
  return conv_out(input_side, g.kernel, g.stride, g.padding);
}

void Network::initialise(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& layer : layers_) {
    if (auto* conv = std::get_if<Conv2d>(&layer)) {
      const int fan_in = conv->in_channels * conv->kernel * conv->kernel;
      std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
      conv->weight.resize(static_cast<std::size_t>(conv->out_channels) * fan_in);
      for (auto& w : conv->weight) w = dist(rng);
      conv->bias.assign(static_cast<std::size_t>(conv->out_channels), 0.0f);
    }
  }
}

Tensor Network::forward(const Tensor& input) const {
  Tensor x = input;
  for (const auto& layer : layers_) {
    x = std::visit(overloaded{
                       [&](const Conv2d& c) { return conv_forward(c, x); },
                       [&](const ReLU&) {
                         Tensor y = x;
                         for (auto& v : y.data) v = std::max(v, 0.0f);
                         return y;
                       },
                       [&](const MaxPool2d& p) { return pool_forward(p, x, nullptr); },
                   },
                   layer);
  }
  return x;
}

Tensor Network::forward(const Tensor& input, Trace& trace) const {
  trace.inputs.clear();
  trace.argmax.assign(layers_.size(), {});
  Tensor x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    trace.inputs.push_back(x);
    const auto& layer = layers_[i];
    x = std::visit(overloaded{
                       [&](const Conv2d& c) { return conv_forward(c, x); },
                       [&](const ReLU&) {
                         Tensor y = x;
                         for (auto& v : y.data) v = std::max(v, 0.0f);
                         return y;
                       },
                       [&](const MaxPool2d& p) { return pool_forward(p, x, &trace.argmax[i]); },
                   },
                   layer);
  }
  return x;
}

void Network::backward(const Trace& trace, const Tensor& grad_output, Gradients& grads) const {
  if (trace.inputs.size() != layers_.size()) throw Error(ErrorKind::geometry, "trace does not match network");
  Tensor grad = grad_output;
  // parameter slot of each conv layer
  std::vector<std::size_t> slot(layers_.size(), 0);
  std::size_t next = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<Conv2d>(layers_[i])) {
      slot[i] = next;
      next += 2;
    }
  }
  for (std::size_t ii = layers_.size(); ii-- > 0;) {
    const Tensor& x = trace.inputs[ii];
    const bool need_input_grad = ii > 0;
    if (const auto* conv = std::get_if<Conv2d>(&layers_[ii])) {
      const int ho = grad.height, wo = grad.width;
      const int kdim = conv->in_channels * conv->kernel * conv->kernel;
      const int hw = ho * wo;
      std::vector<float> cols;
      im2col(x, conv->kernel, conv->stride, conv->padding, ho, wo, cols);
      ConstMatMap dy(grad.data.data(), conv->out_channels, hw);
      ConstMatMap c(cols.data(), kdim, hw);
      MatMap dw(grads[slot[ii]].data(), conv->out_channels, kdim);
      dw.noalias() += dy * c.transpose();
      auto& db = grads[slot[ii] + 1];
      for (int o = 0; o < conv->out_channels; ++o) db[static_cast<std::size_t>(o)] += dy.row(o).sum();
      if (need_input_grad) {
        ConstMatMap w(conv->weight.data(), conv->out_channels, kdim);
        std::vector<float> dcols(static_cast<std::size_t>(kdim) * hw);
        MatMap dc(dcols.data(), kdim, hw);
        dc.noalias() = w.transpose() * dy;
        Tensor dx(x.channels, x.height, x.width);
        col2im(dcols, conv->kernel, conv->stride, conv->padding, ho, wo, dx);
        grad = std::move(dx);
      }
    } else if (std::holds_alternative<ReLU>(layers_[ii])) {
      for (std::size_t k = 0; k < grad.data.size(); ++k) {
        if (x.data[k] <= 0.0f) grad.data[k] = 0.0f;
      }
    } else {
      if (!need_input_grad) break;
      Tensor dx(x.channels, x.height, x.width);
      const auto& arg = trace.argmax[ii];
      for (std::size_t k = 0; k < grad.data.size(); ++k) {
        if (arg[k] >= 0) dx.data[static_cast<std::size_t>(arg[k])] += grad.data[k];
      }
      grad = std::move(dx);
    }
  }
}

Gradients Network::zero_gradients() const {
  Gradients g;
  for (const auto& p : parameters()) g.emplace_back(p.size(), 0.0f);
  return g;
}

std::vector<std::span<float>> Network::parameters() {
  std::vector<std::span<float>> out;
  for (auto& layer : layers_) {
    if (auto* c = std::get_if<Conv2d>(&layer)) {
      out.emplace_back(c->weight);
      out.emplace_back(c->bias);
    }
  }
  return out;
}

std::vector<std::span<const float>> Network::parameters() const {
  std::vector<std::span<const float>> out;
  for (const auto& layer : layers_) {
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
      out.emplace_back(c->weight);
      out.emplace_back(c->bias);
    }
  }
  return out;
}

std::vector<std::string> Network::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<Conv2d>(layers_[i])) {
      names.push_back("features." + std::to_string(i) + ".weight");
      names.push_back("features." + std::to_string(i) + ".bias");
    }
  }
  return names;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

int Network::out_channels() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if (const auto* c = std::get_if<Conv2d>(&*it)) return c->out_channels;
  }
  return 3;
}

namespace {

static_assert(std::endian::native == std::endian::little, "weight blobs are little-endian");

constexpr char kMagic[4] = {'S', 'G', 'W', '1'};

void write_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw Error(ErrorKind::io, "truncated weight blob");
  return v;
}

std::vector<std::uint32_t> shape_of(const Layer& layer, bool weight) {
  const auto& c = std::get<Conv2d>(layer);
  if (!weight) return {static_cast<std::uint32_t>(c.out_channels)};
  return {static_cast<std::uint32_t>(c.out_channels), static_cast<std::uint32_t>(c.in_channels),
          static_cast<std::uint32_t>(c.kernel), static_cast<std::uint32_t>(c.kernel)};
}

}  // namespace

void save_weights(const std::filesystem::path& path, const Network& net) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
    out.write(kMagic, 4);
    const auto names = net.parameter_names();
    const auto params = net.parameters();
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    std::size_t k = 0;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      if (!std::holds_alternative<Conv2d>(net.layers()[i])) continue;
      for (bool weight : {true, false}) {
        const auto& name = names[k];
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto shape = shape_of(net.layers()[i], weight);
        write_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) write_u32(out, d);
        out.write(reinterpret_cast<const char*>(params[k].data()),
                  static_cast<std::streamsize>(params[k].size() * sizeof(float)));
        ++k;
      }
    }
    if (!out) throw Error(ErrorKind::io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void load_weights(const std::filesystem::path& path, Network& net) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open weights " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorKind::io, path.string() + ": not a weight blob");
  const auto count = read_u32(in);
  std::map<std::string, std::pair<std::vector<std::uint32_t>, std::vector<float>>> tensors;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto len = read_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto ndim = read_u32(in);
    std::vector<std::uint32_t> shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = read_u32(in);
      numel *= d;
    }
    std::vector<float> data(numel);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(numel * sizeof(float)));
    if (!in) throw Error(ErrorKind::io, "truncated weight blob " + path.string());
    tensors.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
  }
  const auto names = net.parameter_names();
  auto params = net.parameters();
  std::size_t k = 0;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!std::holds_alternative<Conv2d>(net.layers()[i])) continue;
    for (bool weight : {true, false}) {
      auto it = tensors.find(names[k]);
      if (it == tensors.end()) throw Error(ErrorKind::geometry, "weights lack tensor " + names[k]);
      if (it->second.first != shape_of(net.layers()[i], weight)) {
        throw Error(ErrorKind::geometry, "shape mismatch for tensor " + names[k]);
      }
      std::copy(it->second.second.begin(), it->second.second.end(), params[k].begin());
      ++k;
    }
  }
}

Adam::Adam(const Network& net, AdamConfig config)
    : config_(config), m_(net.zero_gradients()), v_(net.zero_gradients()) {}

void Adam::step(Network& net, const Gradients& grads) {
  ++t_;
  auto params = net.parameters();
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(config_.beta1);
  const auto b2 = static_cast<float>(config_.beta2);
  const auto wd = static_cast<float>(config_.weight_decay);
  const auto step = static_cast<float>(config_.lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(config_.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    const auto& g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gi = g[i] + wd * p[i];
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      p[i] -= step * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

}  // namespace sevgrade::nn
