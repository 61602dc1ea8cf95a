// Brute-force reference implementations. Each one recomputes a quantity from
// its definition without calling into the library code it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "sevgrade/augment.hpp"
#include "sevgrade/embedding.hpp"
#include "sevgrade/nn.hpp"

namespace oracle {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  return 1.0 - dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

inline std::vector<double> patch_vector(const sevgrade::PatchEmbeddingMap& m, int z, int k) {
  std::vector<double> v(static_cast<std::size_t>(m.dim));
  for (int d = 0; d < m.dim; ++d) v[static_cast<std::size_t>(d)] = m.values[(static_cast<std::size_t>(z) * m.cols + k) * m.dim + d];
  return v;
}

inline std::vector<double> centre(const std::vector<sevgrade::PatchEmbeddingMap>& maps) {
  std::vector<double> sum(static_cast<std::size_t>(maps.front().dim), 0.0);
  double n = 0;
  for (const auto& m : maps)
    for (int z = 0; z < m.rows; ++z)
      for (int k = 0; k < m.cols; ++k) {
        const auto v = patch_vector(m, z, k);
        for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += v[d];
        n += 1;
      }
  for (auto& x : sum) x /= n;
  return sum;
}

inline std::vector<double> centre(const std::vector<std::vector<double>>& embeddings) {
  std::vector<double> sum(embeddings.front().size(), 0.0);
  for (const auto& e : embeddings)
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += e[d];
  for (auto& x : sum) x /= static_cast<double>(embeddings.size());
  return sum;
}

inline double map_distance(const sevgrade::PatchEmbeddingMap& a, const sevgrade::PatchEmbeddingMap& b) {
  double s = 0.0;
  for (int z = 0; z < a.rows; ++z)
    for (int k = 0; k < a.cols; ++k) s += cosine_distance(patch_vector(a, z, k), patch_vector(b, z, k));
  return s / (a.rows * a.cols);
}

inline double cd_max(const std::vector<sevgrade::PatchEmbeddingMap>& maps) {
  double best = 0.0;
  for (const auto& a : maps)
    for (const auto& b : maps)
      if (&a != &b) best = std::max(best, map_distance(a, b));
  return best;
}

inline double cd_max(const std::vector<std::vector<double>>& embeddings) {
  double best = 0.0;
  for (const auto& a : embeddings)
    for (const auto& b : embeddings)
      if (&a != &b) best = std::max(best, cosine_distance(a, b));
  return best;
}

inline double score_ssl(const sevgrade::PatchEmbeddingMap& m, const std::vector<double>& c) {
  double s = 0.0;
  for (int z = 0; z < m.rows; ++z)
    for (int k = 0; k < m.cols; ++k) s += cosine_distance(patch_vector(m, z, k), c);
  return s / (m.rows * m.cols);
}

inline double score_dcrl(const std::vector<double>& e, const std::vector<double>& c_norm,
                         const std::vector<double>& c_anom) {
  return std::abs(cosine_distance(e, c_norm) - cosine_distance(e, c_anom));
}

inline double combined(double s_sev, double s_oa, double t) {
  if (s_sev > t) return 1.0 + s_sev;
  return std::min(1.0, std::max(0.0, s_oa));
}

// Count of positive/negative pairs where the positive wins, ties half.
inline double auroc(const std::vector<double>& s, const std::vector<bool>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1;
      if (s[i] > s[j]) wins += 1;
      else if (s[i] == s[j]) wins += 0.5;
    }
  return wins / pairs;
}

// Rank of v = 1 + #smaller + (#equal − 1)/2.
inline std::vector<double> mid_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) less += 1;
      if (w == v[i]) equal += 1;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(mid_ranks(a), mid_ranks(b));
}

// Mean of every sw×sw window of a C×H×W map, nested loops.
inline sevgrade::PatchEmbeddingMap window_means(const sevgrade::nn::Tensor& f, int sw) {
  sevgrade::PatchEmbeddingMap m(f.height - sw + 1, f.width - sw + 1, f.channels);
  for (int z = 0; z < m.rows; ++z)
    for (int k = 0; k < m.cols; ++k)
      for (int c = 0; c < f.channels; ++c) {
        double s = 0;
        for (int dy = 0; dy < sw; ++dy)
          for (int dx = 0; dx < sw; ++dx) s += f.at(c, z + dy, k + dx);
        m.values[(static_cast<std::size_t>(z) * m.cols + k) * m.dim + c] = s / (sw * sw);
      }
  return m;
}

// Forward-propagates a 2-D "touched" mask through the layer stack: an output
// cell is touched when any in-bounds input of its kernel window is.
inline std::vector<std::vector<bool>> touched_cells(const std::vector<sevgrade::nn::LayerGeometry>& layers, int side,
                                                    const sevgrade::Rect& rect) {
  std::vector<std::vector<bool>> mask(static_cast<std::size_t>(side), std::vector<bool>(static_cast<std::size_t>(side)));
  for (int r = rect.r0; r < rect.r1; ++r)
    for (int c = rect.c0; c < rect.c1; ++c) mask[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = true;
  for (const auto& g : layers) {
    const int in = static_cast<int>(mask.size());
    const int out = (in + 2 * g.padding - g.kernel) / g.stride + 1;
    std::vector<std::vector<bool>> next(static_cast<std::size_t>(out), std::vector<bool>(static_cast<std::size_t>(out)));
    for (int y = 0; y < out; ++y)
      for (int x = 0; x < out; ++x)
        for (int i = 0; i < g.kernel; ++i)
          for (int j = 0; j < g.kernel; ++j) {
            const int r = y * g.stride - g.padding + i, c = x * g.stride - g.padding + j;
            if (r >= 0 && r < in && c >= 0 && c < in && mask[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)])
              next[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = true;
          }
    mask = std::move(next);
  }
  return mask;
}

inline std::vector<std::uint8_t> patch_labels(const std::vector<sevgrade::nn::LayerGeometry>& layers, int side,
                                              const sevgrade::Rect& rect, int sw) {
  const auto cells = touched_cells(layers, side, rect);
  const int f = static_cast<int>(cells.size()), g = f - sw + 1;
  std::vector<std::uint8_t> out;
  for (int z = 0; z < g; ++z)
    for (int k = 0; k < g; ++k) {
      bool hit = false;
      for (int dy = 0; dy < sw; ++dy)
        for (int dx = 0; dx < sw; ++dx) hit = hit || cells[static_cast<std::size_t>(z + dy)][static_cast<std::size_t>(k + dx)];
      out.push_back(hit ? 1 : 0);
    }
  return out;
}

// Feature cells touched by each single input pixel, as flat row-major cell
// masks. A rectangle touches the union of its pixels' masks.
inline std::vector<std::vector<bool>> pixel_cell_masks(const std::vector<sevgrade::nn::LayerGeometry>& layers, int side) {
  std::vector<std::vector<bool>> out;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const auto cells = touched_cells(layers, side, sevgrade::Rect{r, c, r + 1, c + 1});
      std::vector<bool> flat;
      for (const auto& row : cells) flat.insert(flat.end(), row.begin(), row.end());
      out.push_back(std::move(flat));
    }
  return out;
}

inline std::vector<std::uint8_t> patch_labels_from_masks(const std::vector<std::vector<bool>>& masks, int side,
                                                         int feature, const sevgrade::Rect& rect, int sw) {
  std::vector<bool> cells(static_cast<std::size_t>(feature * feature), false);
  for (int r = rect.r0; r < rect.r1; ++r)
    for (int c = rect.c0; c < rect.c1; ++c) {
      const auto& m = masks[static_cast<std::size_t>(r * side + c)];
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) cells[i] = true;
    }
  const int g = feature - sw + 1;
  std::vector<std::uint8_t> out;
  for (int z = 0; z < g; ++z)
    for (int k = 0; k < g; ++k) {
      bool hit = false;
      for (int dy = 0; dy < sw; ++dy)
        for (int dx = 0; dx < sw; ++dx) hit = hit || cells[static_cast<std::size_t>((z + dy) * feature + k + dx)];
      out.push_back(hit ? 1 : 0);
    }
  return out;
}

// Mean binary cross entropy written out term by term.
inline double bce(const std::vector<double>& yhat, const std::vector<double>& y, double eps) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = std::min(1.0 - eps, std::max(eps, yhat[i]));
    s += -(y[i] * std::log(p) + (1 - y[i]) * std::log(1 - p));
  }
  return s / static_cast<double>(y.size());
}

inline std::vector<double> random_vector(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = n(rng);
  return v;
}

inline sevgrade::PatchEmbeddingMap random_map(std::mt19937_64& rng, int rows, int cols, int dim) {
  sevgrade::PatchEmbeddingMap m(rows, cols, dim);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& x : m.values) x = n(rng);
  return m;
}

}  // namespace oracle
