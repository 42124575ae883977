#pragma once

// The tile encoder: a small convolutional network (conv 3x3 pad 1, ReLU,
// 2x2 max pool per block, global average pool, affine head) plus a
// one-hidden-layer MLP variant for located feature-vector data. Forward and
// backward passes are hand-written; gradients are exact subgradients and
// are checked against finite differences in the test suite.
//
// Everything is templated on the scalar type: double is the reference path,
// float the optional fast path. Feature maps are stored HWC (channel index
// fastest) so the inner convolution loops run over contiguous memory.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "t2v/raster.hpp"
#include "t2v/rng.hpp"

namespace t2v {

enum class EncoderKind { conv, mlp };

struct ConvBlock {
  int out_channels = 0;
  bool residual = false;
};

struct EncoderConfig {
  EncoderKind kind = EncoderKind::conv;

  // conv fields
  int tile_size = 16;
  int bands = 4;
  std::vector<ConvBlock> blocks = {{16, false}, {32, false}, {64, false}};

  // mlp fields
  int in_dim = 0;
  int hidden_dim = 0;

  int embed_dim = 32;
  std::uint64_t init_seed = 0;

  // > 0 attaches an affine softmax head for supervised training
  int softmax_classes = 0;

  /// Normalization statistics captured at training time, persisted with the
  /// parameters so embeddings are reproducible later.
  std::optional<BandStats> input_stats;

  /// Spatial side lengths entering each block, plus the final pooled size.
  std::vector<int> spatial_sizes() const {
    std::vector<int> sizes{tile_size};
    for (std::size_t i = 0; i < blocks.size(); ++i)
      sizes.push_back(sizes.back() / 2);
    return sizes;
  }

  void validate() const {
    if (embed_dim < 1) throw UsageError("embed_dim must be >= 1");
    if (kind == EncoderKind::conv) {
      if (tile_size < 1 || bands < 1)
        throw UsageError("encoder input must be at least 1x1x1");
      if (blocks.empty()) throw UsageError("encoder needs at least one block");
      int channels = bands;
      int size = tile_size;
      for (const ConvBlock& block : blocks) {
        if (block.out_channels < 1)
          throw UsageError("block channel counts must be >= 1");
        if (block.residual && block.out_channels != channels)
          throw UsageError(
              "residual blocks require in_channels == out_channels");
        channels = block.out_channels;
        size /= 2;
        if (size < 1)
          throw UsageError("spatial size collapses below 1 after pooling");
      }
    } else {
      if (in_dim < 1 || hidden_dim < 1)
        throw UsageError("mlp dims must be >= 1");
    }
  }
};

/// A d-dimensional embedding, optionally tagged with the source tile origin.
struct Embedding {
  std::vector<double> values;
  std::optional<std::pair<int, int>> origin;
};

inline double squared_distance(std::span<const double> a,
                               std::span<const double> b) {
  if (a.size() != b.size())
    throw UsageError("embedding dimension mismatch: " +
                     std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  double sq = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  return sq;
}

inline double euclidean_distance(std::span<const double> a,
                                 std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

inline double l2_norm(std::span<const double> a) {
  double sq = 0;
  for (const double v : a) sq += v * v;
  return std::sqrt(sq);
}

// --------------------------------------------------------------------------
// Parameter layout
// --------------------------------------------------------------------------

struct TensorSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  int fan_in = 0;  // 0 marks bias tensors, which initialize to zero
};

struct ParamLayout {
  std::vector<TensorSlice> slices;
  std::size_t total = 0;

  const TensorSlice& find(const std::string& name) const {
    for (const TensorSlice& s : slices)
      if (s.name == name) return s;
    throw UsageError("no parameter tensor named " + name);
  }
};

/// Conv weights are [out][3][3][in] (tap-major, channel fastest); affine
/// weights are [out][in].
inline ParamLayout param_layout(const EncoderConfig& config) {
  config.validate();
  ParamLayout layout;
  auto add = [&](const std::string& name, std::size_t size, int fan_in) {
    layout.slices.push_back({name, layout.total, size, fan_in});
    layout.total += size;
  };
  int feature_dim;
  if (config.kind == EncoderKind::conv) {
    int channels = config.bands;
    for (std::size_t i = 0; i < config.blocks.size(); ++i) {
      const int out = config.blocks[i].out_channels;
      const std::string prefix = "block" + std::to_string(i);
      add(prefix + ".weight", static_cast<std::size_t>(out) * 9 * channels,
          9 * channels);
      add(prefix + ".bias", static_cast<std::size_t>(out), 0);
      channels = out;
    }
    feature_dim = channels;
  } else {
    add("hidden.weight",
        static_cast<std::size_t>(config.hidden_dim) * config.in_dim,
        config.in_dim);
    add("hidden.bias", static_cast<std::size_t>(config.hidden_dim), 0);
    feature_dim = config.hidden_dim;
  }
  add("head.weight", static_cast<std::size_t>(config.embed_dim) * feature_dim,
      feature_dim);
  add("head.bias", static_cast<std::size_t>(config.embed_dim), 0);
  if (config.softmax_classes > 0) {
    // zero-initialized head: the initial softmax is exactly uniform
    add("classifier.weight",
        static_cast<std::size_t>(config.softmax_classes) * config.embed_dim,
        0);
    add("classifier.bias", static_cast<std::size_t>(config.softmax_classes),
        0);
  }
  return layout;
}

template <typename T = double>
struct EncoderParams {
  std::vector<T> values;
};

template <typename T>
std::span<T> slice_span(EncoderParams<T>& params, const ParamLayout& layout,
                        const std::string& name) {
  const TensorSlice& s = layout.find(name);
  return {params.values.data() + s.offset, s.size};
}

template <typename T>
std::span<const T> slice_span(const EncoderParams<T>& params,
                              const ParamLayout& layout,
                              const std::string& name) {
  const TensorSlice& s = layout.find(name);
  return {params.values.data() + s.offset, s.size};
}

/// He initialization: weights ~ Normal(0, 2/fan_in), biases zero. Each
/// tensor draws from its own substream of init_seed, so the result does not
/// depend on fill order.
template <typename T = double>
EncoderParams<T> init_encoder(const EncoderConfig& config) {
  const ParamLayout layout = param_layout(config);
  EncoderParams<T> params;
  params.values.assign(layout.total, T(0));
  for (std::size_t k = 0; k < layout.slices.size(); ++k) {
    const TensorSlice& slice = layout.slices[k];
    if (slice.fan_in == 0) continue;
    Rng rng(config.init_seed, k);
    const double scale = std::sqrt(2.0 / slice.fan_in);
    for (std::size_t i = 0; i < slice.size; ++i)
      params.values[slice.offset + i] = static_cast<T>(scale * rng.gaussian());
  }
  return params;
}

/// One-hidden-layer variant for feature-vector data.
inline EncoderConfig mlp_config(int in_dim, int hidden_dim, int embed_dim,
                                std::uint64_t seed) {
  EncoderConfig config;
  config.kind = EncoderKind::mlp;
  config.in_dim = in_dim;
  config.hidden_dim = hidden_dim;
  config.embed_dim = embed_dim;
  config.init_seed = seed;
  config.blocks.clear();
  config.tile_size = 0;
  config.bands = 0;
  config.validate();
  return config;
}

template <typename T = double>
std::pair<EncoderParams<T>, EncoderConfig> init_mlp(int in_dim, int hidden_dim,
                                                    int embed_dim,
                                                    std::uint64_t seed) {
  const EncoderConfig config = mlp_config(in_dim, hidden_dim, embed_dim, seed);
  return {init_encoder<T>(config), config};
}

// --------------------------------------------------------------------------
// Forward / backward engine
// --------------------------------------------------------------------------

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& data, const EncoderConfig&,
                  const std::string& where) {
  for (const T v : data)
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError("non-finite value in " + where);
}

/// Reusable per-item workspace holding every intermediate the backward pass
/// needs. inputs[i] is the map entering block i; inputs[nblocks] is the
/// final pooled map entering the global average pool.
template <typename T>
struct Tape {
  std::vector<std::vector<T>> inputs;
  std::vector<std::vector<T>> preact;   // conv output before ReLU
  std::vector<std::vector<std::uint8_t>> pool_arg;  // winning corner, 0..3
  std::vector<T> gap;
  std::vector<T> hidden_pre, hidden_act;  // mlp path
  std::vector<T> features;                // input to the head
  std::vector<T> embed;
  std::vector<T> prepool_scratch;

  void resize(const EncoderConfig& config) {
    if (config.kind == EncoderKind::conv) {
      const auto sizes = config.spatial_sizes();
      const std::size_t nblocks = config.blocks.size();
      inputs.resize(nblocks + 1);
      preact.resize(nblocks);
      pool_arg.resize(nblocks);
      int channels = config.bands;
      for (std::size_t i = 0; i < nblocks; ++i) {
        const std::size_t in_plane =
            static_cast<std::size_t>(sizes[i]) * sizes[i];
        const int out = config.blocks[i].out_channels;
        inputs[i].resize(in_plane * channels);
        preact[i].resize(in_plane * out);
        pool_arg[i].resize(static_cast<std::size_t>(sizes[i + 1]) *
                           sizes[i + 1] * out);
        channels = out;
      }
      inputs[nblocks].resize(static_cast<std::size_t>(sizes[nblocks]) *
                             sizes[nblocks] * channels);
      gap.resize(channels);
      features.resize(channels);
    } else {
      hidden_pre.resize(config.hidden_dim);
      hidden_act.resize(config.hidden_dim);
      features.resize(config.hidden_dim);
    }
    embed.resize(config.embed_dim);
  }
};

/// 3x3 same-padding convolution over an HWC map.
template <typename T>
void conv3x3_forward(const T* in, int size, int c_in, const T* weight,
                     const T* bias, T* out, int c_out) {
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      T* out_px = out + (static_cast<std::size_t>(y) * size + x) * c_out;
      for (int co = 0; co < c_out; ++co) {
        const T* wrow = weight + static_cast<std::size_t>(co) * 9 * c_in;
        T acc = bias[co];
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          if (static_cast<unsigned>(yy) >= static_cast<unsigned>(size))
            continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xx = x + kx - 1;
            if (static_cast<unsigned>(xx) >= static_cast<unsigned>(size))
              continue;
            const T* in_px =
                in + (static_cast<std::size_t>(yy) * size + xx) * c_in;
            const T* w = wrow + (ky * 3 + kx) * c_in;
            T dot = 0;
            for (int ci = 0; ci < c_in; ++ci) dot += w[ci] * in_px[ci];
            acc += dot;
          }
        }
        out_px[co] = acc;
      }
    }
}

/// Backward of conv3x3_forward. Accumulates into d_in (may be null),
/// d_weight, and d_bias.
template <typename T>
void conv3x3_backward(const T* in, int size, int c_in, const T* weight,
                      const T* d_out, int c_out, T* d_in, T* d_weight,
                      T* d_bias) {
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const T* g_px = d_out + (static_cast<std::size_t>(y) * size + x) * c_out;
      for (int co = 0; co < c_out; ++co) {
        const T g = g_px[co];
        if (g == T(0)) continue;
        d_bias[co] += g;
        const T* wrow = weight + static_cast<std::size_t>(co) * 9 * c_in;
        T* dwrow = d_weight + static_cast<std::size_t>(co) * 9 * c_in;
        for (int ky = 0; ky < 3; ++ky) {
          const int yy = y + ky - 1;
          if (static_cast<unsigned>(yy) >= static_cast<unsigned>(size))
            continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int xx = x + kx - 1;
            if (static_cast<unsigned>(xx) >= static_cast<unsigned>(size))
              continue;
            const std::size_t px_off =
                (static_cast<std::size_t>(yy) * size + xx) * c_in;
            const std::size_t tap_off =
                static_cast<std::size_t>(ky * 3 + kx) * c_in;
            const T* in_px = in + px_off;
            T* dw = dwrow + tap_off;
            for (int ci = 0; ci < c_in; ++ci) dw[ci] += g * in_px[ci];
            if (d_in) {
              const T* w = wrow + tap_off;
              T* di = d_in + px_off;
              for (int ci = 0; ci < c_in; ++ci) di[ci] += g * w[ci];
            }
          }
        }
      }
    }
}

/// Forward pass. `input` is the standardized encoder input: an HWC tile map
/// for conv configs, a feature vector for mlp configs. Intermediates land in
/// the tape; returns the embedding stored there.
template <typename T>
const std::vector<T>& forward(const EncoderParams<T>& params,
                              const ParamLayout& layout,
                              const EncoderConfig& config,
                              std::span<const T> input, Tape<T>& tape) {
  tape.resize(config);
  const T* values = params.values.data();

  if (config.kind == EncoderKind::conv) {
    const auto sizes = config.spatial_sizes();
    const std::size_t nblocks = config.blocks.size();
    if (input.size() != tape.inputs[0].size())
      throw UsageError("encoder input size mismatch");
    std::copy(input.begin(), input.end(), tape.inputs[0].begin());

    int channels = config.bands;
    for (std::size_t i = 0; i < nblocks; ++i) {
      const int size = sizes[i];
      const int pooled = sizes[i + 1];
      const int out = config.blocks[i].out_channels;
      const TensorSlice& w = layout.slices[2 * i];
      const TensorSlice& b = layout.slices[2 * i + 1];
      conv3x3_forward(tape.inputs[i].data(), size, channels,
                      values + w.offset, values + b.offset,
                      tape.preact[i].data(), out);

      // ReLU; the residual input joins after the activation so a zeroed
      // conv leaves the feature map untouched
      std::vector<T>& prepool = tape.prepool_scratch;
      prepool.resize(tape.preact[i].size());
      const bool residual = config.blocks[i].residual;
      for (std::size_t j = 0; j < prepool.size(); ++j) {
        const T a = tape.preact[i][j] > T(0) ? tape.preact[i][j] : T(0);
        prepool[j] = residual ? a + tape.inputs[i][j] : a;
      }

      // 2x2 max pool, remembering the winning corner for backprop
      std::vector<T>& dst = tape.inputs[i + 1];
      for (int y = 0; y < pooled; ++y)
        for (int x = 0; x < pooled; ++x) {
          const std::size_t base00 =
              (static_cast<std::size_t>(2 * y) * size + 2 * x) * out;
          const std::size_t base01 = base00 + out;
          const std::size_t base10 =
              base00 + static_cast<std::size_t>(size) * out;
          const std::size_t base11 = base10 + out;
          const std::size_t dst_base =
              (static_cast<std::size_t>(y) * pooled + x) * out;
          for (int c = 0; c < out; ++c) {
            T best = prepool[base00 + c];
            std::uint8_t arg = 0;
            if (prepool[base01 + c] > best) { best = prepool[base01 + c]; arg = 1; }
            if (prepool[base10 + c] > best) { best = prepool[base10 + c]; arg = 2; }
            if (prepool[base11 + c] > best) { best = prepool[base11 + c]; arg = 3; }
            dst[dst_base + c] = best;
            tape.pool_arg[i][dst_base + c] = arg;
          }
        }
      check_finite(tape.inputs[i + 1], config, "block " + std::to_string(i));
      channels = out;
    }

    // global average pool
    const std::vector<T>& final_map = tape.inputs[nblocks];
    const std::size_t plane = final_map.size() / channels;
    for (int c = 0; c < channels; ++c) tape.gap[c] = T(0);
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < channels; ++c)
        tape.gap[c] += final_map[p * channels + c];
    for (int c = 0; c < channels; ++c)
      tape.gap[c] /= static_cast<T>(plane);
    tape.features.assign(tape.gap.begin(), tape.gap.end());
  } else {
    if (static_cast<int>(input.size()) != config.in_dim)
      throw UsageError("mlp input dimension mismatch");
    const auto w1 = slice_span(params, layout, "hidden.weight");
    const auto b1 = slice_span(params, layout, "hidden.bias");
    for (int h = 0; h < config.hidden_dim; ++h) {
      T acc = b1[h];
      const T* row = w1.data() + static_cast<std::size_t>(h) * config.in_dim;
      for (int j = 0; j < config.in_dim; ++j) acc += row[j] * input[j];
      tape.hidden_pre[h] = acc;
      tape.hidden_act[h] = acc > T(0) ? acc : T(0);
    }
    check_finite(tape.hidden_act, config, "hidden layer");
    tape.features.assign(tape.hidden_act.begin(), tape.hidden_act.end());
  }

  const auto wh = slice_span(params, layout, "head.weight");
  const auto bh = slice_span(params, layout, "head.bias");
  const int feat = static_cast<int>(tape.features.size());
  for (int d = 0; d < config.embed_dim; ++d) {
    T acc = bh[d];
    const T* row = wh.data() + static_cast<std::size_t>(d) * feat;
    for (int j = 0; j < feat; ++j) acc += row[j] * tape.features[j];
    tape.embed[d] = acc;
  }
  check_finite(tape.embed, config, "head");
  return tape.embed;
}

/// Backward pass matching `forward`. `input` is the same standardized input
/// passed to forward (needed for the first-layer weight gradients of the
/// mlp path). Gradients accumulate into `grads`.
template <typename T>
void backward(const EncoderParams<T>& params, const ParamLayout& layout,
              const EncoderConfig& config, const Tape<T>& tape,
              std::span<const T> input, std::span<const T> d_embed,
              EncoderParams<T>& grads) {
  const T* values = params.values.data();
  T* gvalues = grads.values.data();

  // head
  const TensorSlice& wh = layout.find("head.weight");
  const TensorSlice& bh = layout.find("head.bias");
  const int feat = static_cast<int>(tape.features.size());
  std::vector<T> d_features(feat, T(0));
  for (int d = 0; d < config.embed_dim; ++d) {
    const T g = d_embed[d];
    gvalues[bh.offset + d] += g;
    const T* row = values + wh.offset + static_cast<std::size_t>(d) * feat;
    T* grow = gvalues + wh.offset + static_cast<std::size_t>(d) * feat;
    for (int j = 0; j < feat; ++j) {
      grow[j] += g * tape.features[j];
      d_features[j] += g * row[j];
    }
  }

  if (config.kind == EncoderKind::mlp) {
    const TensorSlice& w1 = layout.find("hidden.weight");
    const TensorSlice& b1 = layout.find("hidden.bias");
    for (int h = 0; h < config.hidden_dim; ++h) {
      if (tape.hidden_pre[h] <= T(0)) continue;
      const T g = d_features[h];
      gvalues[b1.offset + h] += g;
      T* grow =
          gvalues + w1.offset + static_cast<std::size_t>(h) * config.in_dim;
      for (int j = 0; j < config.in_dim; ++j) grow[j] += g * input[j];
    }
    return;
  }

  const auto sizes = config.spatial_sizes();
  const std::size_t nblocks = config.blocks.size();
  const int last_out = config.blocks.back().out_channels;
  const std::size_t last_plane =
      static_cast<std::size_t>(sizes[nblocks]) * sizes[nblocks];

  // GAP backward
  std::vector<T> d_pooled(last_plane * last_out);
  for (std::size_t p = 0; p < last_plane; ++p)
    for (int c = 0; c < last_out; ++c)
      d_pooled[p * last_out + c] = d_features[c] / static_cast<T>(last_plane);

  std::vector<T> d_prepool, d_preact, d_input;
  for (std::size_t i = nblocks; i-- > 0;) {
    const int size = sizes[i];
    const int pooled = sizes[i + 1];
    const int out = config.blocks[i].out_channels;
    const int c_in =
        (i == 0) ? config.bands : config.blocks[i - 1].out_channels;

    // pool backward: route each gradient to the winning corner
    d_prepool.assign(tape.preact[i].size(), T(0));
    for (int y = 0; y < pooled; ++y)
      for (int x = 0; x < pooled; ++x)
        for (int c = 0; c < out; ++c) {
          const std::size_t idx =
              (static_cast<std::size_t>(y) * pooled + x) * out + c;
          const std::uint8_t arg = tape.pool_arg[i][idx];
          const std::size_t yy = static_cast<std::size_t>(2 * y + (arg >> 1));
          const std::size_t xx = static_cast<std::size_t>(2 * x + (arg & 1));
          d_prepool[(yy * size + xx) * out + c] += d_pooled[idx];
        }

    // ReLU backward; the residual branch splits off before the mask
    d_preact.assign(tape.preact[i].size(), T(0));
    for (std::size_t j = 0; j < d_preact.size(); ++j)
      if (tape.preact[i][j] > T(0)) d_preact[j] = d_prepool[j];

    const bool need_d_input = (i > 0);
    if (need_d_input) d_input.assign(tape.inputs[i].size(), T(0));
    const TensorSlice& w = layout.slices[2 * i];
    const TensorSlice& b = layout.slices[2 * i + 1];
    conv3x3_backward(tape.inputs[i].data(), size, c_in, values + w.offset,
                     d_preact.data(), out,
                     need_d_input ? d_input.data() : nullptr,
                     gvalues + w.offset, gvalues + b.offset);
    if (config.blocks[i].residual && need_d_input)
      for (std::size_t j = 0; j < d_input.size(); ++j)
        d_input[j] += d_prepool[j];

    if (need_d_input) std::swap(d_pooled, d_input);
  }
}

/// Standardizes a planar band-major tile into the HWC layout the conv
/// engine expects.
template <typename T>
void standardize_tile(const Tile& tile, const BandStats& stats,
                      std::vector<T>& out) {
  const int s = tile.size;
  const int bands = tile.bands;
  if (static_cast<int>(stats.mean.size()) != bands ||
      static_cast<int>(stats.stddev.size()) != bands)
    throw UsageError("normalization stats do not cover all bands");
  out.resize(static_cast<std::size_t>(s) * s * bands);
  for (int b = 0; b < bands; ++b) {
    const double mean = stats.mean[b];
    const double inv = 1.0 / stats.stddev[b];
    const double* src =
        tile.samples.data() + static_cast<std::size_t>(b) * s * s;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        out[(static_cast<std::size_t>(y) * s + x) * bands + b] =
            static_cast<T>((src[static_cast<std::size_t>(y) * s + x] - mean) *
                           inv);
  }
}

template <typename T>
void standardize_features(std::span<const double> features,
                          const BandStats& stats, std::vector<T>& out) {
  if (stats.mean.size() != features.size() ||
      stats.stddev.size() != features.size())
    throw UsageError("normalization stats do not cover all feature columns");
  out.resize(features.size());
  for (std::size_t j = 0; j < features.size(); ++j)
    out[j] = static_cast<T>((features[j] - stats.mean[j]) / stats.stddev[j]);
}

}  // namespace detail

// --------------------------------------------------------------------------
// Public encode operations
// --------------------------------------------------------------------------

template <typename T = double>
Embedding encode(const EncoderParams<T>& params, const EncoderConfig& config,
                 const Tile& tile, const BandStats& stats) {
  if (config.kind != EncoderKind::conv)
    throw UsageError("encode requires a conv encoder");
  if (tile.size != config.tile_size || tile.bands != config.bands)
    throw UsageError("tile shape " + std::to_string(tile.size) + "x" +
                     std::to_string(tile.size) + "x" +
                     std::to_string(tile.bands) +
                     " does not match encoder input " +
                     std::to_string(config.tile_size) + "x" +
                     std::to_string(config.tile_size) + "x" +
                     std::to_string(config.bands));
  const ParamLayout layout = param_layout(config);
  if (params.values.size() != layout.total)
    throw UsageError("parameter count does not match encoder config");
  detail::Tape<T> tape;
  std::vector<T> input;
  detail::standardize_tile(tile, stats, input);
  const auto& embed = detail::forward(params, layout, config,
                                      std::span<const T>(input), tape);
  Embedding out;
  out.values.assign(embed.begin(), embed.end());
  out.origin = std::make_pair(tile.origin_x, tile.origin_y);
  return out;
}

template <typename T = double>
std::vector<Embedding> encode_batch(const EncoderParams<T>& params,
                                    const EncoderConfig& config,
                                    const std::vector<Tile>& tiles,
                                    const BandStats& stats) {
  if (config.kind != EncoderKind::conv)
    throw UsageError("encode_batch requires a conv encoder");
  const ParamLayout layout = param_layout(config);
  if (params.values.size() != layout.total)
    throw UsageError("parameter count does not match encoder config");
  std::vector<Embedding> out;
  out.reserve(tiles.size());
  detail::Tape<T> tape;
  std::vector<T> input;
  for (const Tile& tile : tiles) {
    if (tile.size != config.tile_size || tile.bands != config.bands)
      throw UsageError("heterogeneous tile shapes in batch");
    detail::standardize_tile(tile, stats, input);
    const auto& embed = detail::forward(params, layout, config,
                                        std::span<const T>(input), tape);
    Embedding e;
    e.values.assign(embed.begin(), embed.end());
    e.origin = std::make_pair(tile.origin_x, tile.origin_y);
    out.push_back(std::move(e));
  }
  return out;
}

/// Embedding of a located feature vector through the MLP encoder. `stats`
/// carries the per-column standardization captured at training time.
template <typename T = double>
Embedding encode_point(const EncoderParams<T>& params,
                       const EncoderConfig& config,
                       std::span<const double> features,
                       const BandStats& stats) {
  if (config.kind != EncoderKind::mlp)
    throw UsageError("encode_point requires an mlp encoder");
  if (static_cast<int>(features.size()) != config.in_dim)
    throw UsageError("feature dimension " + std::to_string(features.size()) +
                     " does not match encoder input " +
                     std::to_string(config.in_dim));
  const ParamLayout layout = param_layout(config);
  if (params.values.size() != layout.total)
    throw UsageError("parameter count does not match encoder config");
  detail::Tape<T> tape;
  std::vector<T> input;
  detail::standardize_features(features, stats, input);
  const auto& embed = detail::forward(params, layout, config,
                                      std::span<const T>(input), tape);
  Embedding out;
  out.values.assign(embed.begin(), embed.end());
  return out;
}

}  // namespace t2v
