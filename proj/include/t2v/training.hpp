#pragma once

// Triplet training: the margined hinge on embedding distances, the full
// objective with unsquared l2 penalties on all three embeddings, in-batch
// triplet recombination, bias-corrected Adam, and the epoch loop.
//
// Gradient reductions always follow the same fixed-size chunk tree, so a
// training run is bitwise reproducible for any worker count.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "t2v/encoder.hpp"
#include "t2v/sampler.hpp"

namespace t2v {

enum class Augmentation { off, shuffle, full };

inline std::string to_string(Augmentation mode) {
  switch (mode) {
    case Augmentation::off: return "off";
    case Augmentation::shuffle: return "shuffle";
    case Augmentation::full: return "full";
  }
  return "?";
}

inline Augmentation augmentation_from_string(const std::string& text) {
  if (text == "off") return Augmentation::off;
  if (text == "shuffle") return Augmentation::shuffle;
  if (text == "full") return Augmentation::full;
  throw UsageError("unknown augmentation mode \"" + text + "\"");
}

struct TrainConfig {
  double margin = 50.0;
  double lambda = 0.01;
  int epochs = 50;
  int batch_size = 50;
  double learning_rate = 0.001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Augmentation augmentation = Augmentation::shuffle;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const {
    if (margin < 0) throw UsageError("margin must be >= 0");
    if (lambda < 0) throw UsageError("lambda must be >= 0");
    if (epochs < 0) throw UsageError("epochs must be >= 0");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (augmentation != Augmentation::off && batch_size < 2)
      throw UsageError("batch_size must be >= 2 with augmentation enabled");
    if (learning_rate <= 0) throw UsageError("learning_rate must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw UsageError("betas must lie in [0, 1)");
    if (epsilon <= 0) throw UsageError("epsilon must be > 0");
    if (workers < 1) throw UsageError("workers must be >= 1");
  }
};

struct EpochStats {
  double mean_loss = 0;
  long triplets_seen = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;

  long total_triplets_seen() const {
    long total = 0;
    for (const EpochStats& e : epochs) total += e.triplets_seen;
    return total;
  }
};

using EpochCallback = std::function<void(int, const EpochStats&)>;

// --------------------------------------------------------------------------
// Loss analytics
// --------------------------------------------------------------------------

/// [ ||z_a - z_n|| - ||z_a - z_d|| + m ]_+
inline double triplet_hinge(std::span<const double> z_a,
                            std::span<const double> z_n,
                            std::span<const double> z_d, double margin) {
  const double h = euclidean_distance(z_a, z_n) -
                   euclidean_distance(z_a, z_d) + margin;
  return h > 0 ? h : 0.0;
}

inline double triplet_hinge(const Embedding& z_a, const Embedding& z_n,
                            const Embedding& z_d, double margin) {
  return triplet_hinge(std::span<const double>(z_a.values),
                       std::span<const double>(z_n.values),
                       std::span<const double>(z_d.values), margin);
}

struct TripletEmbeddings {
  std::vector<double> anchor;
  std::vector<double> neighbor;
  std::vector<double> distant;
};

/// Sum over triplets of hinge + lambda * (||z_a|| + ||z_n|| + ||z_d||).
/// The penalty covers all three embeddings.
inline double objective_value(const std::vector<TripletEmbeddings>& triplets,
                              double margin, double lambda) {
  if (triplets.empty())
    throw UsageError("objective_value: empty triplet list");
  double total = 0;
  for (const TripletEmbeddings& t : triplets) {
    total += triplet_hinge(t.anchor, t.neighbor, t.distant, margin);
    total += lambda *
             (l2_norm(t.anchor) + l2_norm(t.neighbor) + l2_norm(t.distant));
  }
  return total;
}

// --------------------------------------------------------------------------
// Recombination
// --------------------------------------------------------------------------

/// off: identity. shuffle: distants re-assigned along a random cycle, so no
/// triplet keeps its own distant. full: every (anchor, neighbor) pair is
/// re-paired with each of the 3(B-1) tiles of the other triplets.
inline std::vector<TileTriplet> recombine_batch(
    const std::vector<TileTriplet>& batch, Augmentation mode, Rng& rng) {
  if (mode == Augmentation::off) return batch;
  const std::size_t b = batch.size();
  if (b < 2)
    throw UsageError("recombination needs a batch of at least 2 triplets");

  std::vector<TileTriplet> out;
  if (mode == Augmentation::shuffle) {
    const std::vector<std::size_t> perm = rng.cyclic_derangement(b);
    out.reserve(b);
    for (std::size_t i = 0; i < b; ++i)
      out.push_back(TileTriplet{batch[i].anchor, batch[i].neighbor,
                                batch[perm[i]].distant});
    return out;
  }

  out.reserve(3 * b * (b - 1));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      if (j == i) continue;
      out.push_back(
          TileTriplet{batch[i].anchor, batch[i].neighbor, batch[j].anchor});
      out.push_back(
          TileTriplet{batch[i].anchor, batch[i].neighbor, batch[j].neighbor});
      out.push_back(
          TileTriplet{batch[i].anchor, batch[i].neighbor, batch[j].distant});
    }
  return out;
}

// --------------------------------------------------------------------------
// Adam
// --------------------------------------------------------------------------

template <typename T = double>
struct AdamState {
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  long step = 0;
};

template <typename T>
AdamState<T> make_adam_state(std::size_t param_count) {
  AdamState<T> state;
  state.first_moment.assign(param_count, T(0));
  state.second_moment.assign(param_count, T(0));
  return state;
}

/// Standard bias-corrected Adam update.
template <typename T>
void adam_step(EncoderParams<T>& params, const EncoderParams<T>& grads,
               AdamState<T>& state, const TrainConfig& config) {
  const std::size_t n = params.values.size();
  if (grads.values.size() != n || state.first_moment.size() != n)
    throw UsageError("adam_step: shape mismatch");
  for (const T g : grads.values)
    if (!std::isfinite(static_cast<double>(g)))
      throw NumericError("adam_step: non-finite gradient");

  state.step += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double lr = config.learning_rate;
  const double eps = config.epsilon;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = static_cast<double>(grads.values[i]);
    const double m = b1 * static_cast<double>(state.first_moment[i]) +
                     (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(state.second_moment[i]) +
                     (1.0 - b2) * g * g;
    state.first_moment[i] = static_cast<T>(m);
    state.second_moment[i] = static_cast<T>(v);
    const double m_hat = m / corr1;
    const double v_hat = v / corr2;
    params.values[i] = static_cast<T>(static_cast<double>(params.values[i]) -
                                      lr * m_hat / (std::sqrt(v_hat) + eps));
  }
}

// --------------------------------------------------------------------------
// Objective gradients
// --------------------------------------------------------------------------

namespace detail {

template <typename T>
struct TripletInputs {
  std::vector<T> anchor, neighbor, distant;
};

/// Per-triplet loss and embedding-space gradients, then backprop through the
/// network for each member. Gradients accumulate into `grads`.
template <typename T>
double triplet_gradient_one(const EncoderParams<T>& params,
                            const ParamLayout& layout,
                            const EncoderConfig& config,
                            const TripletInputs<T>& item, double margin,
                            double lambda, Tape<T>& tape_a, Tape<T>& tape_n,
                            Tape<T>& tape_d, EncoderParams<T>& grads) {
  forward(params, layout, config, std::span<const T>(item.anchor), tape_a);
  forward(params, layout, config, std::span<const T>(item.neighbor), tape_n);
  forward(params, layout, config, std::span<const T>(item.distant), tape_d);
  const int d = config.embed_dim;

  double dist_an_sq = 0, dist_ad_sq = 0, norm_a_sq = 0, norm_n_sq = 0,
         norm_d_sq = 0;
  for (int k = 0; k < d; ++k) {
    const double za = static_cast<double>(tape_a.embed[k]);
    const double zn = static_cast<double>(tape_n.embed[k]);
    const double zd = static_cast<double>(tape_d.embed[k]);
    dist_an_sq += (za - zn) * (za - zn);
    dist_ad_sq += (za - zd) * (za - zd);
    norm_a_sq += za * za;
    norm_n_sq += zn * zn;
    norm_d_sq += zd * zd;
  }
  const double dist_an = std::sqrt(dist_an_sq);
  const double dist_ad = std::sqrt(dist_ad_sq);
  const double norm_a = std::sqrt(norm_a_sq);
  const double norm_n = std::sqrt(norm_n_sq);
  const double norm_d = std::sqrt(norm_d_sq);

  const double h = dist_an - dist_ad + margin;
  const bool active = h > 0;  // subgradient 0 exactly at the kink
  const double loss =
      (active ? h : 0.0) + lambda * (norm_a + norm_n + norm_d);
  if (!std::isfinite(loss)) throw NumericError("non-finite triplet loss");

  std::vector<T> d_a(d, T(0)), d_n(d, T(0)), d_d(d, T(0));
  for (int k = 0; k < d; ++k) {
    const double za = static_cast<double>(tape_a.embed[k]);
    const double zn = static_cast<double>(tape_n.embed[k]);
    const double zd = static_cast<double>(tape_d.embed[k]);
    double ga = 0, gn = 0, gd = 0;
    if (active) {
      if (dist_an > 0) {
        const double u = (za - zn) / dist_an;
        ga += u;
        gn -= u;
      }
      if (dist_ad > 0) {
        const double w = (za - zd) / dist_ad;
        ga -= w;
        gd += w;
      }
    }
    if (lambda > 0) {  // ||z|| subgradient is 0 at the origin
      if (norm_a > 0) ga += lambda * za / norm_a;
      if (norm_n > 0) gn += lambda * zn / norm_n;
      if (norm_d > 0) gd += lambda * zd / norm_d;
    }
    d_a[k] = static_cast<T>(ga);
    d_n[k] = static_cast<T>(gn);
    d_d[k] = static_cast<T>(gd);
  }
  backward(params, layout, config, tape_a, std::span<const T>(item.anchor),
           std::span<const T>(d_a), grads);
  backward(params, layout, config, tape_n, std::span<const T>(item.neighbor),
           std::span<const T>(d_n), grads);
  backward(params, layout, config, tape_d, std::span<const T>(item.distant),
           std::span<const T>(d_d), grads);
  return loss;
}

inline constexpr std::size_t kGradChunk = 8;

/// Chunked batch gradient: triplets are grouped into fixed chunks of
/// kGradChunk, each chunk accumulates into its own buffer, and chunk buffers
/// merge in index order. The reduction tree is identical for every worker
/// count.
template <typename T>
double triplet_batch_gradients(const EncoderParams<T>& params,
                               const ParamLayout& layout,
                               const EncoderConfig& config,
                               const std::vector<TripletInputs<T>>& batch,
                               double margin, double lambda,
                               EncoderParams<T>& grads, int workers) {
  if (batch.empty()) throw UsageError("gradient over an empty batch");
  grads.values.assign(layout.total, T(0));
  const std::size_t n = batch.size();
  const std::size_t nchunks = (n + kGradChunk - 1) / kGradChunk;
  const std::size_t in_flight =
      std::min<std::size_t>(std::max(workers, 1), nchunks);

  std::vector<EncoderParams<T>> chunk_grads(in_flight);
  std::vector<double> chunk_loss(in_flight, 0.0);
  double total_loss = 0;

  auto run_chunk = [&](std::size_t chunk, std::size_t buffer,
                       std::exception_ptr& error) {
    try {
      chunk_grads[buffer].values.assign(layout.total, T(0));
      chunk_loss[buffer] = 0;
      Tape<T> tape_a, tape_n, tape_d;
      const std::size_t begin = chunk * kGradChunk;
      const std::size_t end = std::min(n, begin + kGradChunk);
      for (std::size_t i = begin; i < end; ++i)
        chunk_loss[buffer] += triplet_gradient_one(
            params, layout, config, batch[i], margin, lambda, tape_a, tape_n,
            tape_d, chunk_grads[buffer]);
    } catch (...) {
      error = std::current_exception();
    }
  };

  for (std::size_t round = 0; round < nchunks; round += in_flight) {
    const std::size_t count = std::min(in_flight, nchunks - round);
    std::vector<std::exception_ptr> errors(count);
    if (count == 1 || in_flight == 1) {
      run_chunk(round, 0, errors[0]);
    } else {
      std::vector<std::thread> threads;
      for (std::size_t b = 0; b < count; ++b)
        threads.emplace_back(run_chunk, round + b, b, std::ref(errors[b]));
      for (auto& thread : threads) thread.join();
    }
    for (const auto& error : errors)
      if (error) std::rethrow_exception(error);
    // merge strictly in chunk order
    for (std::size_t b = 0; b < count; ++b) {
      total_loss += chunk_loss[b];
      const std::vector<T>& part = chunk_grads[b].values;
      for (std::size_t i = 0; i < part.size(); ++i)
        grads.values[i] += part[i];
    }
  }
  return total_loss;
}

template <typename T>
void standardize_triplet(const TileTriplet& triplet, const BandStats& stats,
                         TripletInputs<T>& out) {
  standardize_tile(triplet.anchor, stats, out.anchor);
  standardize_tile(triplet.neighbor, stats, out.neighbor);
  standardize_tile(triplet.distant, stats, out.distant);
}

}  // namespace detail

/// Loss and exact parameter gradients of the full objective over a batch of
/// tile triplets. The loss equals objective_value on the same embeddings.
template <typename T = double>
std::pair<double, EncoderParams<T>> loss_gradients(
    const EncoderParams<T>& params, const EncoderConfig& config,
    const std::vector<TileTriplet>& batch, double margin, double lambda,
    const BandStats& stats, int workers = 1) {
  if (batch.empty()) throw UsageError("loss_gradients: empty batch");
  const ParamLayout layout = param_layout(config);
  if (params.values.size() != layout.total)
    throw UsageError("parameter count does not match encoder config");
  std::vector<detail::TripletInputs<T>> inputs(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TileTriplet& t = batch[i];
    if (t.anchor.size != config.tile_size || t.anchor.bands != config.bands ||
        t.neighbor.size != config.tile_size || t.distant.size != config.tile_size)
      throw UsageError("triplet tile shape does not match encoder input");
    detail::standardize_triplet(t, stats, inputs[i]);
  }
  EncoderParams<T> grads;
  const double loss = detail::triplet_batch_gradients(
      params, layout, config, inputs, margin, lambda, grads, workers);
  return {loss, std::move(grads)};
}

// --------------------------------------------------------------------------
// Training loops
// --------------------------------------------------------------------------

/// Epoch loop over a sampled triplet set: seeded shuffle, fixed-size
/// batches, in-batch recombination, batch gradients, Adam step.
/// Deterministic given the seeds in the configs.
template <typename T = double>
std::pair<EncoderParams<T>, TrainReport> train(const TripletSet& set,
                                               const EncoderConfig& enc_config,
                                               const TrainConfig& train_config,
                                               const BandStats& stats,
                                               const EpochCallback& on_epoch =
                                                   nullptr) {
  enc_config.validate();
  train_config.validate();
  const ParamLayout layout = param_layout(enc_config);
  EncoderParams<T> params = init_encoder<T>(enc_config);
  AdamState<T> adam = make_adam_state<T>(layout.total);
  TrainReport report;
  if (set.size() == 0 || train_config.epochs == 0) return {params, report};

  std::vector<std::size_t> order(set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t epoch_seed =
        substream_seed(train_config.seed, static_cast<std::uint64_t>(epoch));
    Rng shuffle_rng(epoch_seed, 0);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0;
    long consumed = 0;
    const std::size_t bs = static_cast<std::size_t>(train_config.batch_size);
    for (std::size_t begin = 0, batch_idx = 0; begin < order.size();
         begin += bs, ++batch_idx) {
      const std::size_t end = std::min(order.size(), begin + bs);
      std::vector<TileTriplet> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i)
        batch.push_back(set.materialize(order[i]));

      // a trailing singleton batch cannot be recombined; train on it as-is
      Rng recombine_rng(epoch_seed, 1 + batch_idx);
      const std::vector<TileTriplet> effective =
          (train_config.augmentation == Augmentation::off || batch.size() < 2)
              ? batch
              : recombine_batch(batch, train_config.augmentation,
                                recombine_rng);

      std::vector<detail::TripletInputs<T>> inputs(effective.size());
      for (std::size_t i = 0; i < effective.size(); ++i)
        detail::standardize_triplet(effective[i], stats, inputs[i]);
      EncoderParams<T> grads;
      double batch_loss;
      try {
        batch_loss = detail::triplet_batch_gradients(
            params, layout, enc_config, inputs, train_config.margin,
            train_config.lambda, grads, train_config.workers);
        adam_step(params, grads, adam, train_config);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_idx) + ": " + e.what());
      }
      epoch_loss += batch_loss;
      consumed += static_cast<long>(effective.size());
    }

    EpochStats stats_row;
    stats_row.mean_loss = epoch_loss / static_cast<double>(consumed);
    stats_row.triplets_seen = consumed;
    stats_row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    report.epochs.push_back(stats_row);
    if (on_epoch) on_epoch(epoch, stats_row);
  }
  return {params, report};
}

// --------------------------------------------------------------------------
// Supervised comparison
// --------------------------------------------------------------------------

template <typename T = double>
struct SupervisedModel {
  EncoderParams<T> params;  // encoder plus affine softmax head
  EncoderConfig config;     // softmax_classes is set
  std::vector<int> class_ids;  // dense index -> original class id
};

namespace detail {

/// Mean cross-entropy over (tiles, dense labels); optionally accumulates
/// gradients scaled by 1/n.
template <typename T>
double cross_entropy_pass(const EncoderParams<T>& params,
                          const ParamLayout& layout,
                          const EncoderConfig& config,
                          const std::vector<Tile>& tiles,
                          const std::vector<int>& dense_labels,
                          const BandStats& stats,
                          EncoderParams<T>* grads) {
  const int classes = config.softmax_classes;
  const auto wc = slice_span(params, layout, "classifier.weight");
  const auto bc = slice_span(params, layout, "classifier.bias");
  const int d = config.embed_dim;
  Tape<T> tape;
  std::vector<T> input;
  std::vector<double> logits(classes), probs(classes);
  std::vector<T> d_embed(d);
  double total = 0;
  const double inv_n = 1.0 / static_cast<double>(tiles.size());

  for (std::size_t i = 0; i < tiles.size(); ++i) {
    standardize_tile(tiles[i], stats, input);
    const auto& embed =
        forward(params, layout, config, std::span<const T>(input), tape);
    double max_logit = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < classes; ++k) {
      double acc = static_cast<double>(bc[k]);
      const T* row = wc.data() + static_cast<std::size_t>(k) * d;
      for (int j = 0; j < d; ++j)
        acc += static_cast<double>(row[j]) * static_cast<double>(embed[j]);
      logits[k] = acc;
      max_logit = std::max(max_logit, acc);
    }
    double z = 0;
    for (int k = 0; k < classes; ++k) {
      probs[k] = std::exp(logits[k] - max_logit);
      z += probs[k];
    }
    for (int k = 0; k < classes; ++k) probs[k] /= z;
    const int label = dense_labels[i];
    total += -std::log(std::max(probs[label], 1e-300));

    if (grads) {
      const TensorSlice& wslice = layout.find("classifier.weight");
      const TensorSlice& bslice = layout.find("classifier.bias");
      T* gw = grads->values.data() + wslice.offset;
      T* gb = grads->values.data() + bslice.offset;
      std::fill(d_embed.begin(), d_embed.end(), T(0));
      for (int k = 0; k < classes; ++k) {
        const double delta =
            (probs[k] - (k == label ? 1.0 : 0.0)) * inv_n;
        gb[k] += static_cast<T>(delta);
        const T* row = wc.data() + static_cast<std::size_t>(k) * d;
        T* grow = gw + static_cast<std::size_t>(k) * d;
        for (int j = 0; j < d; ++j) {
          grow[j] += static_cast<T>(delta * static_cast<double>(embed[j]));
          d_embed[j] += static_cast<T>(delta * static_cast<double>(row[j]));
        }
      }
      backward(params, layout, config, tape, std::span<const T>(input),
               std::span<const T>(d_embed), *grads);
    }
  }
  return total * inv_n;
}

}  // namespace detail

/// Mean cross-entropy of a supervised model on a labeled tile set.
template <typename T = double>
double supervised_loss(const SupervisedModel<T>& model,
                       const std::vector<Tile>& tiles,
                       const std::vector<int>& labels,
                       const BandStats& stats) {
  const ParamLayout layout = param_layout(model.config);
  std::vector<int> dense(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = std::find(model.class_ids.begin(), model.class_ids.end(),
                              labels[i]);
    if (it == model.class_ids.end())
      throw DataError("label " + std::to_string(labels[i]) +
                      " unseen at training time");
    dense[i] = static_cast<int>(it - model.class_ids.begin());
  }
  return detail::cross_entropy_pass<T>(model.params, layout, model.config,
                                       tiles, dense, stats, nullptr);
}

template <typename T = double>
int predict_supervised(const SupervisedModel<T>& model, const Tile& tile,
                       const BandStats& stats) {
  const ParamLayout layout = param_layout(model.config);
  detail::Tape<T> tape;
  std::vector<T> input;
  detail::standardize_tile(tile, stats, input);
  const auto& embed = detail::forward(model.params, layout, model.config,
                                      std::span<const T>(input), tape);
  const auto wc = slice_span(model.params, layout, "classifier.weight");
  const auto bc = slice_span(model.params, layout, "classifier.bias");
  const int d = model.config.embed_dim;
  int best = 0;
  double best_logit = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < model.config.softmax_classes; ++k) {
    double acc = static_cast<double>(bc[k]);
    const T* row = wc.data() + static_cast<std::size_t>(k) * d;
    for (int j = 0; j < d; ++j)
      acc += static_cast<double>(row[j]) * static_cast<double>(embed[j]);
    if (acc > best_logit) {
      best_logit = acc;
      best = k;
    }
  }
  return model.class_ids[best];
}

/// Encoder plus softmax head trained under mean cross-entropy with the same
/// optimizer machinery as the triplet objective.
template <typename T = double>
std::pair<SupervisedModel<T>, TrainReport> train_supervised(
    const std::vector<Tile>& tiles, const std::vector<int>& labels,
    const EncoderConfig& enc_config, const TrainConfig& train_config,
    const BandStats& stats, const EpochCallback& on_epoch = nullptr) {
  if (tiles.size() != labels.size() || tiles.empty())
    throw UsageError("train_supervised: tiles and labels must align");
  train_config.validate();

  SupervisedModel<T> model;
  model.class_ids.assign(labels.begin(), labels.end());
  std::sort(model.class_ids.begin(), model.class_ids.end());
  model.class_ids.erase(
      std::unique(model.class_ids.begin(), model.class_ids.end()),
      model.class_ids.end());
  if (model.class_ids.size() < 2)
    throw DataError("supervised training needs at least 2 distinct classes");

  model.config = enc_config;
  model.config.softmax_classes = static_cast<int>(model.class_ids.size());
  model.config.validate();
  const ParamLayout layout = param_layout(model.config);
  model.params = init_encoder<T>(model.config);
  AdamState<T> adam = make_adam_state<T>(layout.total);

  std::vector<int> dense(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    dense[i] = static_cast<int>(
        std::lower_bound(model.class_ids.begin(), model.class_ids.end(),
                         labels[i]) -
        model.class_ids.begin());

  TrainReport report;
  std::vector<std::size_t> order(tiles.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng shuffle_rng(substream_seed(train_config.seed, epoch), 0);
    shuffle_rng.shuffle(order);
    double epoch_loss = 0;
    long seen = 0;
    const std::size_t bs = static_cast<std::size_t>(train_config.batch_size);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      std::vector<Tile> batch_tiles;
      std::vector<int> batch_labels;
      batch_tiles.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        batch_tiles.push_back(tiles[order[i]]);
        batch_labels.push_back(dense[order[i]]);
      }
      EncoderParams<T> grads;
      grads.values.assign(layout.total, T(0));
      const double loss = detail::cross_entropy_pass(
          model.params, layout, model.config, batch_tiles, batch_labels,
          stats, &grads);
      adam_step(model.params, grads, adam, train_config);
      epoch_loss += loss * static_cast<double>(batch_tiles.size());
      seen += static_cast<long>(batch_tiles.size());
    }
    EpochStats row;
    row.mean_loss = epoch_loss / static_cast<double>(seen);
    row.triplets_seen = seen;
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    report.epochs.push_back(row);
    if (on_epoch) on_epoch(epoch, row);
  }
  return {std::move(model), report};
}

}  // namespace t2v
