#pragma once

#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "msflow/augmentation.hpp"
#include "msflow/autodiff.hpp"
#include "msflow/dataset.hpp"
#include "msflow/encoder.hpp"
#include "msflow/log.hpp"
#include "msflow/optim.hpp"

namespace msf {

// Representations of one window restricted to the overlap of its two views.
// Row t of every member addresses the same source timestamp.
struct OverlapReprs {
  Var time_a, time_b;  // |T| x K_T
  Var freq_a, freq_b;  // |T| x K_F
};

namespace detail {

// -sum over rows of log_softmax(logits)[row, positive_col(row)].
inline Var negative_log_pick(Var logits, const std::function<std::size_t(std::size_t)>& positive_col) {
  Graph& g = *logits.graph;
  Tensor sel(Shape{logits.rows(), logits.cols()});
  for (std::size_t r = 0; r < logits.rows(); ++r) sel.at(r, positive_col(r)) = 1.0;
  return scale(sum(mul(log_softmax_rows(logits), g.constant(std::move(sel)))), -1.0);
}

// Sums per-window scalars in a window-order independent way, then averages.
inline Var mean_of_terms(const std::vector<Var>& sums, std::size_t count) {
  Var total = sums.size() == 1 ? sums[0] : sum(concat_rows(sums));
  return scale(total, 1.0 / static_cast<double>(count));
}

}  // namespace detail

// Positives: the same timestamp in the other view. Negatives: other overlap
// timestamps of the same window, from both views. Mean over all (i, t).
inline Var time_contrastive_loss(const std::vector<OverlapReprs>& batch) {
  require(!batch.empty(), "time_contrastive_loss: empty batch");
  Graph& g = *batch[0].time_a.graph;
  std::vector<Var> sums;
  std::size_t count = 0;
  for (const auto& w : batch) {
    const std::size_t m = w.time_a.rows();
    if (m == 0) throw ContractViolation("time_contrastive_loss: empty overlap");
    require(w.time_b.rows() == m, "time_contrastive_loss: views not aligned");
    Tensor diag(Shape{m, m});
    for (std::size_t t = 0; t < m; ++t) diag.at(t, t) = kMaskedLogit;
    Var cross = matmul_nt(w.time_a, w.time_b);
    Var self = add(matmul_nt(w.time_a, w.time_a), g.constant(std::move(diag)));
    sums.push_back(detail::negative_log_pick(concat_cols({cross, self}), [](std::size_t r) { return r; }));
    count += m;
  }
  return detail::mean_of_terms(sums, count);
}

// Positives: the same (series, timestamp) in the other view. Negatives: the
// other series of the batch at the same timestamp, from both views.
inline Var freq_contrastive_loss(const std::vector<OverlapReprs>& batch) {
  require(!batch.empty(), "freq_contrastive_loss: empty batch");
  Graph& g = *batch[0].freq_a.graph;
  const std::size_t B = batch.size(), m = batch[0].freq_a.rows();
  for (const auto& w : batch)
    require(w.freq_a.rows() == m && w.freq_b.rows() == m,
            "freq_contrastive_loss: all windows must share one overlap length");
  if (m == 0) throw ContractViolation("freq_contrastive_loss: empty overlap");
  std::vector<Var> sums;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<Var> cols;
    for (std::size_t j = 0; j < B; ++j) cols.push_back(row_dot(batch[i].freq_a, batch[j].freq_b));
    for (std::size_t j = 0; j < B; ++j) cols.push_back(row_dot(batch[i].freq_a, batch[j].freq_a));
    Tensor mask(Shape{m, 2 * B});
    for (std::size_t t = 0; t < m; ++t) mask.at(t, B + i) = kMaskedLogit;
    Var logits = add(concat_cols(cols), g.constant(std::move(mask)));
    sums.push_back(detail::negative_log_pick(logits, [i](std::size_t) { return i; }));
  }
  return detail::mean_of_terms(sums, B * m);
}

struct ContrastiveLosses {
  Var time, freq, total;
};

inline ContrastiveLosses contrastive_losses(const std::vector<OverlapReprs>& batch) {
  Var t = time_contrastive_loss(batch);
  Var f = freq_contrastive_loss(batch);
  return {t, f, add(t, f)};
}

inline Var total_contrastive_loss(const std::vector<OverlapReprs>& batch) { return contrastive_losses(batch).total; }

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

struct PretrainConfig {
  std::size_t epochs = 5;
  std::size_t steps_per_epoch = 20;
  std::size_t batch_size = 8;
  std::size_t window = 200;
  double learning_rate = 1e-3;
  double grad_clip = 0.0;  // 0 disables
  bool fixed_batch = false;  // reuse the first batch (crops, masks) every step

  void validate() const {
    if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
    if (window < kMinCropLength) throw ConfigError("pretrain.window must be >= 4");
    if (!(learning_rate > 0.0)) throw ConfigError("pretrain.learning_rate must be > 0");
    if (steps_per_epoch < 1) throw ConfigError("pretrain.steps_per_epoch must be >= 1");
  }
};

struct LossRecord {
  std::size_t epoch = 0, step = 0;
  double time = 0.0, freq = 0.0, total = 0.0;
};

// One sampled batch: window starts, a crop shared by all windows (the
// frequency loss compares series at equal timestamps), and per-view masks.
struct PretrainBatch {
  std::vector<std::pair<std::size_t, std::size_t>> windows;  // (series index, start row)
  CropPair crop;
  std::vector<Tensor> masks_a, masks_b;
};

inline PretrainBatch sample_pretrain_batch(const std::vector<TimeSeries>& series, const PretrainConfig& cfg,
                                           double mask_keep, RandomStream rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i].length() >= cfg.window) eligible.push_back(i);
  if (eligible.empty())
    throw ConfigError("pretrain: no series has at least pretrain.window=" + std::to_string(cfg.window) + " points");
  PretrainBatch b;
  b.crop = random_crop(cfg.window, rng);
  for (std::size_t k = 0; k < cfg.batch_size; ++k) {
    const std::size_t s = eligible[rng.uniform_index(eligible.size())];
    const std::size_t start = rng.uniform_index(series[s].length() - cfg.window + 1);
    b.windows.emplace_back(s, start);
    b.masks_a.push_back(draw_timestamp_mask(b.crop.length_a(), rng, mask_keep));
    b.masks_b.push_back(draw_timestamp_mask(b.crop.length_b(), rng, mask_keep));
  }
  return b;
}

// Encodes both views of every window and keeps the overlap rows.
template <class PS>
std::vector<OverlapReprs> encode_pretrain_batch(Graph& g, PS& ps, const Encoder& enc,
                                                const std::vector<TimeSeries>& series, const PretrainBatch& b) {
  const auto& c = b.crop;
  const std::size_t m = c.overlap_length(), KT = enc.config().time_dim, KF = enc.config().freq_dim;
  std::vector<OverlapReprs> out;
  for (std::size_t k = 0; k < b.windows.size(); ++k) {
    const auto [s, start] = b.windows[k];
    const Tensor va = series[s].slice(start + c.a1 - 1, c.length_a()).values;
    const Tensor vb = series[s].slice(start + c.b1 - 1, c.length_b()).values;
    Var ra = slice_rows(enc.encode(g, ps, g.constant(va), b.masks_a[k]), c.overlap_offset_a(), m);
    Var rb = slice_rows(enc.encode(g, ps, g.constant(vb), b.masks_b[k]), c.overlap_offset_b(), m);
    out.push_back({slice_cols(ra, 0, KT), slice_cols(rb, 0, KT), slice_cols(ra, KT, KF), slice_cols(rb, KT, KF)});
  }
  return out;
}

struct PretrainResult {
  std::vector<LossRecord> history;
  std::vector<double> epoch_mean;  // mean total loss per epoch
};

// Plain SGD over sampled batches; updates `ps` in place.
inline PretrainResult pretrain(const Encoder& enc, ParameterSet& ps, const std::vector<TimeSeries>& series,
                               const PretrainConfig& cfg, const RandomStream& stream,
                               const std::function<void(const LossRecord&)>& on_step = nullptr) {
  cfg.validate();
  PretrainResult res;
  Sgd opt(cfg.learning_rate);
  std::optional<PretrainBatch> fixed;
  std::size_t global = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_sum = 0.0;
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step, ++global) {
      PretrainBatch batch;
      if (cfg.fixed_batch && fixed) {
        batch = *fixed;
      } else {
        batch = sample_pretrain_batch(series, cfg, enc.config().mask_keep, stream.split(global));
        if (cfg.fixed_batch) fixed = batch;
      }
      ps.zero_grad();
      LossRecord rec{epoch, global, 0.0, 0.0, 0.0};
      try {
        Graph g;
        const auto losses = contrastive_losses(encode_pretrain_batch(g, ps, enc, series, batch));
        rec.time = losses.time.value().item();
        rec.freq = losses.freq.value().item();
        rec.total = losses.total.value().item();
        g.backward(losses.total);
      } catch (const NumericFailure& e) {
        throw NumericFailure("pretrain: batch " + std::to_string(global) + ": " + e.what());
      }
      if (cfg.grad_clip > 0.0) clip_grad_norm(ps, cfg.grad_clip);
      opt.step(ps);
      epoch_sum += rec.total;
      res.history.push_back(rec);
      if (on_step) on_step(rec);
    }
    res.epoch_mean.push_back(epoch_sum / static_cast<double>(cfg.steps_per_epoch));
    info("pretrain epoch " + std::to_string(epoch) + " mean loss " + format_double(res.epoch_mean.back()));
  }
  return res;
}

inline void write_loss_history(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write loss history '" + path + "'");
  out << "epoch,step,loss_time,loss_freq,loss_total\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.step << ',' << format_double(r.time) << ',' << format_double(r.freq) << ','
        << format_double(r.total) << '\n';
}

}  // namespace msf
