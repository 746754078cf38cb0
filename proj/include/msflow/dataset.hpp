#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "msflow/error.hpp"
#include "msflow/log.hpp"
#include "msflow/tensor.hpp"

namespace msf {

// One univariate or multivariate series on a fixed time grid.
//   values:     T x F targets
//   covariates: T x E extra per-timestamp columns from the input (cov_*)
struct TimeSeries {
  std::string series_id;
  std::vector<std::int64_t> timestamps;
  Tensor values;
  Tensor covariates;
  std::vector<std::string> value_names{"value"};
  std::vector<std::string> covariate_names;

  std::size_t length() const noexcept { return timestamps.size(); }
  std::size_t channels() const noexcept { return values.cols(); }
  std::int64_t stride() const { return timestamps.size() >= 2 ? timestamps[1] - timestamps[0] : 0; }

  // Rows [begin, begin+len) as a new series.
  TimeSeries slice(std::size_t begin, std::size_t len) const {
    require(begin + len <= length(), "TimeSeries::slice out of range");
    TimeSeries out;
    out.series_id = series_id;
    out.value_names = value_names;
    out.covariate_names = covariate_names;
    out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                          timestamps.begin() + static_cast<std::ptrdiff_t>(begin + len));
    auto rows = [&](const Tensor& t) {
      const std::size_t c = t.cols();
      std::vector<double> d(t.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                            t.data().begin() + static_cast<std::ptrdiff_t>((begin + len) * c));
      return Tensor(Shape{len, c}, std::move(d));
    };
    out.values = rows(values);
    out.covariates = rows(covariates);
    return out;
  }
};

inline void validate_series(const TimeSeries& ts) {
  require(ts.values.rows() == ts.length() || ts.length() == 0, "TimeSeries: values not aligned with timestamps");
  require(ts.covariates.rows() == ts.length() || ts.length() == 0, "TimeSeries: covariates not aligned with timestamps");
  for (std::size_t i = 1; i < ts.length(); ++i) {
    if (ts.timestamps[i] <= ts.timestamps[i - 1])
      throw IngestionError("series '" + ts.series_id + "': timestamps not strictly increasing at " +
                           std::to_string(ts.timestamps[i]));
    if (ts.timestamps[i] - ts.timestamps[i - 1] != ts.stride())
      throw IngestionError("series '" + ts.series_id + "': non-constant stride at timestamp " +
                           std::to_string(ts.timestamps[i]) + " (expected " + std::to_string(ts.stride()) + ", got " +
                           std::to_string(ts.timestamps[i] - ts.timestamps[i - 1]) + ")");
  }
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

inline double parse_double(std::string_view s, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw IngestionError("line " + std::to_string(line) + ": cannot parse column '" + std::string(column) +
                         "' value '" + std::string(s) + "' as a finite real");
  return v;
}

inline std::int64_t parse_int(std::string_view s, std::size_t line) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end)
    throw IngestionError("line " + std::to_string(line) + ": cannot parse timestamp '" + std::string(s) + "'");
  return v;
}

}  // namespace detail

// Reads `series_id,timestamp,value[,value_2...][,cov_*]`. One series per id,
// in order of first appearance; rows are sorted by timestamp.
inline std::vector<TimeSeries> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("empty CSV input (missing header)");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "series_id" || header[1] != "timestamp" || header[2] != "value")
    throw IngestionError("CSV header must start with series_id,timestamp,value");
  std::vector<std::string> value_names, cov_names;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const std::string name(header[c]);
    if (name.rfind("cov_", 0) == 0) {
      cov_names.push_back(name);
    } else {
      if (!cov_names.empty()) throw IngestionError("CSV header: value column '" + name + "' after covariate columns");
      value_names.push_back(name);
    }
  }
  struct Row {
    std::int64_t ts;
    std::vector<double> vals;
    std::size_t line;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != header.size())
      throw IngestionError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                           " fields, got " + std::to_string(f.size()));
    std::string id(f[0]);
    Row r{detail::parse_int(f[1], lineno), {}, lineno};
    for (std::size_t c = 2; c < f.size(); ++c) r.vals.push_back(detail::parse_double(f[c], lineno, header[c]));
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(std::move(r));
  }
  std::vector<TimeSeries> out;
  std::vector<std::string> duplicates;
  const std::size_t F = value_names.size(), E = cov_names.size();
  for (const auto& id : order) {
    auto& rs = rows[id];
    std::stable_sort(rs.begin(), rs.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
    for (std::size_t i = 1; i < rs.size(); ++i)
      if (rs[i].ts == rs[i - 1].ts)
        duplicates.push_back("series '" + id + "' timestamp " + std::to_string(rs[i].ts) + " (lines " +
                             std::to_string(rs[i - 1].line) + ", " + std::to_string(rs[i].line) + ")");
    TimeSeries ts;
    ts.series_id = id;
    ts.value_names = value_names;
    ts.covariate_names = cov_names;
    ts.values = Tensor(Shape{rs.size(), F});
    ts.covariates = Tensor(Shape{rs.size(), E});
    for (std::size_t i = 0; i < rs.size(); ++i) {
      ts.timestamps.push_back(rs[i].ts);
      for (std::size_t c = 0; c < F; ++c) ts.values.at(i, c) = rs[i].vals[c];
      for (std::size_t c = 0; c < E; ++c) ts.covariates.at(i, c) = rs[i].vals[F + c];
    }
    out.push_back(std::move(ts));
  }
  if (!duplicates.empty()) {
    std::string msg = "duplicate (series_id, timestamp) rows:";
    for (const auto& d : duplicates) msg += "\n  " + d;
    throw IngestionError(msg);
  }
  for (const auto& ts : out) validate_series(ts);
  return out;
}

inline std::vector<TimeSeries> load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open CSV file '" + path + "'");
  return read_csv(in);
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_csv(std::ostream& out, const std::vector<TimeSeries>& series) {
  require(!series.empty(), "write_csv: no series");
  out << "series_id,timestamp";
  for (const auto& n : series[0].value_names) out << ',' << n;
  for (const auto& n : series[0].covariate_names) out << ',' << n;
  out << '\n';
  for (const auto& ts : series) {
    for (std::size_t i = 0; i < ts.length(); ++i) {
      out << ts.series_id << ',' << ts.timestamps[i];
      for (std::size_t c = 0; c < ts.values.cols(); ++c) out << ',' << format_double(ts.values.at(i, c));
      for (std::size_t c = 0; c < ts.covariates.cols(); ++c) out << ',' << format_double(ts.covariates.at(i, c));
      out << '\n';
    }
  }
}

inline void write_csv(const std::string& path, const std::vector<TimeSeries>& series) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write CSV file '" + path + "'");
  write_csv(out, series);
}

// ---------------------------------------------------------------------------
// Calendar covariates
// ---------------------------------------------------------------------------

inline constexpr std::size_t kTimeFeatureCount = 4;

// time-of-day, day-of-week, day-of-month, day-of-year, each in [-0.5, 0.5].
inline std::array<double, kTimeFeatureCount> time_features(std::int64_t epoch_seconds) {
  using namespace std::chrono;
  const std::int64_t day = epoch_seconds >= 0 ? epoch_seconds / 86400 : -((-epoch_seconds + 86399) / 86400);
  const std::int64_t sec_of_day = epoch_seconds - day * 86400;
  const sys_days d{days{day}};
  const year_month_day ymd{d};
  const weekday wd{d};
  const auto jan1 = sys_days{ymd.year() / January / 1};
  const double doy = static_cast<double>((d - jan1).count());
  return {static_cast<double>(sec_of_day) / 86400.0 - 0.5, static_cast<double>(wd.iso_encoding() - 1) / 6.0 - 0.5,
          (static_cast<double>(static_cast<unsigned>(ymd.day())) - 1.0) / 30.0 - 0.5, doy / 365.0 - 0.5};
}

// T x (4 + E): calendar features followed by the series' own covariate columns.
inline Tensor covariate_matrix(const TimeSeries& ts, std::size_t begin, std::size_t len) {
  const std::size_t E = ts.covariates.cols();
  Tensor out(Shape{len, kTimeFeatureCount + E});
  for (std::size_t i = 0; i < len; ++i) {
    const auto f = time_features(ts.timestamps[begin + i]);
    for (std::size_t c = 0; c < kTimeFeatureCount; ++c) out.at(i, c) = f[c];
    for (std::size_t c = 0; c < E; ++c) out.at(i, kTimeFeatureCount + c) = ts.covariates.at(begin + i, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Chronological split and normalization
// ---------------------------------------------------------------------------

struct SplitBounds {
  std::size_t train_end = 0;  // [0, train_end)
  std::size_t val_end = 0;    // [train_end, val_end)
  std::size_t total = 0;      // [val_end, total)
};

struct SplitSeries {
  TimeSeries train, val, test;
  SplitBounds bounds;
};

inline SplitBounds split_bounds(std::size_t T, double train_frac, double val_frac) {
  if (!(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0))
    throw ConfigError("split fractions must satisfy train_frac > 0, val_frac >= 0, train_frac + val_frac < 1");
  SplitBounds b;
  b.total = T;
  b.train_end = static_cast<std::size_t>(std::floor(static_cast<double>(T) * train_frac + 1e-9));
  b.val_end = b.train_end + static_cast<std::size_t>(std::floor(static_cast<double>(T) * val_frac + 1e-9));
  return b;
}

// Splits into contiguous train/val/test. When min_length > 0 every split must
// hold at least that many points (one window of backcast + horizon).
inline SplitSeries chronological_split(const TimeSeries& ts, double train_frac, double val_frac,
                                       std::size_t min_length = 0) {
  const SplitBounds b = split_bounds(ts.length(), train_frac, val_frac);
  if (min_length > 0) {
    const std::size_t lens[3] = {b.train_end, b.val_end - b.train_end, b.total - b.val_end};
    const char* names[3] = {"train", "val", "test"};
    for (int i = 0; i < 3; ++i) {
      if (lens[i] >= min_length) continue;
      std::size_t need = ts.length();
      while (true) {
        const auto nb = split_bounds(need, train_frac, val_frac);
        if (nb.train_end >= min_length && nb.val_end - nb.train_end >= min_length && nb.total - nb.val_end >= min_length)
          break;
        ++need;
      }
      throw ConfigError("series '" + ts.series_id + "': " + names[i] + " split has " + std::to_string(lens[i]) +
                        " points but one window needs " + std::to_string(min_length) + "; minimum series length is " +
                        std::to_string(need));
    }
  }
  SplitSeries s;
  s.bounds = b;
  s.train = ts.slice(0, b.train_end);
  s.val = ts.slice(b.train_end, b.val_end - b.train_end);
  s.test = ts.slice(b.val_end, b.total - b.val_end);
  return s;
}

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stdev;
};

inline constexpr double kStdFloor = 1e-8;

// Per-channel mean and population standard deviation.
inline NormStats fit_norm(const TimeSeries& train) {
  require(train.length() > 0, "fit_norm: empty training split");
  const std::size_t T = train.length(), F = train.channels();
  NormStats s;
  s.mean.assign(F, 0.0);
  s.stdev.assign(F, 0.0);
  for (std::size_t c = 0; c < F; ++c) {
    double m = 0.0;
    for (std::size_t t = 0; t < T; ++t) m += train.values.at(t, c);
    m /= static_cast<double>(T);
    double v = 0.0;
    for (std::size_t t = 0; t < T; ++t) v += (train.values.at(t, c) - m) * (train.values.at(t, c) - m);
    double sd = std::sqrt(v / static_cast<double>(T));
    if (sd < kStdFloor) {
      warn("series '" + train.series_id + "' channel " + std::to_string(c) + " is constant on the training split; std floored at 1e-8");
      sd = kStdFloor;
    }
    s.mean[c] = m;
    s.stdev[c] = sd;
  }
  return s;
}

inline TimeSeries normalize(TimeSeries ts, const NormStats& s) {
  for (std::size_t t = 0; t < ts.length(); ++t)
    for (std::size_t c = 0; c < ts.channels(); ++c) ts.values.at(t, c) = (ts.values.at(t, c) - s.mean[c]) / s.stdev[c];
  return ts;
}

inline Tensor denormalize(Tensor v, const NormStats& s) {
  const std::size_t C = v.cols();
  require(C == s.mean.size(), "denormalize: channel count mismatch");
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] * s.stdev[i % C] + s.mean[i % C];
  return v;
}

inline TimeSeries denormalize(TimeSeries ts, const NormStats& s) {
  ts.values = denormalize(std::move(ts.values), s);
  return ts;
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

// View of one (backcast, forecast) pair inside a series: the backcast covers
// rows [start, start+L) and the forecast the N rows after it. The anchor t is
// the last backcast row. The referenced series must outlive the view.
struct WindowPair {
  const TimeSeries* series = nullptr;
  std::size_t start = 0;
  std::size_t backcast_length = 0;
  std::size_t horizon = 0;

  std::size_t anchor_index() const { return start + backcast_length - 1; }
  std::int64_t anchor_timestamp() const { return series->timestamps[anchor_index()]; }
  std::int64_t backcast_first_timestamp() const { return series->timestamps[start]; }
  std::int64_t forecast_first_timestamp() const { return series->timestamps[start + backcast_length]; }
  std::int64_t forecast_last_timestamp() const { return series->timestamps[start + backcast_length + horizon - 1]; }

  Tensor backcast() const { return series->slice(start, backcast_length).values; }
  Tensor forecast() const { return series->slice(start + backcast_length, horizon).values; }
  Tensor backcast_covariates() const { return covariate_matrix(*series, start, backcast_length); }
  Tensor forecast_covariates() const { return covariate_matrix(*series, start + backcast_length, horizon); }
};

inline std::size_t window_count(std::size_t T, std::size_t L, std::size_t N, std::size_t stride) {
  if (T < L + N) return 0;
  return (T - L - N) / stride + 1;
}

inline std::vector<WindowPair> sample_windows(const TimeSeries& split, std::size_t L, std::size_t N, std::size_t stride) {
  if (L < 1 || N < 1 || stride < 1) throw ConfigError("sample_windows: L, N and stride must be >= 1");
  if (split.length() < L + N)
    throw ConfigError("series '" + split.series_id + "': split of length " + std::to_string(split.length()) +
                      " is shorter than L+N=" + std::to_string(L + N));
  std::vector<WindowPair> out;
  const std::size_t n = window_count(split.length(), L, N, stride);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(WindowPair{&split, i * stride, L, N});
  return out;
}

// Test-time segment: the test split preceded by `context` rows of history, so
// the first window's anchor is the last validation row.
inline TimeSeries evaluation_segment(const TimeSeries& full, const SplitBounds& b, std::size_t context) {
  require(b.val_end >= context, "evaluation_segment: not enough history before the test split");
  return full.slice(b.val_end - context, b.total - b.val_end + context);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline double mse(const Tensor& pred, const Tensor& truth) {
  require(pred.shape() == truth.shape(), "mse: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  require(pred.size() > 0, "mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

inline double mae(const Tensor& pred, const Tensor& truth) {
  require(pred.shape() == truth.shape(), "mae: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  require(pred.size() > 0, "mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

}  // namespace msf
