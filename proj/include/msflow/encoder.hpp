#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "msflow/autodiff.hpp"
#include "msflow/error.hpp"
#include "msflow/nn.hpp"
#include "msflow/random.hpp"

namespace msf {

struct EncoderConfig {
  std::size_t input_channels = 1;  // F
  std::size_t latent_dim = 64;     // K_z
  std::size_t hidden_dim = 64;     // d_h
  std::size_t heads = 4;           // H
  std::size_t conv_count = 4;      // trend branches, kernels 1, 2, 4, ...
  std::size_t time_dim = 32;       // K_T
  std::size_t freq_dim = 32;       // K_F
  std::size_t qkv_kernel = 3;
  std::size_t qkv_dilation = 1;
  std::size_t fft_window = 64;
  std::size_t mlp_hidden = 64;
  double mask_keep = 0.5;

  std::size_t repr_dim() const { return time_dim + freq_dim; }
  std::size_t fft_bins() const { return fft_window / 2 + 1; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ConfigError(std::string("encoder.") + name + " must be >= 1");
    };
    positive(input_channels, "input_channels");
    positive(latent_dim, "latent_dim");
    positive(hidden_dim, "hidden_dim");
    positive(heads, "heads");
    positive(conv_count, "conv_count");
    positive(time_dim, "time_dim");
    positive(freq_dim, "freq_dim");
    positive(qkv_kernel, "qkv_kernel");
    positive(qkv_dilation, "qkv_dilation");
    positive(mlp_hidden, "mlp_hidden");
    if (hidden_dim % heads != 0) throw ConfigError("encoder.hidden_dim must be divisible by encoder.heads");
    if (fft_window < 2) throw ConfigError("encoder.fft_window must be >= 2");
    if (conv_count > 16) throw ConfigError("encoder.conv_count must be <= 16");
    if (!(mask_keep >= 0.0 && mask_keep <= 1.0)) throw ConfigError("encoder.mask_keep must lie in [0,1]");
  }
};

inline constexpr double kMaskedLogit = -1e30;
inline constexpr std::size_t kMinEncodeLength = 4;

// Additive causal mask for `rows` queries at absolute positions
// offset..offset+rows-1 against `cols` keys.
inline Tensor causal_logit_mask(std::size_t rows, std::size_t cols, std::size_t offset) {
  Tensor m(Shape{rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = offset + i + 1; j < cols; ++j) m.at(i, j) = kMaskedLogit;
  return m;
}

// Projection MLP -> (optional timestamp mask) -> causal-conv attention ->
// trend branches and windowed-spectrum period branch -> [r^T, r^F].
class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg, std::string prefix = "encoder") : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();
    input_ = nn::Mlp(prefix_ + ".input", cfg_.input_channels, cfg_.mlp_hidden, cfg_.latent_dim);
    const auto conv = [&](const char* name) {
      return nn::CausalConv{prefix_ + ".attn." + name, cfg_.latent_dim, cfg_.hidden_dim, cfg_.qkv_kernel, cfg_.qkv_dilation};
    };
    q_ = conv("q");
    k_ = conv("k");
    v_ = conv("v");
    out_ = nn::Linear{prefix_ + ".attn.out", cfg_.hidden_dim, cfg_.hidden_dim};
    for (std::size_t i = 0; i < cfg_.conv_count; ++i)
      trend_.push_back(nn::CausalConv{prefix_ + ".trend." + std::to_string(i), cfg_.hidden_dim, cfg_.time_dim,
                                      std::size_t{1} << i, 1});
    period_ = nn::Mlp(prefix_ + ".period", cfg_.hidden_dim * cfg_.fft_bins(), cfg_.mlp_hidden, cfg_.freq_dim);
  }

  const EncoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  void init(ParameterSet& ps, RandomStream& rng) const {
    input_.init(ps, rng);
    q_.init(ps, rng);
    k_.init(ps, rng);
    v_.init(ps, rng);
    out_.init(ps, rng);
    for (const auto& t : trend_) t.init(ps, rng);
    period_.init(ps, rng);
  }

  ParameterSet make_parameters(RandomStream& rng) const {
    ParameterSet ps;
    init(ps, rng);
    return ps;
  }

  // h x F -> h x K_z, each row independently.
  template <class PS>
  Var project(Graph& g, PS& ps, Var window) const {
    if (window.cols() != cfg_.input_channels)
      throw ContractViolation("encoder: window has " + std::to_string(window.cols()) + " channels, configured for " +
                              std::to_string(cfg_.input_channels));
    require(window.rows() >= 1, "encoder: empty window");
    return input_(g, ps, window);
  }

  // Contextual embedding for the last `query_rows` timestamps of z (all when
  // 0). Keys and values always span the whole of z. When `weights` is given it
  // receives the per-head attention matrices.
  template <class PS>
  Var conv_trans(Graph& g, PS& ps, Var z, std::size_t query_rows = 0, std::vector<Tensor>* weights = nullptr) const {
    const std::size_t T = z.rows();
    require(T >= 1, "conv_trans: empty input");
    const std::size_t m = query_rows == 0 ? T : std::min(query_rows, T);
    const std::size_t offset = T - m;
    Var q = q_(g, ps, z);
    if (offset > 0) q = slice_rows(q, offset, m);
    Var k = k_(g, ps, z);
    Var v = v_(g, ps, z);
    const std::size_t dk = cfg_.hidden_dim / cfg_.heads;
    Var mask = g.constant(causal_logit_mask(m, T, offset));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
      Var logits = scale(matmul_nt(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk)),
                         1.0 / std::sqrt(static_cast<double>(dk)));
      Var a = softmax_rows(add(logits, mask));
      if (weights) weights->push_back(a.value());
      heads.push_back(matmul(a, slice_cols(v, h * dk, dk)));
    }
    return out_(g, ps, heads.size() == 1 ? heads[0] : concat_cols(heads));
  }

  // Average of causal convolutions with kernel sizes 1, 2, 4, ...
  template <class PS>
  Var trend(Graph& g, PS& ps, Var r) const {
    std::vector<Var> branches;
    for (const auto& t : trend_) branches.push_back(t(g, ps, r));
    Var acc = branches[0];
    for (std::size_t i = 1; i < branches.size(); ++i) acc = add(acc, branches[i]);
    return scale(acc, 1.0 / static_cast<double>(branches.size()));
  }

  // Magnitude spectrum of the trailing fft_window rows, per channel, then MLP.
  template <class PS>
  Var period(Graph& g, PS& ps, Var r) const {
    return period_(g, ps, spectrum(r));
  }

  Var spectrum(Var r) const {
    const std::size_t W = cfg_.fft_window, n = r.cols() * cfg_.fft_bins();
    Var dft = scale(window_dft(r, W), 1.0 / static_cast<double>(W));
    Var power = add(square(slice_cols(dft, 0, n)), square(slice_cols(dft, n, n)));
    return sqrt_eps(power, kMagnitudeEps);
  }

  // T x F window -> T x K representations. `mask` (T x 1 of 0/1) zeroes
  // latent rows before the backbone; pass none at inference.
  template <class PS>
  Var encode(Graph& g, PS& ps, Var window, std::optional<Tensor> mask = std::nullopt) const {
    Var z = project(g, ps, window);
    if (mask) {
      require(mask->rows() == z.rows() && mask->cols() == 1, "encode: mask must be T x 1");
      z = mul(z, g.constant(std::move(*mask)));
    }
    Var r = conv_trans(g, ps, z);
    return concat_cols({trend(g, ps, r), period(g, ps, r)});
  }

  // Inference over a whole window: T x K.
  Tensor encode(const ParameterSet& ps, const Tensor& window) const {
    check_length(window.rows());
    Graph g;
    return encode(g, ps, g.constant(window)).value();
  }

  // Final-timestamp representation (1 x K). Only the trailing rows that the
  // last output depends on are pushed through the extractors; keys/values
  // still cover the whole window.
  template <class PS>
  Var summarize(Graph& g, PS& ps, Var window) const {
    check_length(window.rows());
    Var z = project(g, ps, window);
    const std::size_t m = std::min(window.rows(), summary_rows());
    Var r = conv_trans(g, ps, z, m);
    Var rep = concat_cols({trend(g, ps, r), period(g, ps, r)});
    return slice_rows(rep, m - 1, 1);
  }

  Tensor summarize(const ParameterSet& ps, const Tensor& window) const {
    Graph g;
    return summarize(g, ps, g.constant(window)).value();
  }

  // Rows of r-tilde that the final output depends on.
  std::size_t summary_rows() const {
    return std::max(cfg_.fft_window, std::size_t{1} << (cfg_.conv_count - 1));
  }

  static constexpr double kMagnitudeEps = 1e-8;

 private:
  static void check_length(std::size_t h) {
    if (h < kMinEncodeLength)
      throw ContractViolation("encoder: window length " + std::to_string(h) + " is below the minimum of 4");
  }

  EncoderConfig cfg_;
  std::string prefix_;
  nn::Mlp input_;
  nn::CausalConv q_, k_, v_;
  nn::Linear out_;
  std::vector<nn::CausalConv> trend_;
  nn::Mlp period_;
};

}  // namespace msf
