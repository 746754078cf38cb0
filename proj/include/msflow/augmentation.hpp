#pragma once

#include <algorithm>
#include <array>
#include <string>

#include "msflow/error.hpp"
#include "msflow/random.hpp"
#include "msflow/tensor.hpp"

namespace msf {

// Two overlapping crops [a1, a2] and [b1, b2] of a length-T series, 1-based
// and inclusive, with a1 < b1 < a2 < b2. The overlap is [b1, a2].
struct CropPair {
  std::size_t a1 = 0, a2 = 0, b1 = 0, b2 = 0;

  std::size_t length_a() const { return a2 - a1 + 1; }
  std::size_t length_b() const { return b2 - b1 + 1; }
  std::size_t overlap_length() const { return a2 - b1 + 1; }
  // Offsets of the overlap's first row inside each view (0-based).
  std::size_t overlap_offset_a() const { return b1 - a1; }
  std::size_t overlap_offset_b() const { return 0; }

  bool valid(std::size_t T) const { return 0 < a1 && a1 < b1 && b1 < a2 && a2 < b2 && b2 <= T; }
  friend bool operator==(const CropPair&, const CropPair&) = default;
};

inline constexpr std::size_t kMinCropLength = 4;

// Uniform over all valid tuples: four distinct indices drawn uniformly from
// {1..T} and sorted are uniform over the C(T, 4) increasing tuples.
inline CropPair random_crop(std::size_t T, RandomStream& stream) {
  if (T < kMinCropLength)
    throw ContractViolation("random_crop: series length " + std::to_string(T) + " is below the minimum of 4");
  std::array<std::size_t, 4> idx{};
  for (std::size_t k = 0; k < 4; ++k) {
    std::size_t v;
    do {
      v = 1 + static_cast<std::size_t>(stream.uniform_index(T));
    } while (std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), v) !=
             idx.begin() + static_cast<std::ptrdiff_t>(k));
    idx[k] = v;
  }
  std::sort(idx.begin(), idx.end());
  return CropPair{idx[0], idx[2], idx[1], idx[3]};
}

struct MaskedLatent {
  Tensor latent;  // rows with mask 0 zeroed
  Tensor mask;    // T x 1, entries 0 or 1
};

// m_t ~ Bernoulli(p_keep); m_t = 0 zeroes row t.
inline Tensor draw_timestamp_mask(std::size_t T, RandomStream& stream, double p_keep) {
  return draw(stream, Distribution::bernoulli, Shape{T, 1}, p_keep);
}

inline MaskedLatent timestamp_mask(const Tensor& latent, RandomStream& stream, double p_keep) {
  require(latent.size() > 0, "timestamp_mask: empty latent");
  MaskedLatent out{latent, draw_timestamp_mask(latent.rows(), stream, p_keep)};
  const std::size_t K = latent.cols();
  for (std::size_t t = 0; t < latent.rows(); ++t)
    if (out.mask[t] == 0.0)
      for (std::size_t c = 0; c < K; ++c) out.latent.at(t, c) = 0.0;
  return out;
}

}  // namespace msf
