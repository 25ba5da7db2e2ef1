#pragma once

// Row-wise float kernels. Every output row is computed independently with a
// fixed accumulation order, so a row's result never depends on which other
// rows share the batch.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace spdec::nn {

/// out = x * W + b for a single row, W stored row-major as [in x out].
inline void linear(std::span<const float> x, const float* weight, const float* bias,
                   std::span<float> out) {
  const std::size_t in = x.size();
  const std::size_t n = out.size();
  std::copy(bias, bias + n, out.begin());
  float* o = out.data();
  for (std::size_t k = 0; k < in; ++k) {
    const float xk = x[k];
    const float* w = weight + k * n;
    for (std::size_t j = 0; j < n; ++j) o[j] += xk * w[j];
  }
}

/// Applies `linear` to each of `rows` consecutive rows.
inline void linear_rows(const float* x, std::size_t rows, std::size_t in, const float* weight,
                        const float* bias, std::size_t out_dim, float* out) {
  for (std::size_t r = 0; r < rows; ++r)
    linear(std::span<const float>(x + r * in, in), weight, bias,
           std::span<float>(out + r * out_dim, out_dim));
}

inline void layer_norm(std::span<float> x, const float* gamma, const float* beta,
                       double eps = 1e-5) {
  double mean = 0.0;
  for (float v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>((x[i] - mean) * inv) * gamma[i] + beta[i];
}

inline void relu(std::span<float> x) {
  for (auto& v : x) v = v > 0.0f ? v : 0.0f;
}

/// In-place softmax over the entries with keep[i] != 0. Masked entries are set
/// to exactly 0 and do not take part in the normalizer. A row with no kept
/// entry becomes all zeros.
inline void masked_softmax(std::span<float> scores, std::span<const std::uint8_t> keep) {
  assert(scores.size() == keep.size());
  float mx = -std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (keep[i]) mx = std::max(mx, scores[i]);
  if (mx == -std::numeric_limits<float>::infinity()) {
    std::fill(scores.begin(), scores.end(), 0.0f);
    return;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (keep[i]) {
      scores[i] = std::exp(scores[i] - mx);
      sum += scores[i];
    } else {
      scores[i] = 0.0f;
    }
  }
  const auto inv = static_cast<float>(1.0 / sum);
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (keep[i]) scores[i] *= inv;
}

/// log-softmax in double precision.
inline std::vector<double> log_softmax(std::span<const float> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> out(logits.size());
  if (mx == -std::numeric_limits<double>::infinity()) {
    std::fill(out.begin(), out.end(), -std::log(static_cast<double>(logits.size())));
    return out;
  }
  double sum = 0.0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

/// Multi-head scaled dot-product attention for a block of queries.
///   q: [nq x d], k/v: [nk x d], keep(i, j) decides whether query i sees key j.
///   out: [nq x d]
template <class KeepFn>
void attention(const float* q, std::size_t nq, const float* k, const float* v, std::size_t nk,
               std::size_t d_model, std::size_t num_heads, KeepFn&& keep_fn, float* out) {
  const std::size_t dh = d_model / num_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<float> scores(nk);
  std::vector<std::uint8_t> keep(nk);
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < nk; ++j) keep[j] = keep_fn(i, j) ? 1 : 0;
    for (std::size_t h = 0; h < num_heads; ++h) {
      const float* qi = q + i * d_model + h * dh;
      for (std::size_t j = 0; j < nk; ++j) {
        if (!keep[j]) {
          scores[j] = 0.0f;
          continue;
        }
        const float* kj = k + j * d_model + h * dh;
        float s = 0.0f;
        for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
        scores[j] = s * scale;
      }
      masked_softmax(scores, keep);
      float* oi = out + i * d_model + h * dh;
      std::fill(oi, oi + dh, 0.0f);
      for (std::size_t j = 0; j < nk; ++j) {
        if (!keep[j]) continue;
        const float w = scores[j];
        const float* vj = v + j * d_model + h * dh;
        for (std::size_t t = 0; t < dh; ++t) oi[t] += w * vj[t];
      }
    }
  }
}

}  // namespace spdec::nn
