#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "upet/core/tensor.hpp"

namespace upet {

using Rng = std::mt19937_64;

/// Generator seeded from several integers through std::seed_seq, so that
/// streams keyed by (seed, subject, session) are independent of each other.
inline Rng make_rng(std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  for (std::uint64_t k : keys) {
    words.push_back(static_cast<std::uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  std::normal_distribution<double> dist(mean, stddev);
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
}

}  // namespace upet
