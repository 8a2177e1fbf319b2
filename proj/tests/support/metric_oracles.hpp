#pragma once

// Brute-force reference implementations for metric tests. ASCII inputs only.

#include <cmath>
#include <string>
#include <vector>

#include "distillkit/numerics/rng.hpp"

namespace distillkit::testing {

// Counts matched n-grams by pairing each hypothesis occurrence with an unused
// equal reference occurrence.
inline long paired_matches(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  std::vector<bool> used(ref.size(), false);
  long m = 0;
  for (const auto& h : hyp) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && ref[j] == h) {
        used[j] = true;
        ++m;
        break;
      }
    }
  }
  return m;
}

inline std::vector<std::string> enumerate_ngrams(const std::vector<std::string>& units, int n) {
  std::vector<std::string> out;
  for (int i = 0; i + n <= static_cast<int>(units.size()); ++i) {
    std::string g;
    for (int k = 0; k < n; ++k) g += units[static_cast<std::size_t>(i + k)] + '\x1f';
    out.push_back(g);
  }
  return out;
}

// chrF++ over a corpus: per-order counts summed over sentences, F2 averaged
// over orders present on both sides.
inline double brute_force_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  std::vector<long> H(8, 0), R(8, 0), M(8, 0);
  auto chars = [](const std::string& s) {
    std::vector<std::string> out;
    for (char c : s)
      if (c != ' ') out.emplace_back(1, c);
    return out;
  };
  auto words = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ' ') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  };
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    for (int o = 0; o < 8; ++o) {
      const bool is_char = o < 6;
      const int n = is_char ? o + 1 : o - 5;
      const auto h = enumerate_ngrams(is_char ? chars(hyps[i]) : words(hyps[i]), n);
      const auto r = enumerate_ngrams(is_char ? chars(refs[i]) : words(refs[i]), n);
      H[o] += static_cast<long>(h.size());
      R[o] += static_cast<long>(r.size());
      M[o] += paired_matches(h, r);
    }
  }
  double sum = 0.0;
  int effective = 0;
  for (int o = 0; o < 8; ++o) {
    if (H[o] == 0 || R[o] == 0) continue;
    ++effective;
    const double p = static_cast<double>(M[o]) / H[o], r = static_cast<double>(M[o]) / R[o];
    if (p + r > 0) sum += 5.0 * p * r / (4.0 * p + r);
  }
  return effective ? 100.0 * sum / effective : 0.0;
}

// Random string of length [0, max_len] over a small alphabet with spaces;
// `nonblank` forces at least one non-space character.
inline std::string random_text(numerics::Rng& rng, int max_len, bool nonblank) {
  static const std::string alphabet = "abc ";
  for (;;) {
    const int len = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_len + 1)));
    std::string s;
    for (int i = 0; i < len; ++i) s += alphabet[rng.uniform_int(alphabet.size())];
    if (!nonblank || s.find_first_not_of(' ') != std::string::npos) return s;
  }
}

}  // namespace distillkit::testing
