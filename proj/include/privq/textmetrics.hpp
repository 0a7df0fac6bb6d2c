#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "privq/llm_client.hpp"

namespace privq {

struct MetricScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Scores from an overlap count against candidate and reference totals.
/// F1 is computed as 2*overlap/(cand+ref), which equals 2PR/(P+R) and is
/// exactly symmetric under argument swap.
MetricScore score_from_counts(std::size_t overlap, std::size_t cand_total, std::size_t ref_total);

/// Lowercased word tokens: maximal runs of letters/digits, joined across
/// single internal hyphens ("il-6"). Everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text);

// ---------------------------------------------------------------------------
// Token-level kernels, generic over the token type.
//
// When neither side has an n-gram (both shorter than n) the pair scores 1 if
// the token sequences are equal and 0 otherwise.

template <class Token>
MetricScore rouge_n_tokens(std::span<const Token> cand, std::span<const Token> ref, std::size_t n) {
  const std::size_t nc = cand.size() >= n ? cand.size() - n + 1 : 0;
  const std::size_t nr = ref.size() >= n ? ref.size() - n + 1 : 0;
  if (nc == 0 && nr == 0) {
    const bool same = std::equal(cand.begin(), cand.end(), ref.begin(), ref.end());
    return same ? MetricScore{1.0, 1.0, 1.0} : MetricScore{};
  }
  if (nc == 0 || nr == 0) return {};

  // Sort n-gram start offsets lexicographically, then merge to count the
  // clipped overlap sum(min(count_cand, count_ref)).
  auto less_at = [n](std::span<const Token> a, std::size_t i, std::span<const Token> b,
                     std::size_t j) {
    return std::lexicographical_compare(a.begin() + i, a.begin() + i + n, b.begin() + j,
                                        b.begin() + j + n);
  };
  std::vector<std::size_t> ci(nc), ri(nr);
  for (std::size_t i = 0; i < nc; ++i) ci[i] = i;
  for (std::size_t i = 0; i < nr; ++i) ri[i] = i;
  std::sort(ci.begin(), ci.end(), [&](std::size_t a, std::size_t b) { return less_at(cand, a, cand, b); });
  std::sort(ri.begin(), ri.end(), [&](std::size_t a, std::size_t b) { return less_at(ref, a, ref, b); });

  std::size_t overlap = 0;
  std::size_t a = 0, b = 0;
  while (a < nc && b < nr) {
    if (less_at(cand, ci[a], ref, ri[b])) {
      ++a;
    } else if (less_at(ref, ri[b], cand, ci[a])) {
      ++b;
    } else {
      ++overlap;
      ++a;
      ++b;
    }
  }
  return score_from_counts(overlap, nc, nr);
}

template <class Token>
std::size_t lcs_length(std::span<const Token> a, std::span<const Token> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <class Token>
MetricScore rouge_l_tokens(std::span<const Token> cand, std::span<const Token> ref) {
  if (cand.empty() && ref.empty()) return {1.0, 1.0, 1.0};
  return score_from_counts(lcs_length(cand, ref), cand.size(), ref.size());
}

// ---------------------------------------------------------------------------
// String-level metrics

/// Clipped n-gram overlap; n must be 1 or 2.
MetricScore rouge_n(std::string_view candidate, std::string_view reference, int n);

/// Longest-common-subsequence precision/recall/F1 over tokens.
MetricScore rouge_l(std::string_view candidate, std::string_view reference);

/// Light suffix stemmer used by the second METEOR matching stage.
std::string stem(std::string_view token);

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
};

/// METEOR without synonym matching: exact then stemmed unigram alignment,
/// Fmean = PR/(alpha*P + (1-alpha)*R), penalty = gamma*(chunks/matches)^beta.
double meteor_lite(std::string_view candidate, std::string_view reference,
                   const MeteorParams& params = {});

/// dot(a,b)/(|a||b|), clamped to [-1, 1].
double cosine_sim(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Sim backend

enum class SimMode { kEmbeddingCosine, kRougeLF1 };

struct SimBackend {
  SimMode mode = SimMode::kRougeLF1;
  std::optional<EndpointSpec> embedding_endpoint;

  void validate() const;
};

std::string to_string(SimMode mode);
SimMode sim_mode_from_string(const std::string& s);

/// Similarity in [0,1]. Embedding mode rescales cosine with (x+1)/2;
/// identical strings (after trimming) score exactly 1 without a call, and a
/// text that embeds to the zero vector scores 0 against anything else.
/// `client` is required in embedding mode; `forbidden` is forwarded to it.
double sim(std::string_view a, std::string_view b, const SimBackend& backend,
           LlmClient* client = nullptr, std::span<const std::string> forbidden = {});

/// Sim(integrated, reference); throws kMissingReference without a reference.
double quality_score(std::string_view integrated, const std::optional<std::string>& reference,
                     const SimBackend& backend, LlmClient* client = nullptr,
                     std::span<const std::string> forbidden = {});

/// Sim(original, reconstructed); higher means more of the query leaked.
double leakage_score(std::string_view original, std::string_view reconstructed,
                     const SimBackend& backend, LlmClient* client = nullptr,
                     std::span<const std::string> forbidden = {});

}  // namespace privq
