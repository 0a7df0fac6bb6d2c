#include "privq/textmetrics.hpp"

#include <cmath>

#include "privq/error.hpp"
#include "privq/unicode.hpp"

namespace privq {

MetricScore score_from_counts(std::size_t overlap, std::size_t cand_total, std::size_t ref_total) {
  MetricScore s;
  if (cand_total > 0) s.precision = static_cast<double>(overlap) / static_cast<double>(cand_total);
  if (ref_total > 0) s.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  if (overlap > 0) {
    s.f1 = 2.0 * static_cast<double>(overlap) / static_cast<double>(cand_total + ref_total);
  }
  return s;
}

std::vector<std::string> tokenize(std::string_view text) {
  const std::u32string cps = unicode::decode(text);
  std::vector<std::string> tokens;
  std::string cur;
  const std::size_t n = cps.size();
  for (std::size_t i = 0; i < n; ++i) {
    const char32_t cp = cps[i];
    if (unicode::is_word(cp)) {
      unicode::append_utf8(cur, unicode::to_lower(cp));
    } else if (cp == U'-' && !cur.empty() && i + 1 < n && unicode::is_word(cps[i + 1])) {
      cur.push_back('-');
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

MetricScore rouge_n(std::string_view candidate, std::string_view reference, int n) {
  if (n != 1 && n != 2) {
    throw Error(ErrorCode::kInvalidArgument, "rouge_n supports n in {1, 2}, got " + std::to_string(n));
  }
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  return rouge_n_tokens<std::string>(c, r, static_cast<std::size_t>(n));
}

MetricScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  return rouge_l_tokens<std::string>(c, r);
}

// ---------------------------------------------------------------------------
// METEOR

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::string stem(std::string_view token) {
  std::string t(token);
  if (t.size() > 4 && ends_with(t, "ies")) return t.substr(0, t.size() - 3) + "y";
  if (ends_with(t, "sses")) return t.substr(0, t.size() - 2);
  if (t.size() > 5 && ends_with(t, "ing")) return t.substr(0, t.size() - 3);
  if (t.size() > 4 && ends_with(t, "ed")) return t.substr(0, t.size() - 2);
  if (t.size() > 3 && ends_with(t, "s") && !ends_with(t, "ss") && !ends_with(t, "us") &&
      !ends_with(t, "is")) {
    return t.substr(0, t.size() - 1);
  }
  return t;
}

double meteor_lite(std::string_view candidate, std::string_view reference,
                   const MeteorParams& params) {
  const auto cand = tokenize(candidate);
  const auto ref = tokenize(reference);
  if (cand.empty() && ref.empty()) return 1.0;
  if (cand.empty() || ref.empty()) return 0.0;

  std::vector<int> cand_to_ref(cand.size(), -1);
  std::vector<char> ref_used(ref.size(), 0);

  // Each stage aligns candidate tokens left to right, preferring the
  // reference slot that extends the previous match, then the next slot to
  // the right, then the leftmost free one; this keeps crossings low.
  auto align = [&](auto&& same) {
    int last = -1;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (cand_to_ref[i] >= 0) {
        last = cand_to_ref[i];
        continue;
      }
      int pick = -1;
      if (last + 1 < static_cast<int>(ref.size()) && last >= 0 &&
          !ref_used[static_cast<std::size_t>(last + 1)] &&
          same(cand[i], ref[static_cast<std::size_t>(last + 1)])) {
        pick = last + 1;
      }
      for (std::size_t j = static_cast<std::size_t>(last + 1); pick < 0 && j < ref.size(); ++j) {
        if (!ref_used[j] && same(cand[i], ref[j])) pick = static_cast<int>(j);
      }
      for (std::size_t j = 0; pick < 0 && j < ref.size(); ++j) {
        if (!ref_used[j] && same(cand[i], ref[j])) pick = static_cast<int>(j);
      }
      if (pick >= 0) {
        cand_to_ref[i] = pick;
        ref_used[static_cast<std::size_t>(pick)] = 1;
        last = pick;
      }
    }
  };
  align([](const std::string& a, const std::string& b) { return a == b; });
  align([](const std::string& a, const std::string& b) { return stem(a) == stem(b); });

  std::size_t matches = 0;
  std::size_t chunks = 0;
  int prev_i = -2;
  int prev_j = -2;
  for (std::size_t i = 0; i < cand.size(); ++i) {
    const int j = cand_to_ref[i];
    if (j < 0) continue;
    ++matches;
    if (!(prev_i == static_cast<int>(i) - 1 && prev_j == j - 1)) ++chunks;
    prev_i = static_cast<int>(i);
    prev_j = j;
  }
  if (matches == 0) return 0.0;

  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = p * r / (params.alpha * p + (1.0 - params.alpha) * r);
  const double penalty = params.gamma * std::pow(static_cast<double>(chunks) / m, params.beta);
  return clamp_unit(fmean * (1.0 - penalty));
}

// ---------------------------------------------------------------------------
// Cosine and Sim

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "cosine of vectors with dimensions " +
                                                   std::to_string(a.size()) + " and " +
                                                   std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kZeroVector, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

void SimBackend::validate() const {
  if (mode == SimMode::kEmbeddingCosine) {
    if (!embedding_endpoint) {
      throw Error(ErrorCode::kConfigInvalid, "embedding_cosine sim requires an embedding endpoint");
    }
    if (embedding_endpoint->kind != EndpointKind::kEmbedding) {
      throw Error(ErrorCode::kConfigInvalid,
                  "sim endpoint '" + embedding_endpoint->id + "' is not an embedding endpoint");
    }
  } else if (embedding_endpoint) {
    throw Error(ErrorCode::kConfigInvalid, "rouge_l_f1 sim takes no embedding endpoint");
  }
}

std::string to_string(SimMode mode) {
  return mode == SimMode::kEmbeddingCosine ? "embedding_cosine" : "rouge_l_f1";
}

SimMode sim_mode_from_string(const std::string& s) {
  if (s == "embedding_cosine") return SimMode::kEmbeddingCosine;
  if (s == "rouge_l_f1") return SimMode::kRougeLF1;
  throw Error(ErrorCode::kConfigInvalid, "unknown sim mode '" + s + "'");
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return s.substr(first, last - first + 1);
}

bool is_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

double sim(std::string_view a, std::string_view b, const SimBackend& backend, LlmClient* client,
           std::span<const std::string> forbidden) {
  if (backend.mode == SimMode::kRougeLF1) return clamp_unit(rouge_l(a, b).f1);

  backend.validate();
  if (!client) throw Error(ErrorCode::kInvalidArgument, "embedding sim needs a client");
  const std::string_view ta = trim(a);
  const std::string_view tb = trim(b);
  if (ta == tb) return 1.0;
  const std::string texts[] = {std::string(ta), std::string(tb)};
  const auto vecs = client->embed(*backend.embedding_endpoint, texts, forbidden);
  if (is_zero(vecs[0]) || is_zero(vecs[1])) return 0.0;
  return clamp_unit((cosine_sim(vecs[0], vecs[1]) + 1.0) / 2.0);
}

double quality_score(std::string_view integrated, const std::optional<std::string>& reference,
                     const SimBackend& backend, LlmClient* client,
                     std::span<const std::string> forbidden) {
  if (!reference) throw Error(ErrorCode::kMissingReference, "quality needs a reference answer");
  return sim(integrated, *reference, backend, client, forbidden);
}

double leakage_score(std::string_view original, std::string_view reconstructed,
                     const SimBackend& backend, LlmClient* client,
                     std::span<const std::string> forbidden) {
  return sim(original, reconstructed, backend, client, forbidden);
}

}  // namespace privq
