#include "privq/datasetpipe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <regex>
#include <sstream>

#include "privq/error.hpp"
#include "privq/log.hpp"
#include "privq/parallel.hpp"
#include "privq/rng.hpp"
#include "privq/textmetrics.hpp"

namespace privq {

void to_json(Json& j, const SourceDocument& v) {
  j = Json{{"id", v.id}, {"text", v.text}, {"provenance", v.provenance}};
}

void from_json(const Json& j, SourceDocument& v) {
  v.id = j.at("id").get<std::string>();
  v.text = j.at("text").get<std::string>();
  v.provenance = j.value("provenance", std::string());
}

void to_json(Json& j, const QAPair& v) {
  j = Json{{"question", v.question}, {"answer", v.answer}, {"source_id", v.source_id}};
  j["judge_score"] = v.judge_score ? Json(*v.judge_score) : Json(nullptr);
}

void from_json(const Json& j, QAPair& v) {
  v.question = j.at("question").get<std::string>();
  v.answer = j.at("answer").get<std::string>();
  v.source_id = j.value("source_id", std::string());
  v.judge_score.reset();
  if (j.contains("judge_score") && !j["judge_score"].is_null()) {
    v.judge_score = j["judge_score"].get<double>();
  }
}

std::string render_qa_prompt(const SourceDocument& doc, int pairs_per_doc) {
  return "Read the following document and write " + std::to_string(pairs_per_doc) +
         " question-answer pairs that a domain expert could answer from it. Each question "
         "must be self-contained and each answer must be supported by the document. Format "
         "every pair as a line \"Q: <question>\" followed by a line \"A: <answer>\", with a "
         "blank line between pairs.\n\nDOCUMENT:\n" + doc.text;
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_qa_blocks(std::string_view completion) {
  static const std::regex kQ(R"(^\s*(?:\d+[.)]\s*)?(?:\*\*)?(?:q\d*|question\s*\d*)(?:\*\*)?\s*[:.]\s*(.*)$)",
                             std::regex::icase);
  static const std::regex kA(R"(^\s*(?:\*\*)?(?:a\d*|answer\s*\d*)(?:\*\*)?\s*[:.]\s*(.*)$)",
                             std::regex::icase);
  std::vector<std::pair<std::string, std::string>> out;
  std::string question, answer;
  enum class State { kIdle, kQuestion, kAnswer } state = State::kIdle;
  auto flush = [&] {
    question = trim(question);
    answer = trim(answer);
    if (!question.empty() && !answer.empty()) out.emplace_back(question, answer);
    question.clear();
    answer.clear();
    state = State::kIdle;
  };

  std::istringstream in{std::string(completion)};
  std::string line;
  std::smatch m;
  while (std::getline(in, line)) {
    if (std::regex_match(line, m, kQ)) {
      flush();
      question = m[1].str();
      state = State::kQuestion;
    } else if (state != State::kIdle && std::regex_match(line, m, kA)) {
      answer = m[1].str();
      state = State::kAnswer;
    } else if (trim(line).empty()) {
      if (state == State::kAnswer) flush();
    } else if (state == State::kQuestion) {
      question += " " + trim(line);
    } else if (state == State::kAnswer) {
      answer += " " + trim(line);
    }
  }
  flush();
  return out;
}

std::vector<QAPair> generate_qa(LlmClient& client, const SourceDocument& doc,
                                const EndpointSpec& generator, int pairs_per_doc,
                                const DecodingParams& decoding) {
  if (pairs_per_doc < 1) throw Error(ErrorCode::kInvalidArgument, "pairs_per_doc must be >= 1");
  if (trim(doc.text).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "document '" + doc.id + "' has empty text");
  }
  ChatRequest req;
  req.messages = {{Role::kUser, render_qa_prompt(doc, pairs_per_doc)}};
  req.decoding = decoding;
  const std::string completion = client.chat(generator, req).text;

  std::vector<QAPair> pairs;
  for (auto& [q, a] : parse_qa_blocks(completion)) {
    if (static_cast<int>(pairs.size()) == pairs_per_doc) break;
    pairs.push_back({std::move(q), std::move(a), doc.id, std::nullopt});
  }
  if (static_cast<int>(pairs.size()) < pairs_per_doc) {
    log_warning("document '" + doc.id + "': parsed " + std::to_string(pairs.size()) + " of " +
                std::to_string(pairs_per_doc) + " question-answer pairs");
  }
  return pairs;
}

std::string render_judge_prompt(const QAPair& pair) {
  return "Rate the following question-answer pair on a scale from 0 to 5. A 5 means the "
         "question is clear, specific and answerable by a domain expert, and the answer is "
         "correct, complete and concise. A 0 means the pair is unusable. Reply with a single "
         "line \"Score: <number>\".\n\nQUESTION:\n" + pair.question + "\n\nANSWER:\n" + pair.answer;
}

std::optional<double> parse_score(std::string_view completion) {
  static const std::regex kLabelled(R"(score[^0-9\-+]{0,12}([-+]?\d+(?:\.\d+)?))", std::regex::icase);
  static const std::regex kAny(R"([-+]?\d+(?:\.\d+)?)");
  const std::string text(completion);
  std::smatch m;
  if (std::regex_search(text, m, kLabelled)) return std::stod(m[1].str());
  if (std::regex_search(text, m, kAny)) return std::stod(m[0].str());
  return std::nullopt;
}

double judge_score(LlmClient& client, const QAPair& pair, const EndpointSpec& judge) {
  ChatRequest req;
  req.messages = {{Role::kUser, render_judge_prompt(pair)}};
  req.decoding = greedy(32);
  for (int attempt = 0; attempt < 2; ++attempt) {
    // The retry must not be served from the cache entry of the first reply.
    req.cache_salt = attempt == 0 ? std::string() : "retry-" + std::to_string(attempt);
    const auto score = parse_score(client.chat(judge, req).text);
    if (score && std::isfinite(*score)) return std::clamp(*score, 0.0, 5.0);
  }
  throw Error(ErrorCode::kUnparseableScore,
              "judge reply has no score for question: " + pair.question.substr(0, 80));
}

std::vector<QAPair> filter_and_dedup(std::span<const QAPair> pairs, double score_threshold,
                                     double dup_threshold) {
  std::vector<QAPair> kept;
  for (const auto& p : pairs) {
    if (!p.judge_score) {
      throw Error(ErrorCode::kInvalidArgument, "pair from '" + p.source_id + "' is not scored");
    }
    if (!(*p.judge_score > score_threshold)) continue;
    const bool dup = std::any_of(kept.begin(), kept.end(), [&](const QAPair& k) {
      return rouge_l(p.question, k.question).f1 >= dup_threshold;
    });
    if (!dup) kept.push_back(p);
  }
  return kept;
}

Split split(std::span<const QAPair> pairs, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "split ratio must be in (0, 1)");
  }
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  seeded_shuffle(order, rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(pairs.size())));
  Split s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? s.train : s.test).push_back(pairs[order[i]]);
  }
  return s;
}

namespace {

std::size_t word_count(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::size_t n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

}  // namespace

DatasetStats compute_stats(const Split& s) {
  DatasetStats st;
  st.train = s.train.size();
  st.test = s.test.size();
  st.total = st.train + st.test;
  if (st.total == 0) return st;
  std::size_t qw = 0, aw = 0;
  for (const auto* part : {&s.train, &s.test}) {
    for (const auto& p : *part) {
      qw += word_count(p.question);
      aw += word_count(p.answer);
    }
  }
  st.avg_question_words = static_cast<double>(qw) / static_cast<double>(st.total);
  st.avg_answer_words = static_cast<double>(aw) / static_cast<double>(st.total);
  return st;
}

void to_json(Json& j, const DatasetStats& v) {
  j = Json{{"total", v.total},
           {"train", v.train},
           {"test", v.test},
           {"avg_question_words", v.avg_question_words},
           {"avg_answer_words", v.avg_answer_words}};
}

std::vector<SensitiveQuery> to_queries(std::span<const QAPair> pairs, DomainTag tag) {
  std::map<std::string, int> seen;
  std::vector<SensitiveQuery> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const int n = seen[p.source_id]++;
    SensitiveQuery q;
    q.id = (p.source_id.empty() ? std::string("qa") : p.source_id) + "-" + std::to_string(n);
    q.text = p.question;
    q.domain_tag = tag;
    q.reference_answer = p.answer;
    out.push_back(std::move(q));
  }
  return out;
}

PipelineResult build_dataset(LlmClient& client, std::span<const SourceDocument> docs,
                             const EndpointSpec& generator, const EndpointSpec& judge,
                             const PipelineOptions& options, std::uint64_t seed) {
  const auto workers = static_cast<std::size_t>(std::max(1, options.workers));
  std::vector<std::vector<QAPair>> per_doc(docs.size());
  parallel_for(docs.size(), workers, [&](std::size_t i) {
    per_doc[i] = generate_qa(client, docs[i], generator, options.pairs_per_doc);
    for (auto& p : per_doc[i]) p.judge_score = judge_score(client, p, judge);
  });

  PipelineResult r;
  for (auto& v : per_doc) {
    for (auto& p : v) r.scored.push_back(std::move(p));
  }
  r.kept = filter_and_dedup(r.scored, options.score_threshold, options.dup_threshold);
  r.parts = split(r.kept, options.split_ratio, seed);
  r.stats = compute_stats(r.parts);
  return r;
}

}  // namespace privq
