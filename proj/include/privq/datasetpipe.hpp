#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "privq/core.hpp"
#include "privq/llm_client.hpp"

namespace privq {

struct SourceDocument {
  std::string id;
  std::string text;
  std::string provenance;

  bool operator==(const SourceDocument&) const = default;
};

struct QAPair {
  std::string question;
  std::string answer;
  std::string source_id;
  std::optional<double> judge_score;

  bool operator==(const QAPair&) const = default;
};

void to_json(Json& j, const SourceDocument& v);
void from_json(const Json& j, SourceDocument& v);
void to_json(Json& j, const QAPair& v);
void from_json(const Json& j, QAPair& v);

std::string render_qa_prompt(const SourceDocument& doc, int pairs_per_doc);

/// "Q: ... / A: ..." blocks in order; tolerates numbering and "Question:"/"Answer:".
std::vector<std::pair<std::string, std::string>> parse_qa_blocks(std::string_view completion);

/// At most pairs_per_doc pairs; a short parse logs a warning.
std::vector<QAPair> generate_qa(LlmClient& client, const SourceDocument& doc,
                                const EndpointSpec& generator, int pairs_per_doc,
                                const DecodingParams& decoding = greedy(1024));

std::string render_judge_prompt(const QAPair& pair);

/// Number after "score", else the first number in the text.
std::optional<double> parse_score(std::string_view completion);

/// Judge score clamped to [0, 5]; one retry, then kUnparseableScore.
double judge_score(LlmClient& client, const QAPair& pair, const EndpointSpec& judge);

/// Keeps judge_score > score_threshold, then drops questions with rouge_l
/// F1 >= dup_threshold against an already-kept question. Input order is kept.
std::vector<QAPair> filter_and_dedup(std::span<const QAPair> pairs, double score_threshold = 4.0,
                                     double dup_threshold = 0.9);

struct Split {
  std::vector<QAPair> train;
  std::vector<QAPair> test;
};

/// Seeded shuffle; the train side gets round(ratio * size) pairs.
Split split(std::span<const QAPair> pairs, double ratio, std::uint64_t seed);

struct DatasetStats {
  std::size_t total = 0;
  std::size_t train = 0;
  std::size_t test = 0;
  double avg_question_words = 0.0;
  double avg_answer_words = 0.0;
};

DatasetStats compute_stats(const Split& s);
void to_json(Json& j, const DatasetStats& v);

/// Training-ready query records; ids are "<source_id>-<n>".
std::vector<SensitiveQuery> to_queries(std::span<const QAPair> pairs, DomainTag tag);

struct PipelineOptions {
  int pairs_per_doc = 3;
  double score_threshold = 4.0;
  double dup_threshold = 0.9;
  double split_ratio = 0.8;
  int workers = 4;
  DomainTag domain = DomainTag::kOther;
};

struct PipelineResult {
  std::vector<QAPair> scored;
  std::vector<QAPair> kept;
  Split parts;
  DatasetStats stats;
};

PipelineResult build_dataset(LlmClient& client, std::span<const SourceDocument> docs,
                             const EndpointSpec& generator, const EndpointSpec& judge,
                             const PipelineOptions& options, std::uint64_t seed);

}  // namespace privq
