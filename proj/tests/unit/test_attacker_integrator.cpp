#include <doctest.h>

#include <random>
#include <set>

#include "privq/attacker.hpp"
#include "privq/error.hpp"
#include "privq/integrator.hpp"
#include "privq/mock_backend.hpp"
#include "privq/textmetrics.hpp"

using namespace privq;

namespace {

EndpointSpec endpoint(const std::string& id, Trust trust = Trust::kTrusted) {
  EndpointSpec ep;
  ep.id = id;
  ep.base_url = "mock://" + id;
  ep.trust = trust;
  ep.model_name = "m";
  ep.max_concurrency = 4;
  ep.requests_per_second = 1e6;
  return ep;
}

SubQueryGroup group_of(std::vector<std::string> texts, const std::string& qid = "q1", int k = 0) {
  SubQueryGroup g;
  g.query_id = qid;
  g.candidate_index = k;
  for (std::size_t i = 0; i < texts.size(); ++i) g.subqueries.push_back({static_cast<int>(i), texts[i]});
  return g;
}

struct Fixture {
  std::shared_ptr<MockBackend> backend = std::make_shared<MockBackend>();
  LlmClient client{std::make_shared<MockTransport>(backend)};
};

}  // namespace

TEST_CASE("serialize_group") {
  CHECK(serialize_group(group_of({"a", "b"})) == "Observed sub-queries:\n1. a\n2. b");
}

TEST_CASE("serialize_group is injective and prefix-stable") {
  std::mt19937_64 rng(100);
  std::set<std::string> seen;
  std::vector<SubQueryGroup> groups;
  while (groups.size() < 100) {
    std::vector<std::string> texts;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) texts.push_back("w" + std::to_string(rng() % 6));
    auto g = group_of(texts);
    bool dup = false;
    for (const auto& h : groups) dup = dup || h.subqueries == g.subqueries;
    if (!dup) groups.push_back(g);
  }
  for (const auto& g : groups) CHECK(seen.insert(serialize_group(g)).second);

  auto g = group_of({"x", "y"});
  const auto before = serialize_group(g);
  g.subqueries.push_back({2, "z"});
  const auto after = serialize_group(g);
  CHECK(after.substr(0, before.size()) == before);
}

TEST_CASE("reconstruction uses greedy decoding and sub-queries only") {
  Fixture f;
  const auto g = group_of({"what is il-6", "how do t cells respond"});
  const auto att = endpoint("att");
  const auto q1 = reconstruct(f.client, g, att);
  CHECK(q1 == "MOCK[m]:" + serialize_group(g));
  AttackOptions fresh;
  fresh.checkpoint_digest = "other";
  CHECK(reconstruct(f.client, g, att, fresh) == q1);
  const auto calls = f.backend->captured_for("att");
  REQUIRE(calls.size() == 2);
  const Json body = Json::parse(calls[0].body);
  CHECK(body["temperature"] == 0.0);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][0]["content"] == std::string(kAttackerInstruction));
  CHECK(body["messages"][1]["content"] == serialize_group(g));

  // The echo contains the serialized group, so leakage against a disjoint
  // query is zero; a verbatim reconstruction leaks fully.
  const SimBackend rl;
  CHECK(leakage_score("zebra quantum violin", q1, rl) == 0.0);
  f.backend->set_chat_responder("att", [](const MockChatCall&) {
    return MockReply::ok("Does IL-6 drive resistance?");
  });
  AttackOptions salted;
  salted.checkpoint_digest = "ckpt-1";
  const auto verbatim = reconstruct(f.client, g, att, salted);
  CHECK(leakage_score("Does IL-6 drive resistance?", verbatim, rl) == 1.0);
}

TEST_CASE("emit_sft_samples") {
  std::map<std::string, SensitiveQuery> queries{
      {"q1", {"q1", "First query text?", DomainTag::kOther, std::nullopt}},
      {"q2", {"q2", "Second query text?", DomainTag::kLegal, std::nullopt}}};
  std::vector<SubQueryGroup> groups;
  for (const char* id : {"q1", "q2"}) {
    for (int k = 0; k < 4; ++k) groups.push_back(group_of({"a" + std::to_string(k), "b"}, id, k));
  }
  const auto samples = emit_sft_samples(groups, queries);
  REQUIRE(samples.size() == 8);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].input == serialize_group(groups[i]));
    CHECK(samples[i].target == queries.at(groups[i].query_id).text);
    CHECK(samples[i].candidate_index == groups[i].candidate_index);
  }
  groups.push_back(group_of({"x"}, "missing"));
  try {
    emit_sft_samples(groups, queries);
    FAIL("expected UnresolvedQueryId");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnresolvedQueryId);
  }
}

TEST_CASE("integration prompt template") {
  IntegrationRequest req;
  req.query = {"q", "What drives X?", DomainTag::kOther, std::nullopt};
  req.group = group_of({"s one", "s two"});
  req.responses = {{0, "answer one", "ext", 0, false}, {1, "answer two", "ext", 0, false}};
  const std::string expected =
      "QUESTION:\nWhat drives X?\n\nFINDINGS:\n[1] Q: s one\nA: answer one\n[2] Q: s two\nA: answer two\n\n"
      "Answer the QUESTION directly and concisely.";
  CHECK(render_integration_prompt(req, 512) == expected);
  const auto msgs = integration_messages(req, 512);
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0].content ==
        "You are a trusted assistant. Use the following external findings only as reference knowledge.");

  Fixture f;
  CHECK(integrate(f.client, req, endpoint("loc"), DecodingParams{}) == "MOCK[m]:" + expected);
  CHECK(render_integration_prompt(req, 512) == render_integration_prompt(req, 512));
}

TEST_CASE("integration truncates responses on a UTF-8 boundary") {
  IntegrationRequest req;
  req.query = {"q", "Q?", DomainTag::kOther, std::nullopt};
  req.group = group_of({"s"});
  req.responses = {{0, "abcdé" + std::string(10, 'z'), "ext", 0, false}};
  // Each response is capped at max_tokens*4 bytes.
  CHECK(render_integration_prompt(req, 1).find("A: abcd\n") != std::string::npos);
  req.responses[0].text = "abcdefg\xC3\xA9z";  // é occupies bytes 7..8
  CHECK(render_integration_prompt(req, 2).find("A: abcdefg\n") != std::string::npos);
}

TEST_CASE("integration preconditions") {
  Fixture f;
  IntegrationRequest req;
  req.query = {"q", "Q?", DomainTag::kOther, std::nullopt};
  req.group = group_of({"a", "b", "c"});
  req.responses = {{0, "x", "ext", 0, false}, {1, "y", "ext", 0, false}};
  try {
    integrate(f.client, req, endpoint("loc"), DecodingParams{});
    FAIL("expected a coverage error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidArgument);
  }
  req.responses.push_back({2, "z", "ext", 0, false});
  try {
    integrate(f.client, req, endpoint("ext", Trust::kUntrusted), DecodingParams{});
    FAIL("expected TrustViolation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTrustViolation);
  }
  CHECK(f.backend->request_count() == 0);
}
