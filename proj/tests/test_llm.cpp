#include <doctest.h>

#include <atomic>
#include <functional>
#include <thread>

#include "comca/diagnostics.hpp"
#include "comca/llm.hpp"
#include "test_util.hpp"

// after Eigen: resolv.h, pulled in here, defines _res
#include <httplib.h>

using namespace comca;

namespace {

struct Request {
  std::string attribute;
  std::vector<std::string> categories;
};

// Pulls the attribute and numbered category list back out of a rendered prompt.
Request parse_prompt(const std::string& prompt) {
  const std::string head = "is the following:\n";
  const std::string tail = "\n\nThe attribute is: ";
  const auto b = prompt.find(head) + head.size();
  const auto e = prompt.find(tail);
  Request r;
  std::istringstream list(prompt.substr(b, e - b));
  for (std::string line; std::getline(list, line);) r.categories.push_back(line.substr(line.find(". ") + 2));
  r.attribute = prompt.substr(e + tail.size());
  r.attribute.pop_back();  // trailing '.'
  return r;
}

class MockClient : public LlmClient {
 public:
  using Responder = std::function<std::string(const Request&, std::size_t call)>;
  explicit MockClient(Responder r) : respond_(std::move(r)) {}
  std::string complete(const std::string& prompt) override {
    requests.push_back(parse_prompt(prompt));
    return respond_(requests.back(), requests.size() - 1);
  }
  std::string model_id() const override { return "mock"; }
  std::vector<Request> requests;

 private:
  Responder respond_;
};

std::string answer(const Request& r, const std::function<double(const std::string&)>& score) {
  std::string out;
  for (std::size_t i = 0; i < r.categories.size(); ++i)
    out += std::to_string(i + 1) + ". " + r.categories[i] + ": " + std::to_string(score(r.categories[i])) + "\n";
  return out;
}

Vocabulary make_vocab(std::vector<std::string> attrs, std::vector<std::string> objects) {
  Vocabulary v;
  for (auto& a : attrs) v.attributes.push_back({a, PromptType::is, {}, Bucket::unknown});
  v.objects = std::move(objects);
  return v;
}

}  // namespace

TEST_CASE("prompt rendering") {
  const std::vector<std::string> cats{"car", "apple"};
  const auto p = render_compatibility_prompt(kCompatibilityPromptTemplate, "red", cats);
  CHECK(p.find("{") == std::string::npos);
  CHECK(p.find("There are 2 classes (categories).") != std::string::npos);
  CHECK(p.find("is the following:\n1. car\n2. apple\n") != std::string::npos);
  CHECK(p.substr(p.size() - 22) == "The attribute is: red.");
  CHECK(render_compatibility_prompt("{attribute}:{count_categories}:{categories}", "wet", cats) ==
        "wet:2:1. car\n2. apple");
}

TEST_CASE("parse_score_lines") {
  auto p = parse_score_lines("1. car: 9\n2. apple: 2");
  REQUIRE(p.size() == 2);
  CHECK(*p[0].index == 1);
  CHECK(p[0].category == "car");
  CHECK(p[0].score == 9);
  CHECK(p[1].category == "apple");
  CHECK(p[1].score == 2);

  p = parse_score_lines("Sure!\n- traffic light: 7.5\r\n3) dog : 10.\nbanana: 11\n4. x: -1\n");
  REQUIRE(p.size() == 2);
  CHECK(!p[0].index);
  CHECK(p[0].category == "traffic light");
  CHECK(p[0].score == 7.5);
  CHECK(*p[1].index == 3);
  CHECK(p[1].score == 10);
}

TEST_CASE("llm_score_pairs with a mocked client") {
  const auto vocab = make_vocab({"red"}, {"car", "apple"});
  MockClient client([](const Request&, std::size_t) { return std::string("1. car: 9\n2. apple: 2"); });
  ScoreCache cache;
  const auto r = llm_score_pairs(vocab, &client, cache, {}, "mock");
  CHECK(r.phi_llm == (RowMatrixd(1, 2) << 9, 2).finished());
  CHECK(r.requests == 1);
  CHECK(client.requests[0].attribute == "red");
}

TEST_CASE("objects are batched") {
  std::vector<std::string> objects;
  for (int i = 0; i < 250; ++i) objects.push_back("obj" + std::to_string(i));
  const auto vocab = make_vocab({"red"}, objects);
  auto score = [](const std::string& c) { return static_cast<double>(std::stoi(c.substr(3)) % 11); };
  MockClient client([&](const Request& r, std::size_t) { return answer(r, score); });
  ScoreCache cache;
  const auto r = llm_score_pairs(vocab, &client, cache, {}, "mock");
  CHECK(client.requests.size() == 3);
  CHECK(client.requests[0].categories.size() == 100);
  CHECK(client.requests[2].categories.size() == 50);
  for (int i = 0; i < 250; ++i) CHECK(r.phi_llm(0, i) == i % 11);

  // chunk boundaries do not change results
  MockClient client7([&](const Request& q, std::size_t) { return answer(q, score); });
  ScoreCache cache7;
  PromptConfig cfg;
  cfg.batch_size = 7;
  CHECK(llm_score_pairs(vocab, &client7, cache7, cfg, "mock").phi_llm == r.phi_llm);
}

TEST_CASE("score cache replay makes no calls") {
  test::TempDir dir;
  const auto path = dir.path / "scores.jsonl";
  const auto vocab = make_vocab({"red", "wet"}, {"car", "dog", "apple"});
  RowMatrixd first;
  {
    MockClient client([](const Request& r, std::size_t) {
      return answer(r, [&](const std::string& c) { return r.attribute == "red" ? c.size() : 10.0 - c.size(); });
    });
    ScoreCache cache(path);
    first = llm_score_pairs(vocab, &client, cache, {}, "mock").phi_llm;
    CHECK(client.requests.size() == 2);
  }
  ScoreCache cache(path);
  CHECK(cache.size() == 6);
  const auto replay = llm_score_pairs(vocab, nullptr, cache, {}, "mock");
  CHECK(replay.phi_llm == first);
  CHECK(replay.requests == 0);
  CHECK(replay.cache_hits == 6);

  // a different model or prompt does not hit the cache
  CHECK_THROWS_AS(llm_score_pairs(vocab, nullptr, cache, {}, "other"), Error);
  PromptConfig changed;
  changed.prompt_template += " ";
  CHECK_THROWS_AS(llm_score_pairs(vocab, nullptr, cache, changed, "mock"), Error);
}

TEST_CASE("score cache is last-write-wins") {
  test::TempDir dir;
  const auto path = dir.path / "scores.jsonl";
  {
    ScoreCache c(path);
    c.store("red", "car", "m", "h", 3);
    c.store("red", "car", "m", "h", 8);
  }
  ScoreCache c(path);
  CHECK(c.size() == 1);
  CHECK(*c.lookup("red", "car", "m", "h") == 8);
  const auto line = test::read_file(path).substr(0, test::read_file(path).find('\n'));
  const auto j = nlohmann::json::parse(line);
  for (const char* key : {"attribute", "object", "model", "prompt_hash", "score"}) CHECK(j.contains(key));
}

TEST_CASE("repair query and fallback") {
  const auto vocab = make_vocab({"red"}, {"car", "dog", "apple"});
  SUBCASE("repair fills the gap") {
    MockClient client([](const Request& r, std::size_t call) {
      if (call == 0) return std::string("1. car: 4\n");
      return answer(r, [](const std::string& c) { return c == "dog" ? 6.0 : 1.0; });
    });
    ScoreCache cache;
    const auto r = llm_score_pairs(vocab, &client, cache, {}, "mock");
    CHECK(r.phi_llm == (RowMatrixd(1, 3) << 4, 6, 1).finished());
    CHECK(client.requests.size() == 2);
    CHECK(client.requests[1].categories == std::vector<std::string>{"dog", "apple"});
    CHECK(r.fallbacks == 0);
  }
  SUBCASE("fallback after the repair fails") {
    MockClient client([](const Request&, std::size_t) { return std::string("1. car: 4\n"); });
    ScoreCache cache;
    WarningCapture warnings;
    const auto r = llm_score_pairs(vocab, &client, cache, {}, "mock");
    CHECK(r.phi_llm == (RowMatrixd(1, 3) << 4, 5, 5).finished());
    CHECK(r.fallbacks == 2);
    CHECK(warnings.count() >= 2);
    CHECK(cache.size() == 1);  // fallbacks are not persisted
  }
  SUBCASE("strict mode") {
    PromptConfig strict;
    strict.allow_fallback = false;
    MockClient silent([](const Request&, std::size_t) { return std::string("1. car: 4\n"); });
    ScoreCache c1;
    try {
      llm_score_pairs(vocab, &silent, c1, strict, "mock");
      FAIL("expected MissingScore");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingScore);
    }
    MockClient noisy([](const Request& r, std::size_t) {
      return answer(r, [](const std::string&) { return 3.0; }) + "zebra: 2\n";
    });
    ScoreCache c2;
    try {
      llm_score_pairs(vocab, &noisy, c2, strict, "mock");
      FAIL("expected LlmParse");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::LlmParse);
    }
  }
}

TEST_CASE("ChatCompletionsClient against a local server") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth, seen_model;
  double seen_temperature = -1;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 500;
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    const auto body = nlohmann::json::parse(req.body);
    seen_model = body["model"];
    seen_temperature = body["temperature"];
    const std::string prompt = body["messages"][0]["content"];
    nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "1. car: 7"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/down", [&](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("COMCA_TEST_KEY", "secret", 1);
  LlmSettings s;
  s.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  s.model = "local-model";
  s.initial_backoff = std::chrono::milliseconds(1);
  s.api_key_env = "COMCA_TEST_KEY";
  ChatCompletionsClient client(s);
  CHECK(client.complete("hello") == "1. car: 7");
  CHECK(hits == 2);
  CHECK(seen_auth == "Bearer secret");
  CHECK(seen_model == "local-model");
  CHECK(seen_temperature == 0.0);

  s.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/down";
  s.retries = 2;
  ChatCompletionsClient down(s);
  try {
    down.complete("x");
    FAIL("expected LlmTransport");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LlmTransport);
    CHECK(e.category() == ErrorCategory::network);
  }

  server.stop();
  t.join();

  CHECK_THROWS_AS(ChatCompletionsClient(LlmSettings{.endpoint = "not a url"}), Error);
}
