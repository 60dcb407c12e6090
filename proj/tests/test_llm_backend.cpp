#include <atomic>
#include <fstream>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "moma/errors.h"
#include "moma/llm_backend.h"
#include "synthetic.h"

using namespace moma;

namespace {

std::vector<ChatMessage> convo(const std::string& user) {
  return {{Role::kSystem, "You answer questions."}, {Role::kUser, user}};
}

}  // namespace

TEST(Fingerprint, KnownSha256Vector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Fingerprint, StableAndSeedIndependent) {
  auto m = convo("hello");
  GenParams p = gpt35_profile().defaults;
  auto a = fingerprint(m, p);
  p.seed = 42;
  EXPECT_EQ(fingerprint(m, p), a);
  EXPECT_EQ(a.digest.size(), 64u);

  GenParams hot = p;
  hot.temperature = 0.7;
  EXPECT_NE(fingerprint(m, hot), a);
  GenParams other_model = p;
  other_model.model_name = "llama-3-8b-instruct";
  EXPECT_NE(fingerprint(m, other_model), a);
  EXPECT_NE(fingerprint(convo("hello!"), p), a);
  auto swapped = m;
  swapped[0].role = Role::kUser;
  EXPECT_NE(fingerprint(swapped, p), a);
}

TEST(Profiles, ByName) {
  EXPECT_EQ(profile_by_name("llama").defaults.temperature, 0.01);
  EXPECT_EQ(profile_by_name("gpt").defaults.temperature, 0.0);
  EXPECT_THROW(profile_by_name("mistral"), ConfigError);
}

TEST(Usage, CeilingOfBytesOverFour) {
  auto m = convo("12345");  // 21 + 5 bytes
  auto u = synthesize_usage(m, "abcde");
  EXPECT_EQ(u.prompt_tokens, 7);
  EXPECT_EQ(u.completion_tokens, 2);
  EXPECT_EQ(synthesize_usage({}, "").completion_tokens, 0);
}

TEST(Scripted, FingerprintEntriesServeInOrderThenRepeatLast) {
  GenParams p;
  auto m = convo("q");
  ScriptedBackend b;
  b.add_response(fingerprint(m, p), "first");
  b.add_response(fingerprint(m, p), "second");
  EXPECT_EQ(b.complete(m, p).text, "first");
  EXPECT_EQ(b.complete(m, p).text, "second");
  EXPECT_EQ(b.complete(m, p).text, "second");
  EXPECT_EQ(b.calls(), 3u);
  EXPECT_TRUE(b.deterministic());
}

TEST(Scripted, QueueFallbackInSeqOrderAndScriptMiss) {
  std::vector<ScriptedBackend::Entry> entries(2);
  entries[0].seq = 5;
  entries[0].response = "later";
  entries[1].seq = 1;
  entries[1].response = "sooner";
  ScriptedBackend b(entries);
  GenParams p;
  EXPECT_EQ(b.complete(convo("x"), p).text, "sooner");
  EXPECT_EQ(b.complete(convo("y"), p).text, "later");
  try {
    b.complete(convo("z"), p);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), BackendError::Kind::kScriptMiss);
    EXPECT_FALSE(e.retryable());
  }
}

TEST(Scripted, FileParsingAndErrors) {
  auto dir = moma::testing::fresh_temp_dir("script");
  GenParams p;
  auto m = convo("q");
  {
    std::ofstream out(dir / "s.jsonl");
    out << json{{"fingerprint", fingerprint(m, p).digest}, {"response", "(a) yes"}, {"note", "n"}}.dump() << "\n\n";
    out << R"({"seq": 0, "error": "rate_limited", "status": 429, "retry_after_ms": 30})" << "\n";
  }
  auto b = ScriptedBackend::from_file(dir / "s.jsonl");
  EXPECT_EQ(b.complete(m, p).text, "(a) yes");
  try {
    b.complete(convo("other"), p);
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), BackendError::Kind::kRateLimited);
    EXPECT_EQ(e.retry_after_ms(), 30);
  }
  EXPECT_THROW(ScriptedBackend::parse_line(R"({"response": "x"})"), ConfigError);
  EXPECT_THROW(ScriptedBackend::parse_line(R"({"seq": 1, "error": "boom"})"), ConfigError);
  EXPECT_THROW(ScriptedBackend::parse_line("not json"), ConfigError);
  EXPECT_THROW(ScriptedBackend::from_file(dir / "missing.jsonl"), ConfigError);
}

TEST(Recording, ReplaysIdentically) {
  auto dir = moma::testing::fresh_temp_dir("record");
  FunctionBackend live([](std::span<const ChatMessage> m, const GenParams&) {
    return "echo: " + m.back().content + " \xc3\xa9";
  });
  GenParams p;
  std::vector<Completion> seen;
  {
    RecordingBackend rec(live, dir / "rec.jsonl");
    for (int i = 0; i < 5; ++i) seen.push_back(rec.complete(convo("q" + std::to_string(i)), p));
  }
  auto replay = ScriptedBackend::from_file(dir / "rec.jsonl");
  for (int i = 0; i < 5; ++i) EXPECT_EQ(replay.complete(convo("q" + std::to_string(i)), p), seen[i]);
}

TEST(Retry, ExponentialBackoffWithRetryAfterFloor) {
  RetryPolicy policy;
  policy.base_backoff_ms = 100;
  EXPECT_EQ(backoff_delay_ms(policy, 1, 0), 100);
  EXPECT_EQ(backoff_delay_ms(policy, 2, 0), 200);
  EXPECT_EQ(backoff_delay_ms(policy, 3, 0), 400);
  EXPECT_EQ(backoff_delay_ms(policy, 1, 1500), 1500);
}

TEST(Retry, RetriesTransientThenSucceeds) {
  std::vector<std::int64_t> sleeps;
  RetryPolicy policy{3, 100, 0.0, [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); }};
  int n = 0;
  auto r = with_retry(
      [&]() -> Completion {
        if (++n < 3) throw BackendError(BackendError::Kind::kHttpError, "503", 503);
        return {"ok", {}, 0};
      },
      policy);
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(r.completion.text, "ok");
  EXPECT_EQ(sleeps, (std::vector<std::int64_t>{100, 200}));
}

TEST(Retry, JitterStaysInRange) {
  std::vector<std::int64_t> sleeps;
  RetryPolicy policy{6, 100, 0.2, [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); }};
  EXPECT_THROW(with_retry([]() -> Completion { throw BackendError(BackendError::Kind::kTimeout, "t"); },
                          policy),
               BackendError);
  ASSERT_EQ(sleeps.size(), 5u);
  for (std::size_t i = 0; i < sleeps.size(); ++i) {
    std::int64_t base = 100LL << i;
    EXPECT_GE(sleeps[i], base);
    EXPECT_LE(sleeps[i], base * 12 / 10);
  }
}

TEST(Retry, NonRetryableAndExhaustion) {
  RetryPolicy policy{3, 0, 0.0, [](std::chrono::milliseconds) {}};
  int n = 0;
  try {
    with_retry([&]() -> Completion { ++n; throw BackendError(BackendError::Kind::kHttpError, "400", 400); },
               policy);
  } catch (const BackendError& e) {
    EXPECT_EQ(e.attempts(), 1);
  }
  EXPECT_EQ(n, 1);
  n = 0;
  try {
    with_retry([&]() -> Completion { ++n; throw BackendError(BackendError::Kind::kRateLimited, "429", 429); },
               policy);
  } catch (const BackendError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(n, 3);
  EXPECT_FALSE(BackendError(BackendError::Kind::kMalformedResponse, "m").retryable());
}

TEST(Http, RequestBodyShape) {
  GenParams p = gpt35_profile().defaults;
  p.seed = 7;
  auto body = HttpBackend::build_request_body(convo("hi"), p);
  EXPECT_EQ(body["model"], "gpt-3.5-turbo-0125");
  EXPECT_TRUE(body["temperature"].is_number_integer());
  EXPECT_EQ(body["messages"][1]["role"], "user");
  EXPECT_EQ(body["seed"], 7);
  p.temperature = 0.01;
  EXPECT_DOUBLE_EQ(HttpBackend::build_request_body(convo("hi"), p)["temperature"].get<double>(), 0.01);
}

TEST(Http, ResponseBodyParsing) {
  auto c = HttpBackend::parse_response_body(
      R"j({"choices":[{"message":{"role":"assistant","content":"(b)"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}})j");
  EXPECT_EQ(c.text, "(b)");
  EXPECT_EQ(c.usage.prompt_tokens, 12);
  for (const char* bad : {"{}", "not json", R"({"choices":[]})", R"({"choices":[{"message":{"content":null}}]})",
                          R"({"choices":[{"message":{"content":"x"}}],"usage":{"prompt_tokens":-1}})"}) {
    try {
      HttpBackend::parse_response_body(bad);
      ADD_FAILURE() << bad;
    } catch (const BackendError& e) {
      EXPECT_EQ(e.kind(), BackendError::Kind::kMalformedResponse) << bad;
    }
  }
}

TEST(Http, WireAgainstLocalServer) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    int n = ++hits;
    seen_auth = req.get_header_value("Authorization");
    auto body = json::parse(req.body);
    if (body["messages"][1]["content"] == "limit") {
      res.status = 429;
      res.set_header("Retry-After", "2");
      return;
    }
    if (body["messages"][1]["content"] == "broken") {
      res.status = 500;
      return;
    }
    json reply = {{"choices", {{{"message", {{"content", "reply " + std::to_string(n)}}}}}},
                  {"usage", {{"prompt_tokens", 5}, {"completion_tokens", 2}}}};
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpBackend backend({"http://127.0.0.1:" + std::to_string(port) + "/v1/", "secret", 5000, 2});
  GenParams p;
  auto c = backend.complete(convo("hi"), p);
  EXPECT_EQ(c.text, "reply 1");
  EXPECT_EQ(c.usage.completion_tokens, 2);
  EXPECT_EQ(seen_auth, "Bearer secret");
  try {
    backend.complete(convo("limit"), p);
    ADD_FAILURE();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), BackendError::Kind::kRateLimited);
    EXPECT_EQ(e.retry_after_ms(), 2000);
  }
  try {
    backend.complete(convo("broken"), p);
    ADD_FAILURE();
  } catch (const BackendError& e) {
    EXPECT_EQ(e.kind(), BackendError::Kind::kHttpError);
    EXPECT_TRUE(e.retryable());
  }
  server.stop();
  t.join();

  HttpBackend dead({"http://127.0.0.1:" + std::to_string(port), "", 300, 1});
  try {
    dead.complete(convo("hi"), p);
    ADD_FAILURE();
  } catch (const BackendError& e) {
    EXPECT_TRUE(e.retryable());
  }
}

TEST(Http, ConfigFromEnv) {
  ::unsetenv("MOMA_API_BASE");
  EXPECT_THROW(http_config_from_env(), ConfigError);
  ::setenv("MOMA_API_BASE", "https://example.invalid/v1", 1);
  EXPECT_EQ(http_config_from_env().base_url, "https://example.invalid/v1");
  EXPECT_THROW(HttpBackend({"no-scheme", "", 10, 1}), ConfigError);
}
