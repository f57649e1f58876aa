#include "pch.hpp"

#include <future>

using namespace wiretap;

TEST(Base64, KnownVectors) {
  auto enc = [](const std::string& s) { return base64_encode(std::vector<std::uint8_t>(s.begin(), s.end())); };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("f"), "Zg==");
  EXPECT_EQ(enc("fo"), "Zm8=");
  EXPECT_EQ(enc("foo"), "Zm9v");
  EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
  const auto d = base64_decode("Zm9vYg==");
  EXPECT_EQ(std::string(d.begin(), d.end()), "foob");
}

TEST(Base64, RoundTripAllLengths) {
  Rng rng(1);
  for (int n = 0; n < 40; ++n) {
    std::vector<std::uint8_t> b(n);
    for (auto& v : b) v = static_cast<std::uint8_t>(rng.next_u64());
    EXPECT_EQ(base64_decode(base64_encode(b)), b);
  }
}

TEST(Base64, Malformed) {
  EXPECT_THROW(base64_decode("abc"), Base64Error);
  EXPECT_THROW(base64_decode("ab!d"), Base64Error);
}

TEST(StrictReader, UnknownFieldRejected) {
  const json doc{{"a", 1}, {"b", 2}};
  StrictReader rd(doc);
  rd.integer("a", 0, 5);
  try {
    rd.finish();
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.field(), "b");
  }
}

TEST(StrictReader, NestedPathAndTypes) {
  const json doc{{"p", {{"n", "x"}}}};
  StrictReader rd(doc);
  StrictReader inner = rd.object("p");
  try {
    inner.integer("n", 0, 1);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.field(), "p.n");
  }
}

TEST(WireClient, StampsIdAndVersion) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push(json{{"request_id", "$id"}, {"ok", true}});
  WireClient c(t, "judge");
  const json out = c.call(json{{"task", "assess"}});
  const json req = json::parse(t->requests().at(0));
  EXPECT_EQ(req.at("request_id"), out.at("request_id"));
  EXPECT_EQ(req.at("request_id"), "judge-1");
  EXPECT_EQ(req.at("schema_version"), kSchemaVersion);
}

TEST(WireClient, MismatchedIdIsProtocolError) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push(json{{"request_id", "other-9"}});
  WireClient c(t, "judge");
  try {
    c.call(json::object());
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_EQ(e.field(), "request_id");
  }
}

TEST(WireClient, RetriesTransportFailures) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push_failure();
  t->push_failure();
  t->push(json{{"request_id", "$id"}});
  WireClient c(t, "gen");
  EXPECT_NO_THROW(c.call(json::object()));
  EXPECT_EQ(t->requests().size(), 3u);
}

TEST(WireClient, GivesUpAfterAttempts) {
  auto t = std::make_shared<ScriptedTransport>();
  for (int i = 0; i < 5; ++i) t->push_failure();
  RetryPolicy r;
  r.attempts = 2;
  WireClient c(t, "gen", r);
  EXPECT_THROW(c.call(json::object()), ServiceUnavailable);
  EXPECT_EQ(t->remaining(), 3u);
}

TEST(WireClient, MalformedJsonNotRetried) {
  auto t = std::make_shared<ScriptedTransport>();
  t->push(std::string("{not json"));
  t->push(json{{"request_id", "$id"}});
  WireClient c(t, "judge");
  EXPECT_THROW(c.call(json::object()), ProtocolError);
  EXPECT_EQ(t->remaining(), 1u);
}

TEST(WireClient, InflightCap) {
  std::atomic<int> inflight{0}, peak{0};
  auto t = std::make_shared<FunctionTransport>([&](const std::string& body) {
    const int now = ++inflight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    --inflight;
    return json{{"request_id", json::parse(body).at("request_id")}}.dump();
  });
  WireClient c(t, "judge", {}, 2);
  std::vector<std::future<void>> fs;
  for (int i = 0; i < 8; ++i) fs.push_back(std::async(std::launch::async, [&] { c.call(json::object()); }));
  for (auto& f : fs) f.get();
  EXPECT_LE(peak.load(), 2);
}

TEST(Http, ParseUrl) {
  const ParsedUrl u = parse_url("http://127.0.0.1:8080/v1/judge");
  EXPECT_EQ(u.scheme_host_port, "http://127.0.0.1:8080");
  EXPECT_EQ(u.path, "/v1/judge");
  EXPECT_EQ(parse_url("http://localhost:9").path, "/");
  EXPECT_THROW(parse_url("ftp://x"), InvalidArgument);
}

TEST(Http, JudgeOverLoopback) {
  auto heuristic = std::make_shared<HeuristicJudge>();
  LoopbackServer server(judge_handler(heuristic));
  WireJudge remote(std::make_shared<HttpTransport>(server.url(), 5000));
  Rng rng(3);
  const Image face = synth_face(rng, 16, 16).image;
  // The wire carries 8-bit PPM, so compare against the quantised image.
  const Image q = decode_ppm(encode_ppm(face));
  EXPECT_EQ(remote.assess(face, {}), heuristic->assess(q, {}));
  EXPECT_EQ(remote.describe(face, kDescribePrompt), heuristic->describe(q, kDescribePrompt));
}

TEST(Http, GeneratorOverLoopback) {
  LoopbackServer server(generator_handler(std::make_shared<IdentityGenerator>()));
  RemoteGenerator gen(std::make_shared<HttpTransport>(server.url(), 5000));
  Rng rng(4);
  const Image face = decode_ppm(encode_ppm(synth_face(rng, 16, 16).image));
  EXPECT_EQ(gen.generate(face, {"restore"}), face);
}

TEST(Http, ServerErrorIsTransportFailure) {
  LoopbackServer server([](const std::string&) -> std::string { throw std::runtime_error("boom"); });
  RetryPolicy r;
  r.attempts = 2;
  WireJudge remote(std::make_shared<HttpTransport>(server.url(), 2000), r);
  EXPECT_THROW(remote.assess(Image(16, 16, 0.5), {}), ServiceUnavailable);
}

TEST(Http, ConnectionRefused) {
  int port = 0;
  {
    LoopbackServer s([](const std::string& b) { return b; });
    port = s.port();
  }
  HttpTransport t("http://127.0.0.1:" + std::to_string(port) + "/", 500);
  EXPECT_THROW(t.roundtrip("{}"), TransportError);
}

TEST(Http, EndpointFromEnv) {
  ::setenv("WIRETAP_TEST_ENDPOINT", "http://127.0.0.1:1/", 1);
  EXPECT_EQ(endpoint_from_env("WIRETAP_TEST_ENDPOINT"), "http://127.0.0.1:1/");
  ::setenv("WIRETAP_TEST_ENDPOINT", "", 1);
  EXPECT_FALSE(endpoint_from_env("WIRETAP_TEST_ENDPOINT").has_value());
}

TEST(Generator, RemoteResponseChecked) {
  auto t = std::make_shared<ScriptedTransport>();
  const std::string wrong = base64_encode(encode_ppm(Image(8, 8, 0.5)));
  t->push(json{{"schema_version", "1"}, {"request_id", "$id"}, {"image", wrong}});
  t->push(json{{"schema_version", "1"}, {"request_id", "$id"}, {"image", "!!!!"}});
  t->push(json{{"schema_version", "1"}, {"request_id", "$id"}, {"image", base64_encode(encode_ppm(Image(16, 16, 0.5)))}, {"extra", 1}});
  RemoteGenerator gen(t);
  for (const char* field : {"image", "image", "extra"}) {
    try {
      gen.generate(Image(16, 16, 0.5), {"p"});
      FAIL();
    } catch (const ProtocolError& e) {
      EXPECT_EQ(e.field(), field);
    }
  }
  const json req = json::parse(t->requests().at(0));
  EXPECT_EQ(req.at("task"), "generate");
  EXPECT_EQ(req.at("prompt"), "p");
}

TEST(Generator, RemoteUnavailable) {
  auto t = std::make_shared<ScriptedTransport>();
  for (int i = 0; i < 3; ++i) t->push_failure();
  RemoteGenerator gen(t);
  EXPECT_THROW(gen.generate(Image(16, 16, 0.5), {"p"}), GenerationUnavailable);
}
