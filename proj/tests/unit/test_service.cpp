#include <gtest/gtest.h>

#include <httplib.h>

#include <json.hpp>

#include "rppd/cluster.hpp"
#include "rppd/error.hpp"
#include "rppd/service.hpp"
#include "support/deployment.hpp"
#include "support/schema_check.hpp"

using namespace rppd;
using namespace rppd::testing;
using json = nlohmann::json;

namespace {

json search_body(const std::string& query, const std::string& model = "stub-7", double threshold = -1.0,
                 int top_k = 5) {
  return {{"query", query}, {"model", model}, {"threshold", threshold}, {"top_k", top_k}};
}

void expect_error(const HttpReply& r, int status, const std::string& code) {
  EXPECT_EQ(r.status, status) << r.body;
  auto body = json::parse(r.body);
  EXPECT_TRUE(schema_errors(body, "error").empty()) << join(schema_errors(body, "error"));
  EXPECT_EQ(body["error"], code) << r.body;
}

}  // namespace

TEST(ServiceConfig, ResolvesPathsAgainstConfigDirectory) {
  Deployment d;
  auto c = d.config();
  EXPECT_EQ(c.manifest_path, d.dir.file("corpus.jsonl"));
  EXPECT_EQ(c.knowledge_bases.at("stub-7"), d.dir.file("stub7.rppd"));
  EXPECT_EQ(c.port, 0);
  EXPECT_EQ(c.cluster_k, 2u);
  EXPECT_FALSE(c.log_requests);
}

TEST(ServiceConfig, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(parse_service_config(R"({"manifest":"m","image_root":"i","knowledge_bases":{},"colour":1})", "/"),
               Error);
  EXPECT_THROW(parse_service_config(R"({"manifest":1,"image_root":"i","knowledge_bases":{}})", "/"), Error);
  EXPECT_THROW(parse_service_config("[", "/"), Error);
}

TEST(ServiceStartup, RefusesEmptyModelList) {
  Deployment d;
  auto c = d.config();
  c.knowledge_bases.clear();
  try {
    SearchService s(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigError);
  }
}

TEST(ServiceStartup, RefusesKbWithIdsOutsideManifest) {
  Deployment d;
  auto other = six_item_manifest();
  other.items.push_back(make_item(99, "extra"));
  auto c = d.config();
  EXPECT_THROW(SearchService(c, six_item_manifest(), {stub_kb(other, 8, 1)}), Error);
}

TEST(ServiceStartup, NonStubModelNeedsProvider) {
  Deployment d;
  auto c = d.config();
  KnowledgeBase kb({"gpt2", Modality::text, 2, PoolingMode::mean}, {make_id(1)}, {1, 0});
  EXPECT_THROW(SearchService(c, six_item_manifest(), {kb}), Error);
}

TEST(ServiceSearch, MatchesInProcessPipeline) {
  Deployment d;
  SearchService s(d.config());
  auto kb = stub_kb(d.manifest, 16, 7);
  for (const auto& item : d.manifest.items) {
    auto reply = s.search(search_body(item.text).dump());
    ASSERT_EQ(reply.status, 200) << reply.body;
    auto body = json::parse(reply.body);
    ASSERT_TRUE(schema_errors(body, "search_response").empty()) << join(schema_errors(body, "search_response"));
    auto want = search(kb, stub_embed(item.text, 16, 7), SearchParams{5, -1.0});
    ASSERT_EQ(body["hits"].size(), want.hits.size());
    for (std::size_t i = 0; i < want.hits.size(); ++i) {
      EXPECT_EQ(body["hits"][i]["id"], want.hits[i].id.value());
      EXPECT_EQ(body["hits"][i]["score"].get<double>(), want.hits[i].score);
      EXPECT_EQ(body["hits"][i]["rank"], i + 1);
    }
    EXPECT_EQ(body["hits"][0]["id"], item.id.value());
    EXPECT_NEAR(body["hits"][0]["score"].get<double>(), 1.0, 1e-6);
    EXPECT_EQ(body["hits"][0]["text"], item.text);
    EXPECT_EQ(body["hits"][0]["image_url"], "/images/" + item.image_path);
  }
}

TEST(ServiceSearch, HighThresholdGivesEmptySuccess) {
  Deployment d;
  SearchService s(d.config());
  auto reply = s.search(search_body("no such text anywhere", "stub-7", 0.999).dump());
  ASSERT_EQ(reply.status, 200);
  auto body = json::parse(reply.body);
  EXPECT_TRUE(body["hits"].empty());
  EXPECT_EQ(body["threshold_used"], 0.999);
  EXPECT_TRUE(schema_errors(body, "search_response").empty());
}

TEST(ServiceSearch, DefaultsComeFromConfig) {
  Deployment d;
  SearchService s(d.config());
  auto body = json::parse(s.search(R"({"query":"renal","model":"stub-11"})").body);
  EXPECT_EQ(body["threshold_used"], 0.5);
  EXPECT_EQ(body["top_k"], 5);
  EXPECT_EQ(body["model"], "stub-11");
}

TEST(ServiceSearch, LanguageFilter) {
  Deployment d;
  SearchService s(d.config());
  auto body = json::parse(s.search(search_body("renal", "stub-7", -1.0, 10).dump(), "zh").body);
  ASSERT_EQ(body["hits"].size(), 2u);
  for (const auto& hit : body["hits"]) EXPECT_EQ(hit["language"], "zh");
  expect_error(s.search(search_body("renal").dump(), "fr"), 400, "InvalidArgument");
}

TEST(ServiceSearch, BadRequests) {
  Deployment d;
  SearchService s(d.config());
  expect_error(s.search(search_body("renal", "nope").dump()), 400, "UnknownModel");
  expect_error(s.search(search_body("   ").dump()), 400, "EmptyQuery");
  expect_error(s.search("{"), 400, "InvalidArgument");
  expect_error(s.search(R"({"query":"x"})"), 400, "InvalidArgument");
  expect_error(s.search(search_body("x", "stub-7", 2.0).dump()), 400, "InvalidArgument");
  expect_error(s.search(search_body("x", "stub-7", 0.5, 0).dump()), 400, "InvalidArgument");
  expect_error(s.search(R"({"query":"x","model":"stub-7","extra":1})"), 400, "InvalidArgument");
}

TEST(ServiceSearch, UnreachableProviderIs502) {
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  Deployment d("http://127.0.0.1:" + std::to_string(port));
  auto c = d.config();
  c.provider_timeout = std::chrono::milliseconds(1000);
  SearchService s(c);
  expect_error(s.search(search_body("renal").dump()), 502, "ProviderUnreachable");
}

TEST(ServiceItem, LookupAndErrors) {
  Deployment d;
  SearchService s(d.config());
  auto reply = s.item("P00000003");
  ASSERT_EQ(reply.status, 200);
  auto body = json::parse(reply.body);
  EXPECT_TRUE(schema_errors(body, "item").empty()) << join(schema_errors(body, "item"));
  const auto& item = d.manifest.items[2];
  EXPECT_EQ(body["id"], item.id.value());
  EXPECT_EQ(body["text"], item.text);
  EXPECT_EQ(body["source_book"], item.source_book);
  EXPECT_EQ(body["page"], *item.page);
  EXPECT_EQ(body["disease_class"], "other");
  expect_error(s.item("P99999999"), 404, "NotFound");
  expect_error(s.item("banana"), 400, "MalformedId");
}

TEST(ServiceStats, FixtureCounts) {
  Deployment d;
  SearchService s(d.config());
  auto body = json::parse(s.stats().body);
  EXPECT_TRUE(schema_errors(body, "stats").empty()) << join(schema_errors(body, "stats"));
  EXPECT_EQ(body["total"], 6);
  EXPECT_EQ(body["by_language"], (json{{"en", 4}, {"zh", 2}}));
  for (const char* facet : {"by_language", "by_image_kind", "by_disease"}) {
    int sum = 0;
    for (const auto& [k, v] : body[facet].items()) sum += v.get<int>();
    EXPECT_EQ(sum, 6) << facet;
  }
}

TEST(ServiceStats, EmptyManifestDeployment) {
  Deployment d;
  auto c = d.config();
  SearchService s(c, CorpusManifest{}, {stub_kb(CorpusManifest{}, 8, 3)});
  auto body = json::parse(s.stats().body);
  EXPECT_EQ(body["total"], 0);
  EXPECT_EQ(body["by_language"], (json{{"en", 0}, {"zh", 0}}));
  EXPECT_TRUE(json::parse(s.search(search_body("x", "stub-3").dump()).body)["hits"].empty());
}

TEST(ServiceClusters, MatchesInProcessPipelineAndIsDeterministic) {
  Deployment d;
  SearchService s(d.config());
  auto reply = s.clusters("stub-7", "2");
  ASSERT_EQ(reply.status, 200) << reply.body;
  auto body = json::parse(reply.body);
  EXPECT_TRUE(schema_errors(body, "clusters").empty()) << join(schema_errors(body, "clusters"));
  ASSERT_EQ(body.size(), 6u);

  auto kb = stub_kb(d.manifest, 16, 7);
  auto reduced = pca_reduce(to_matrix(kb.matrix(), kb.size(), kb.dim()), 2);
  auto assignment = kmeans(reduced.points, {2, 42});
  auto records = cluster_export(reduced, assignment, kb.ids(), d.manifest);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(body[i]["id"], records[i].id.value());
    EXPECT_EQ(body[i]["x"].get<double>(), records[i].x);
    EXPECT_EQ(body[i]["y"].get<double>(), records[i].y);
    EXPECT_EQ(body[i]["cluster"], records[i].cluster);
    EXPECT_LT(body[i]["cluster"].get<int>(), 2);
  }
  EXPECT_EQ(s.clusters("stub-7", "2").body, reply.body);
  EXPECT_EQ(s.clusters("stub-7", std::nullopt).body, reply.body);
}

TEST(ServiceClusters, BadRequests) {
  Deployment d;
  SearchService s(d.config());
  expect_error(s.clusters("stub-7", "7"), 400, "TooFewPoints");
  expect_error(s.clusters("stub-7", "0"), 400, "InvalidArgument");
  expect_error(s.clusters("stub-7", "two"), 400, "InvalidArgument");
  expect_error(s.clusters("nope", "2"), 400, "UnknownModel");
  expect_error(s.clusters(std::nullopt, "2"), 400, "UnknownModel");
}

TEST(ServiceModels, ListsEveryKbWithHeaderNames) {
  Deployment d;
  SearchService s(d.config());
  auto body = json::parse(s.models().body);
  EXPECT_TRUE(schema_errors(body, "models").empty()) << join(schema_errors(body, "models"));
  ASSERT_EQ(body.size(), 2u);
  std::set<std::string> names;
  for (const auto& m : body) {
    names.insert(m["name"]);
    EXPECT_EQ(m["count"], 6);
    EXPECT_EQ(m["dim"], m["name"] == "stub-7" ? 16 : 24);
  }
  EXPECT_EQ(names, (std::set<std::string>{"stub-7", "stub-11"}));
}

TEST(ServiceImages, ResolvesInsideRootOnly) {
  Deployment d;
  SearchService s(d.config());
  EXPECT_TRUE(s.resolve_image("img/p1.jpg").has_value());
  EXPECT_FALSE(s.resolve_image("img/missing.jpg").has_value());
  EXPECT_FALSE(s.resolve_image("../config.json").has_value());
  EXPECT_FALSE(s.resolve_image("img/../../config.json").has_value());
  EXPECT_FALSE(s.resolve_image("/etc/passwd").has_value());
  EXPECT_EQ(SearchService::image_url("a b/肾.jpg"), "/images/a%20b/%E8%82%BE.jpg");
}

TEST(HttpServer, EndpointsOverRealSockets) {
  StubProvider provider(16);
  const int provider_port = provider.start("127.0.0.1", 0);
  Deployment d("http://127.0.0.1:" + std::to_string(provider_port));
  SearchService s(d.config());
  HttpServer server(s);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);

  // stub-7 is answered by the provider, stub-11 would be too; both equal the in-process stub.
  auto res = client.Post("/api/search", search_body(d.manifest.items[0].text).dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, s.search(search_body(d.manifest.items[0].text).dump()).body);
  auto body = json::parse(res->body);
  EXPECT_EQ(body["hits"][0]["id"], "P00000001");

  res = client.Post("/api/search?language=zh", search_body("x").dump(), "application/json");
  ASSERT_TRUE(res);
  for (const auto& hit : json::parse(res->body)["hits"]) EXPECT_EQ(hit["language"], "zh");

  res = client.Get("/api/items/P00000002");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  res = client.Get("/api/items/banana");
  EXPECT_EQ(res->status, 400);
  res = client.Get("/api/stats");
  EXPECT_EQ(res->body, s.stats().body);
  res = client.Get("/api/clusters?model=stub-7&k=2");
  EXPECT_EQ(res->body, s.clusters("stub-7", "2").body);
  res = client.Get("/api/models");
  EXPECT_EQ(res->body, s.models().body);

  res = client.Get("/images/img/p4.jpg");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body, "jpeg:P00000004");
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/jpeg");
  res = client.Get("/images/..%2Fconfig.json");
  EXPECT_EQ(res->status, 404);

  res = client.Get("/no/such/route");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
  EXPECT_TRUE(schema_errors(json::parse(res->body), "error").empty());

  server.stop();
  provider.stop();
}

TEST(HttpServer, ProviderDownGives502) {
  StubProvider provider(16);
  const int provider_port = provider.start("127.0.0.1", 0);
  Deployment d("http://127.0.0.1:" + std::to_string(provider_port));
  auto c = d.config();
  c.provider_timeout = std::chrono::milliseconds(1000);
  SearchService s(c);
  provider.stop();
  HttpServer server(s);
  httplib::Client client("127.0.0.1", server.start("127.0.0.1", 0));
  auto res = client.Post("/api/search", search_body("x").dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 502);
  EXPECT_EQ(json::parse(res->body)["error"], "ProviderUnreachable");
}

TEST(HttpServer, GenerativeHookAddsAnnotation) {
  httplib::Server gen;
  gen.Post("/annotate", [](const httplib::Request& req, httplib::Response& res) {
    auto in = json::parse(req.body);
    res.set_content(json{{"annotation", "seen " + std::to_string(in["hits"].size())}}.dump(), "application/json");
  });
  const int gen_port = gen.bind_to_any_port("127.0.0.1");
  std::thread t([&] { gen.listen_after_bind(); });
  gen.wait_until_ready();

  Deployment d;
  auto c = d.config();
  c.generative_endpoint = "http://127.0.0.1:" + std::to_string(gen_port) + "/annotate";
  SearchService s(c);
  auto body = json::parse(s.search(search_body("renal", "stub-7", -1.0, 3).dump()).body);
  EXPECT_EQ(body["annotation"], "seen 3");
  EXPECT_TRUE(schema_errors(body, "search_response").empty());
  gen.stop();
  t.join();
}
