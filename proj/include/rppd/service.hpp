#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "rppd/corpus.hpp"
#include "rppd/search.hpp"
#include "rppd/store.hpp"
#include "rppd/stub_provider.hpp"

namespace httplib {
class Server;
}

namespace rppd {

// Configuration file (JSON):
// {
//   "bind": "127.0.0.1:8080",
//   "manifest": "corpus.jsonl",
//   "image_root": "images/",
//   "knowledge_bases": {"gpt2": "gpt2.rppd", ...},
//   "provider_url": "http://127.0.0.1:8090",      // optional
//   "provider_timeout_ms": 30000,                  // optional
//   "search": {"top_k": 5, "threshold": 0.5},      // optional
//   "cluster": {"k": 10, "seed": 42},              // optional
//   "generative_endpoint": "http://...",           // optional, off by default
//   "ui_root": "webui/dist",                       // optional
//   "log_requests": true                           // optional
// }
// Relative paths resolve against the config file's directory. RPPD_BIND and
// RPPD_PROVIDER_URL override "bind" and "provider_url".
struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string manifest_path;
  std::string image_root;
  std::map<std::string, std::string> knowledge_bases;
  std::string provider_url;
  std::chrono::milliseconds provider_timeout{30000};
  SearchParams search_defaults;
  std::size_t cluster_k = 10;
  std::uint64_t cluster_seed = 42;
  std::string generative_endpoint;
  std::string ui_root;
  bool log_requests = true;
};

// Throws Error{ConfigError / IoFailure}.
ServiceConfig load_service_config(const std::string& path);
ServiceConfig parse_service_config(std::string_view json_text, const std::string& base_dir);
void apply_env_overrides(ServiceConfig& config);

// Request handling independent of the socket layer. Immutable after
// construction; handlers may run concurrently.
class SearchService {
 public:
  // Loads manifest and knowledge bases named by the config.
  explicit SearchService(ServiceConfig config);
  // Takes already-loaded data (image_root is still validated).
  SearchService(ServiceConfig config, CorpusManifest manifest, std::vector<KnowledgeBase> kbs);

  const ServiceConfig& config() const noexcept { return config_; }
  const CorpusManifest& manifest() const noexcept { return manifest_; }
  const KnowledgeBase* find_kb(std::string_view model) const noexcept;

  HttpReply search(std::string_view body, std::optional<std::string> language_param = std::nullopt) const;
  HttpReply item(std::string_view raw_id) const;
  HttpReply stats() const;
  HttpReply clusters(std::optional<std::string> model, std::optional<std::string> k) const;
  HttpReply models() const;

  // Resolves an /images/ request path to a file under image_root, or
  // nullopt when it escapes the root or does not exist.
  std::optional<std::string> resolve_image(std::string_view relative) const;

  static std::string image_url(std::string_view image_path);

 private:
  void validate();
  EmbeddingVector embed_query(const KnowledgeBase& kb, const std::string& query) const;
  std::optional<std::string> annotate(const std::string& query, const std::string& hits_json) const;

  ServiceConfig config_;
  CorpusManifest manifest_;
  std::vector<KnowledgeBase> kbs_;
  std::map<std::string, std::size_t, std::less<>> item_index_;
  std::string image_root_canonical_;
};

// Binds a SearchService to HTTP routes:
//   POST /api/search, GET /api/items/{id}, GET /api/stats,
//   GET /api/clusters?model=&k=, GET /api/models, GET /images/{path},
//   static /ui when ui_root is set.
class HttpServer {
 public:
  explicit HttpServer(const SearchService& service);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Background thread; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  // Blocks until stop().
  void serve(const std::string& host, int port);
  void stop();

 private:
  void install_routes();

  const SearchService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace rppd
