#include "rppd/service.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "rppd/cluster.hpp"
#include "rppd/embedding.hpp"
#include "rppd/error.hpp"

namespace rppd {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

HttpReply json_reply(int status, const json& body) { return {status, body.dump()}; }

HttpReply error_reply(int status, std::string_view code, const std::string& message) {
  return json_reply(status, json{{"error", code}, {"message", message}});
}

void split_bind(const std::string& bind, ServiceConfig& config) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::ConfigError, "bind address '" + bind + "' must be host:port");
  int port = 0;
  auto digits = std::string_view(bind).substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || port < 0 || port > 65535)
    throw Error(Errc::ConfigError, "bad port in bind address '" + bind + "'");
  config.host = bind.substr(0, colon);
  config.port = port;
}

std::string resolve_path(const std::string& base_dir, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

const json* optional_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

std::string require_config_string(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) throw Error(Errc::ConfigError, std::string("config needs string '") + key + "'");
  return it->get<std::string>();
}

json item_json(const KnowledgeItem& item) {
  return json{
      {"id", item.id.value()},
      {"text", item.text},
      {"image_path", item.image_path},
      {"image_url", SearchService::image_url(item.image_path)},
      {"language", to_string(item.language)},
      {"image_kind", to_string(item.image_kind)},
      {"disease_class", to_string(item.disease_class)},
      {"source_book", item.source_book},
      {"page", item.page ? json(*item.page) : json(nullptr)},
  };
}

int status_for(Errc code) {
  switch (code) {
    case Errc::ProviderUnreachable:
    case Errc::ProviderError:
    case Errc::DimensionMismatch:
    case Errc::ZeroVector:
      return 502;
    case Errc::UnknownModel:
    case Errc::EmptyQuery:
    case Errc::InvalidArgument:
    case Errc::TooFewPoints:
    case Errc::DegenerateInput:
    case Errc::MalformedId:
      return 400;
    case Errc::NotFound:
      return 404;
    default:
      return 500;
  }
}

std::string_view content_type_for(const fs::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

ServiceConfig parse_service_config(std::string_view json_text, const std::string& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw Error(Errc::ConfigError, "config must be a JSON object");

  static const std::vector<std::string> known = {"bind",       "manifest", "image_root", "knowledge_bases",
                                                 "provider_url", "provider_timeout_ms", "search", "cluster",
                                                 "generative_endpoint", "ui_root", "log_requests"};
  for (const auto& [key, value] : root.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error(Errc::ConfigError, "unknown config key '" + key + "'");

  ServiceConfig config;
  try {
    if (auto* bind = optional_field(root, "bind")) split_bind(bind->get<std::string>(), config);
    config.manifest_path = resolve_path(base_dir, require_config_string(root, "manifest"));
    config.image_root = resolve_path(base_dir, require_config_string(root, "image_root"));

    auto kbs = root.find("knowledge_bases");
    if (kbs == root.end() || !kbs->is_object()) throw Error(Errc::ConfigError, "config needs object 'knowledge_bases'");
    for (const auto& [model, path] : kbs->items())
      config.knowledge_bases[model] = resolve_path(base_dir, path.get<std::string>());

    if (auto* v = optional_field(root, "provider_url")) config.provider_url = v->get<std::string>();
    if (auto* v = optional_field(root, "provider_timeout_ms"))
      config.provider_timeout = std::chrono::milliseconds(v->get<std::int64_t>());
    if (auto* s = optional_field(root, "search")) {
      if (auto* v = optional_field(*s, "top_k")) config.search_defaults.top_k = v->get<std::size_t>();
      if (auto* v = optional_field(*s, "threshold")) config.search_defaults.threshold = v->get<double>();
    }
    if (auto* c = optional_field(root, "cluster")) {
      if (auto* v = optional_field(*c, "k")) config.cluster_k = v->get<std::size_t>();
      if (auto* v = optional_field(*c, "seed")) config.cluster_seed = v->get<std::uint64_t>();
    }
    if (auto* v = optional_field(root, "generative_endpoint")) config.generative_endpoint = v->get<std::string>();
    if (auto* v = optional_field(root, "ui_root")) config.ui_root = resolve_path(base_dir, v->get<std::string>());
    if (auto* v = optional_field(root, "log_requests")) config.log_requests = v->get<bool>();
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("config has a field of the wrong type: ") + e.what());
  }
  try {
    config.search_defaults.validate();
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, std::string("config search defaults: ") + e.what());
  }
  if (config.cluster_k == 0) throw Error(Errc::ConfigError, "config cluster.k must be positive");
  return config;
}

void apply_env_overrides(ServiceConfig& config) {
  if (const char* bind = std::getenv("RPPD_BIND"); bind && *bind) split_bind(bind, config);
  if (const char* url = std::getenv("RPPD_PROVIDER_URL"); url && *url) config.provider_url = url;
}

ServiceConfig load_service_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  ServiceConfig config = parse_service_config(buffer.str(), fs::path(path).parent_path().string());
  apply_env_overrides(config);
  return config;
}

// ---------------------------------------------------------------------------
// SearchService

SearchService::SearchService(ServiceConfig config) : config_(std::move(config)) {
  manifest_ = load_manifest_file(config_.manifest_path);
  for (const auto& [model, path] : config_.knowledge_bases) {
    KnowledgeBase kb = load_kb_file(path);
    if (kb.descriptor().name != model) {
      throw Error(Errc::ConfigError, "knowledge base '" + path + "' holds model '" + kb.descriptor().name +
                                         "' but is configured as '" + model + "'");
    }
    kbs_.push_back(std::move(kb));
  }
  validate();
}

SearchService::SearchService(ServiceConfig config, CorpusManifest manifest, std::vector<KnowledgeBase> kbs)
    : config_(std::move(config)), manifest_(std::move(manifest)), kbs_(std::move(kbs)) {
  validate();
}

void SearchService::validate() {
  if (kbs_.empty()) throw Error(Errc::ConfigError, "no knowledge bases configured");
  std::map<std::string, int> names;
  for (const auto& kb : kbs_) {
    if (++names[kb.descriptor().name] > 1)
      throw Error(Errc::ConfigError, "model '" + kb.descriptor().name + "' configured twice");
    if (config_.provider_url.empty() && !parse_stub_model(kb.descriptor().name)) {
      throw Error(Errc::ConfigError, "model '" + kb.descriptor().name +
                                         "' needs provider_url (only stub-<seed> models embed in-process)");
    }
  }

  std::error_code ec;
  if (config_.image_root.empty() || !fs::is_directory(config_.image_root, ec))
    throw Error(Errc::ConfigError, "image root '" + config_.image_root + "' is not a directory");
  image_root_canonical_ = fs::canonical(config_.image_root).string();

  for (std::size_t i = 0; i < manifest_.items.size(); ++i) item_index_.emplace(manifest_.items[i].id.value(), i);
  for (const auto& kb : kbs_) {
    for (const auto& id : kb.ids()) {
      if (!item_index_.contains(id.value())) {
        throw Error(Errc::ConfigError, "knowledge base '" + kb.descriptor().name + "' holds id " + id.value() +
                                           " that is not in the manifest");
      }
    }
  }
}

const KnowledgeBase* SearchService::find_kb(std::string_view model) const noexcept {
  for (const auto& kb : kbs_)
    if (kb.descriptor().name == model) return &kb;
  return nullptr;
}

EmbeddingVector SearchService::embed_query(const KnowledgeBase& kb, const std::string& query) const {
  const auto& d = kb.descriptor();
  if (!config_.provider_url.empty()) {
    ProviderConfig provider{config_.provider_url, config_.provider_timeout, kb.dim()};
    return remote_embed(provider, d.name, query, d.pooling);
  }
  return stub_embed(query, kb.dim(), *parse_stub_model(d.name));
}

std::optional<std::string> SearchService::annotate(const std::string& query, const std::string& hits_json) const {
  if (config_.generative_endpoint.empty()) return std::nullopt;
  try {
    auto scheme_end = config_.generative_endpoint.find("://");
    auto path_start = config_.generative_endpoint.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string host = config_.generative_endpoint.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : config_.generative_endpoint.substr(path_start);
    httplib::Client client(host);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.provider_timeout).count();
    client.set_connection_timeout(secs);
    client.set_read_timeout(secs);
    json payload = {{"query", query}, {"hits", json::parse(hits_json)}};
    auto res = client.Post(path, payload.dump(), "application/json");
    if (!res || res->status < 200 || res->status >= 300) return std::nullopt;
    auto body = json::parse(res->body);
    if (body.contains("annotation") && body["annotation"].is_string()) return body["annotation"].get<std::string>();
  } catch (const std::exception& e) {
    std::cerr << "generative hook failed: " << e.what() << '\n';
  }
  return std::nullopt;
}

std::string SearchService::image_url(std::string_view image_path) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string url = "/images/";
  for (unsigned char c : image_path) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == '/') {
      url.push_back(static_cast<char>(c));
    } else {
      url.push_back('%');
      url.push_back(kHex[c >> 4]);
      url.push_back(kHex[c & 0xF]);
    }
  }
  return url;
}

HttpReply SearchService::search(std::string_view body, std::optional<std::string> language_param) const {
  json request;
  try {
    request = json::parse(body);
  } catch (const json::parse_error&) {
    return error_reply(400, "InvalidArgument", "request body is not valid JSON");
  }
  if (!request.is_object()) return error_reply(400, "InvalidArgument", "request body must be a JSON object");
  for (const auto& [key, value] : request.items()) {
    if (key != "query" && key != "model" && key != "top_k" && key != "threshold" && key != "language")
      return error_reply(400, "InvalidArgument", "unknown field '" + key + "'");
  }
  if (!request.contains("model") || !request["model"].is_string())
    return error_reply(400, "InvalidArgument", "field 'model' must be a string");
  if (!request.contains("query") || !request["query"].is_string())
    return error_reply(400, "InvalidArgument", "field 'query' must be a string");

  SearchParams params = config_.search_defaults;
  if (auto* v = optional_field(request, "top_k")) {
    if (!v->is_number_integer() || v->get<std::int64_t>() < 1)
      return error_reply(400, "InvalidArgument", "top_k must be a positive integer");
    params.top_k = v->get<std::size_t>();
  }
  if (auto* v = optional_field(request, "threshold")) {
    if (!v->is_number() || v->get<double>() < -1.0 || v->get<double>() > 1.0)
      return error_reply(400, "InvalidArgument", "threshold must be a number in [-1, 1]");
    params.threshold = v->get<double>();
  }
  std::optional<Language> language;
  if (auto* v = optional_field(request, "language")) {
    if (!v->is_string()) return error_reply(400, "InvalidArgument", "language must be \"zh\" or \"en\"");
    language_param = v->get<std::string>();
  }
  if (language_param) {
    language = parse_language(*language_param);
    if (!language) return error_reply(400, "InvalidArgument", "language must be \"zh\" or \"en\"");
  }

  const std::string model = request["model"].get<std::string>();
  const KnowledgeBase* kb = find_kb(model);
  if (!kb) return error_reply(400, "UnknownModel", "model '" + model + "' is not configured");

  const std::string query = request["query"].get<std::string>();
  if (query.find_first_not_of(" \t\r\n\f\v") == std::string::npos)
    return error_reply(400, "EmptyQuery", "query is empty");

  SearchResult result;
  try {
    EmbeddingVector q = embed_query(*kb, query);
    RowFilter filter;
    if (language) {
      filter = [&](std::size_t row) {
        return manifest_.items[item_index_.find(kb->ids()[row].value())->second].language == *language;
      };
    }
    result = rppd::search(*kb, q, params, filter);
  } catch (const Error& e) {
    return error_reply(status_for(e.code()), to_string(e.code()), e.what());
  }

  json hits = json::array();
  for (const auto& hit : result.hits) {
    const auto& item = manifest_.items[item_index_.find(hit.id.value())->second];
    hits.push_back({
        {"rank", hit.rank},
        {"id", hit.id.value()},
        {"score", hit.score},
        {"text", item.text},
        {"image_url", image_url(item.image_path)},
        {"language", to_string(item.language)},
        {"image_kind", to_string(item.image_kind)},
    });
  }
  json response = {
      {"model", result.model},
      {"threshold_used", result.threshold_used},
      {"top_k", params.top_k},
      {"hits", hits},
  };
  if (auto note = annotate(query, hits.dump())) response["annotation"] = *note;
  return json_reply(200, response);
}

HttpReply SearchService::item(std::string_view raw_id) const {
  if (!ItemId::is_valid(raw_id)) return error_reply(400, "MalformedId", "malformed id '" + std::string(raw_id) + "'");
  auto it = item_index_.find(raw_id);
  if (it == item_index_.end()) return error_reply(404, "NotFound", "id " + std::string(raw_id) + " not found");
  return json_reply(200, item_json(manifest_.items[it->second]));
}

HttpReply SearchService::stats() const {
  CorpusStats s = compute_stats(manifest_);
  return json_reply(200, json{{"total", s.total},
                              {"by_image_kind", s.by_image_kind},
                              {"by_language", s.by_language},
                              {"by_disease", s.by_disease}});
}

HttpReply SearchService::clusters(std::optional<std::string> model, std::optional<std::string> k_param) const {
  if (!model) return error_reply(400, "UnknownModel", "query parameter 'model' is required");
  const KnowledgeBase* kb = find_kb(*model);
  if (!kb) return error_reply(400, "UnknownModel", "model '" + *model + "' is not configured");

  std::size_t k = config_.cluster_k;
  if (k_param) {
    auto [ptr, ec] = std::from_chars(k_param->data(), k_param->data() + k_param->size(), k);
    if (ec != std::errc() || ptr != k_param->data() + k_param->size() || k < 1)
      return error_reply(400, "InvalidArgument", "k must be a positive integer");
  }
  if (k > kb->size()) {
    return error_reply(400, "TooFewPoints", "k=" + std::to_string(k) + " exceeds the " + std::to_string(kb->size()) +
                                                " items in '" + *model + "'");
  }

  try {
    ReducedPoints reduced = pca_reduce(to_matrix(kb->matrix(), kb->size(), kb->dim()), 2);
    KMeansOptions options;
    options.k = k;
    options.seed = config_.cluster_seed;
    ClusterAssignment assignment = kmeans(reduced.points, options);
    json records = json::array();
    for (const auto& r : cluster_export(reduced, assignment, kb->ids(), manifest_)) {
      records.push_back({{"id", r.id.value()},
                         {"x", r.x},
                         {"y", r.y},
                         {"cluster", r.cluster},
                         {"language", to_string(r.language)},
                         {"image_kind", to_string(r.image_kind)}});
    }
    return json_reply(200, records);
  } catch (const Error& e) {
    return error_reply(status_for(e.code()), to_string(e.code()), e.what());
  }
}

HttpReply SearchService::models() const {
  json out = json::array();
  for (const auto& kb : kbs_) {
    const auto& d = kb.descriptor();
    out.push_back({{"name", d.name},
                   {"dim", d.dim},
                   {"modality", to_string(d.modality)},
                   {"pooling", to_string(d.pooling)},
                   {"count", kb.size()}});
  }
  return json_reply(200, out);
}

std::optional<std::string> SearchService::resolve_image(std::string_view relative) const {
  if (!is_safe_relative_path(relative)) return std::nullopt;
  std::error_code ec;
  fs::path candidate = fs::weakly_canonical(fs::path(image_root_canonical_) / fs::path(relative), ec);
  if (ec) return std::nullopt;
  const std::string resolved = candidate.string();
  const std::string& root = image_root_canonical_;
  if (resolved.size() <= root.size() || resolved.compare(0, root.size(), root) != 0 ||
      (root.back() != '/' && resolved[root.size()] != '/'))
    return std::nullopt;
  if (!fs::is_regular_file(candidate, ec)) return std::nullopt;
  return resolved;
}

// ---------------------------------------------------------------------------
// HttpServer

HttpServer::HttpServer(const SearchService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };

  server_->Post("/api/search", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> language;
    if (req.has_param("language")) language = req.get_param_value("language");
    send(res, service_.search(req.body, language));
  });
  server_->Get(R"(/api/items/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.item(req.matches[1].str()));
  });
  server_->Get("/api/stats", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, service_.stats());
  });
  server_->Get("/api/clusters", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> model, k;
    if (req.has_param("model")) model = req.get_param_value("model");
    if (req.has_param("k")) k = req.get_param_value("k");
    send(res, service_.clusters(model, k));
  });
  server_->Get("/api/models", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, service_.models());
  });
  server_->Get(R"(/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto path = service_.resolve_image(req.matches[1].str());
    if (!path) {
      res.status = 404;
      res.set_content(R"({"error":"NotFound","message":"no such image"})", "application/json");
      return;
    }
    std::ifstream in(*path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    res.set_content(std::move(bytes), std::string(content_type_for(*path)));
  });
  if (!service_.config().ui_root.empty()) server_->set_mount_point("/ui", service_.config().ui_root);

  server_->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(json{{"error", "Internal"}, {"message", message}}.dump(), "application/json");
  });
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    res.set_content(json{{"error", res.status == 404 ? "NotFound" : "HttpError"},
                         {"message", httplib::status_message(res.status)}}
                        .dump(),
                    "application/json");
    return httplib::Server::HandlerResponse::Handled;
  });
  if (service_.config().log_requests) {
    server_->set_logger([](const httplib::Request& req, const httplib::Response& res) {
      static std::mutex mu;
      json line = {{"method", req.method},
                   {"path", req.path},
                   {"status", res.status},
                   {"bytes", res.body.size()},
                   {"remote", req.remote_addr}};
      std::lock_guard lock(mu);
      std::cout << line.dump() << std::endl;
    });
  }
}

int HttpServer::start(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(Errc::IoFailure, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::serve(const std::string& host, int port) {
  if (!server_->listen(host, port)) throw Error(Errc::IoFailure, "cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace rppd
