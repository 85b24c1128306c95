#include "rppd/stub_provider.hpp"

#include <httplib.h>
#include <json.hpp>

#include "rppd/embedding.hpp"
#include "rppd/error.hpp"

namespace rppd {

using json = nlohmann::json;

namespace {

HttpReply error_reply(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

}  // namespace

StubProvider::StubProvider(std::size_t dim) : dim_(dim), server_(std::make_unique<httplib::Server>()) {
  if (dim_ == 0) throw Error(Errc::InvalidArgument, "stub provider dim must be positive");
  install_routes();
}

StubProvider::~StubProvider() { stop(); }

HttpReply StubProvider::handle_embed(std::string_view body) const {
  json request;
  try {
    request = json::parse(body);
  } catch (const json::parse_error&) {
    return error_reply(400, "request body is not valid JSON");
  }
  if (!request.is_object() || !request.contains("model") || !request["model"].is_string() ||
      !request.contains("input") || !request["input"].is_string()) {
    return error_reply(400, "request needs string fields 'model' and 'input'");
  }
  PoolingMode pooling = PoolingMode::mean;
  if (request.contains("pooling")) {
    auto parsed = request["pooling"].is_string() ? parse_pooling(request["pooling"].get<std::string>()) : std::nullopt;
    if (!parsed) return error_reply(400, "pooling must be \"mean\" or \"flatten\"");
    pooling = *parsed;
  }
  (void)pooling;  // stub vectors are already pooled

  const std::string model = request["model"].get<std::string>();
  auto seed = parse_stub_model(model);
  if (!seed) return error_reply(404, "unknown model '" + model + "'");

  EmbeddingVector vec = stub_embed(request["input"].get<std::string>(), dim_, *seed);
  json vector = json::array();
  for (float v : vec.values()) vector.push_back(v);
  return {200, json{{"model", model}, {"dim", vec.size()}, {"vector", std::move(vector)}}.dump()};
}

void StubProvider::install_routes() {
  server_->Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
    HttpReply reply = handle_embed(req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
}

int StubProvider::start(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(Errc::IoFailure, "stub provider cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void StubProvider::serve(const std::string& host, int port) {
  if (!server_->listen(host, port))
    throw Error(Errc::IoFailure, "stub provider cannot listen on " + host + ":" + std::to_string(port));
}

void StubProvider::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace rppd
