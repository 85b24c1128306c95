// rppd: build, inspect, and serve knowledge bases.
//
// Exit codes: 0 success, 1 validation or usage error, 2 I/O or provider
// failure.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rppd/cluster.hpp"
#include "rppd/corpus.hpp"
#include "rppd/embedding.hpp"
#include "rppd/error.hpp"
#include "rppd/search.hpp"
#include "rppd/service.hpp"
#include "rppd/store.hpp"
#include "rppd/stub_provider.hpp"
#include "rppd/textstats.hpp"

namespace {

using json = nlohmann::json;
using namespace rppd;

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;
constexpr int kExitIo = 2;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::IoFailure:
    case Errc::ProviderUnreachable:
    case Errc::ProviderError:
    case Errc::EmbedFailure:
    case Errc::BadMagic:
    case Errc::UnsupportedVersion:
    case Errc::Truncated:
    case Errc::CorruptIds:
    case Errc::CorruptHeader:
    case Errc::CorruptValues:
    case Errc::DimensionMismatch:
      return kExitIo;
    default:
      return kExitUser;
  }
}

std::string format_score(double score) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", score);
  return buf;
}

struct EmbedSource {
  std::optional<std::uint64_t> stub_seed;
  std::string provider_url;
};

void add_embed_source(CLI::App* cmd, EmbedSource& src) {
  auto* stub = cmd->add_option("--stub", src.stub_seed, "Embed offline with the deterministic stub (seed)");
  auto* provider = cmd->add_option("--provider", src.provider_url, "Embedding provider base URL");
  stub->excludes(provider);
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  std::string manifest, out, model, pooling = "mean", modality = "text";
  std::optional<std::uint32_t> dim;
  EmbedSource source;
  bool json = false;
};

int cmd_build(const BuildArgs& a) {
  CorpusManifest manifest = load_manifest_file(a.manifest);

  EmbedderDescriptor descriptor;
  descriptor.pooling = *parse_pooling(a.pooling);
  descriptor.modality = *parse_modality(a.modality);

  EmbedFn embed;
  if (a.source.stub_seed) {
    descriptor.name = a.model.empty() ? stub_model_name(*a.source.stub_seed) : a.model;
    descriptor.dim = a.dim.value_or(64);
    const std::uint64_t seed = *a.source.stub_seed;
    const std::size_t dim = descriptor.dim;
    embed = [seed, dim](const std::string& text) { return stub_embed(text, dim, seed); };
  } else {
    if (a.source.provider_url.empty()) throw Error(Errc::InvalidArgument, "build needs --stub or --provider");
    if (a.model.empty()) throw Error(Errc::InvalidArgument, "build with --provider needs --model");
    descriptor.name = a.model;
    ProviderConfig provider{a.source.provider_url, std::chrono::milliseconds(30000), std::nullopt};
    if (a.dim) {
      descriptor.dim = *a.dim;
      provider.expected_dim = *a.dim;
    } else if (!manifest.items.empty()) {
      // Learn the dimension from the first item.
      descriptor.dim = static_cast<std::uint32_t>(
          remote_embed(provider, descriptor.name, manifest.items.front().text, descriptor.pooling).size());
      provider.expected_dim = descriptor.dim;
    } else {
      throw Error(Errc::InvalidArgument, "empty manifest with --provider needs --dim");
    }
    embed = [provider, descriptor](const std::string& text) {
      return remote_embed(provider, descriptor.name, text, descriptor.pooling);
    };
  }
  if (descriptor.dim == 0) throw Error(Errc::InvalidArgument, "--dim must be positive");

  KnowledgeBase kb = build_kb(manifest, embed, descriptor);
  save_kb_file(kb, a.out);

  if (a.json) {
    std::cout << json{{"path", a.out},
                      {"count", kb.size()},
                      {"dim", kb.dim()},
                      {"model", descriptor.name},
                      {"pooling", to_string(descriptor.pooling)},
                      {"modality", to_string(descriptor.modality)},
                      {"bytes", kb_file_size(kb)}}
                     .dump()
              << '\n';
  } else {
    std::cout << "built " << a.out << ": n=" << kb.size() << " dim=" << kb.dim() << " model=" << descriptor.name
              << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string kb, query, language;
  EmbedSource source;
  std::size_t top_k = 5;
  double threshold = 0.5;
  bool json = false;
};

int cmd_search(const SearchArgs& a) {
  KnowledgeBase kb = load_kb_file(a.kb);
  SearchParams params{a.top_k, a.threshold};
  params.validate();

  const auto& d = kb.descriptor();
  std::optional<EmbeddingVector> query;
  if (!a.source.provider_url.empty()) {
    ProviderConfig provider{a.source.provider_url, std::chrono::milliseconds(30000), kb.dim()};
    query = remote_embed(provider, d.name, a.query, d.pooling);
  } else {
    auto seed = a.source.stub_seed ? a.source.stub_seed : parse_stub_model(d.name);
    if (!seed) throw Error(Errc::InvalidArgument, "model '" + d.name + "' needs --provider or --stub");
    query = stub_embed(a.query, kb.dim(), *seed);
  }

  SearchResult result = search(kb, *query, params);
  if (a.json) {
    json hits = json::array();
    for (const auto& h : result.hits) hits.push_back({{"rank", h.rank}, {"id", h.id.value()}, {"score", h.score}});
    std::cout << json{{"model", result.model}, {"threshold_used", result.threshold_used}, {"hits", hits}}.dump()
              << '\n';
  } else {
    for (const auto& h : result.hits) std::cout << h.rank << ' ' << h.id.value() << ' ' << format_score(h.score) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ClusterArgs {
  std::string kb, manifest, out;
  std::size_t k = 10;
  std::uint64_t seed = 42;
  std::size_t restarts = 1;
  bool json = false;
};

int cmd_cluster(const ClusterArgs& a) {
  KnowledgeBase kb = load_kb_file(a.kb);
  CorpusManifest manifest = load_manifest_file(a.manifest);

  ReducedPoints reduced = pca_reduce(to_matrix(kb.matrix(), kb.size(), kb.dim()), 2);
  KMeansOptions options;
  options.k = a.k;
  options.seed = a.seed;
  options.restarts = a.restarts;
  ClusterAssignment assignment = kmeans(reduced.points, options);
  auto records = cluster_export(reduced, assignment, kb.ids(), manifest);

  std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot open '" + a.out + "' for writing");
  write_cluster_csv(records, out);
  out.close();
  if (!out) throw Error(Errc::IoFailure, "failed writing '" + a.out + "'");

  std::vector<std::string> languages, kinds;
  for (const auto& r : records) {
    languages.emplace_back(to_string(r.language));
    kinds.emplace_back(to_string(r.image_kind));
  }
  auto by_language = facet_purity(assignment.labels, languages, "language");
  auto by_kind = facet_purity(assignment.labels, kinds, "image_kind");

  if (a.json) {
    std::cout << json{{"path", a.out},
                      {"model", kb.descriptor().name},
                      {"count", records.size()},
                      {"k", assignment.k},
                      {"seed", assignment.seed},
                      {"inertia", assignment.inertia},
                      {"iterations", assignment.iterations},
                      {"explained_variance_ratio", reduced.explained_variance_ratio},
                      {"purity", {{"language", by_language.purity}, {"image_kind", by_kind.purity}}}}
                     .dump()
              << '\n';
  } else {
    std::cout << "wrote " << records.size() << " records to " << a.out << '\n'
              << "model=" << kb.descriptor().name << " k=" << assignment.k << " seed=" << assignment.seed
              << " inertia=" << format_double(assignment.inertia) << " iterations=" << assignment.iterations << '\n'
              << "explained_variance_ratio=" << format_double(reduced.explained_variance_ratio[0]) << ','
              << format_double(reduced.explained_variance_ratio[1]) << '\n'
              << "purity language=" << format_score(by_language.purity)
              << " image_kind=" << format_score(by_kind.purity) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_stats(const std::string& manifest_path, bool as_json) {
  CorpusStats s = compute_stats(load_manifest_file(manifest_path));
  if (as_json) {
    std::cout << json{{"total", s.total},
                      {"by_image_kind", s.by_image_kind},
                      {"by_language", s.by_language},
                      {"by_disease", s.by_disease}}
                     .dump()
              << '\n';
    return kExitOk;
  }
  auto row = [](std::string_view facet, std::string_view value, std::size_t count) {
    std::cout << std::left << std::setw(14) << facet << std::setw(16) << value << std::right << std::setw(8) << count
              << '\n';
  };
  std::cout << std::left << std::setw(14) << "facet" << std::setw(16) << "value" << std::right << std::setw(8)
            << "count" << '\n';
  row("total", "", s.total);
  for (const auto& [v, c] : s.by_image_kind) row("image_kind", v, c);
  for (const auto& [v, c] : s.by_language) row("language", v, c);
  for (const auto& [v, c] : s.by_disease) row("disease_class", v, c);
  return kExitOk;
}

int cmd_validate(const std::string& manifest_path, bool as_json) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open manifest '" + manifest_path + "'");
  auto violations = validate_manifest(in);
  std::size_t items = 0;
  if (violations.empty()) {
    std::ifstream again(manifest_path, std::ios::binary);
    items = load_manifest(again).items.size();
  }
  if (as_json) {
    json list = json::array();
    for (const auto& v : violations) list.push_back({{"line", v.line}, {"message", v.message}});
    json out = {{"valid", violations.empty()}, {"violations", list}};
    if (violations.empty()) out["items"] = items;
    std::cout << out.dump() << '\n';
  } else if (violations.empty()) {
    std::cout << "ok: " << items << " items\n";
  } else {
    for (const auto& v : violations) std::cout << "line " << v.line << ": " << v.message << '\n';
  }
  return violations.empty() ? kExitOk : kExitUser;
}

struct TermsArgs {
  std::string manifest, language, stopwords, out;
  std::size_t top = 0;
};

int cmd_terms(const TermsArgs& a) {
  CorpusManifest manifest = load_manifest_file(a.manifest);
  StopwordSet stop;
  if (!a.stopwords.empty()) {
    std::ifstream in(a.stopwords);
    if (!in) throw Error(Errc::IoFailure, "cannot open stopword file '" + a.stopwords + "'");
    stop = load_stopwords(in);
  }
  std::optional<Language> language;
  if (!a.language.empty()) language = parse_language(a.language);
  auto terms = term_frequencies(manifest, language, stop);
  if (a.top > 0 && terms.size() > a.top) terms.resize(a.top);

  if (a.out.empty()) {
    write_term_csv(terms, std::cout);
  } else {
    std::ofstream out(a.out, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoFailure, "cannot open '" + a.out + "' for writing");
    write_term_csv(terms, out);
  }
  return kExitOk;
}

int cmd_serve(const std::string& config_path) {
  ServiceConfig config = load_service_config(config_path);
  SearchService service(config);
  HttpServer server(service);
  std::cerr << "serving " << service.manifest().items.size() << " items on " << config.host << ':' << config.port
            << '\n';
  server.serve(config.host, config.port);
  return kExitOk;
}

int cmd_provider(std::size_t dim, const std::string& bind) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error(Errc::InvalidArgument, "--bind must be host:port");
  StubProvider provider(dim);
  std::cerr << "stub embedding provider (dim " << dim << ") on " << bind << '\n';
  provider.serve(bind.substr(0, colon), std::stoi(bind.substr(colon + 1)));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rppd: semantic retrieval over image-text knowledge bases"};
  app.require_subcommand(1);

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build", "Embed a manifest into a knowledge base file");
  build_cmd->add_option("--manifest", build.manifest, "Manifest (JSON lines)")->required();
  build_cmd->add_option("--out,-o", build.out, "Output knowledge base path")->required();
  build_cmd->add_option("--model", build.model, "Model name recorded in the knowledge base");
  build_cmd->add_option("--dim", build.dim, "Vector dimension (stub default 64)");
  build_cmd->add_option("--pooling", build.pooling)->check(CLI::IsMember({"mean", "flatten"}));
  build_cmd->add_option("--modality", build.modality)->check(CLI::IsMember({"text", "image"}));
  build_cmd->add_flag("--json", build.json, "Machine-readable output");
  add_embed_source(build_cmd, build.source);

  SearchArgs search_args;
  auto* search_cmd = app.add_subcommand("search", "Query a knowledge base");
  search_cmd->add_option("--kb", search_args.kb, "Knowledge base file")->required();
  search_cmd->add_option("--query,-q", search_args.query, "Query text")->required();
  search_cmd->add_option("-k,--top-k", search_args.top_k, "Maximum hits")->check(CLI::PositiveNumber);
  search_cmd->add_option("--threshold", search_args.threshold, "Minimum cosine score")->check(CLI::Range(-1.0, 1.0));
  search_cmd->add_flag("--json", search_args.json, "Machine-readable output");
  add_embed_source(search_cmd, search_args.source);

  ClusterArgs cluster;
  auto* cluster_cmd = app.add_subcommand("cluster", "PCA + k-means export of a knowledge base");
  cluster_cmd->add_option("--kb", cluster.kb, "Knowledge base file")->required();
  cluster_cmd->add_option("--manifest", cluster.manifest, "Manifest for facet columns")->required();
  cluster_cmd->add_option("--out,-o", cluster.out, "Output CSV")->required();
  cluster_cmd->add_option("-k", cluster.k, "Cluster count")->check(CLI::PositiveNumber);
  cluster_cmd->add_option("--seed", cluster.seed, "k-means++ seed");
  cluster_cmd->add_option("--restarts", cluster.restarts, "k-means restarts")->check(CLI::PositiveNumber);
  cluster_cmd->add_flag("--json", cluster.json, "Machine-readable output");

  std::string stats_manifest;
  bool stats_json = false;
  auto* stats_cmd = app.add_subcommand("stats", "Facet counts of a manifest");
  stats_cmd->add_option("--manifest", stats_manifest)->required();
  stats_cmd->add_flag("--json", stats_json);

  std::string validate_manifest_path;
  bool validate_json = false;
  auto* validate_cmd = app.add_subcommand("validate", "Report every manifest violation");
  validate_cmd->add_option("--manifest", validate_manifest_path)->required();
  validate_cmd->add_flag("--json", validate_json);

  TermsArgs terms;
  auto* terms_cmd = app.add_subcommand("terms", "Term frequencies as CSV");
  terms_cmd->add_option("--manifest", terms.manifest)->required();
  terms_cmd->add_option("--language", terms.language)->check(CLI::IsMember({"zh", "en"}));
  terms_cmd->add_option("--stopwords", terms.stopwords, "Stopword file, one per line");
  terms_cmd->add_option("--out,-o", terms.out, "Output CSV (default stdout)");
  terms_cmd->add_option("--top", terms.top, "Keep only the first N terms");

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP search service");
  serve_cmd->add_option("--config", config_path)->required();

  std::size_t provider_dim = 64;
  std::string provider_bind = "127.0.0.1:8090";
  auto* provider_cmd = app.add_subcommand("provider", "Run the loopback stub embedding provider");
  provider_cmd->add_option("--dim", provider_dim)->check(CLI::PositiveNumber);
  provider_cmd->add_option("--bind", provider_bind, "host:port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUser;
  }

  try {
    if (*build_cmd) return cmd_build(build);
    if (*search_cmd) return cmd_search(search_args);
    if (*cluster_cmd) return cmd_cluster(cluster);
    if (*stats_cmd) return cmd_stats(stats_manifest, stats_json);
    if (*validate_cmd) return cmd_validate(validate_manifest_path, validate_json);
    if (*terms_cmd) return cmd_terms(terms);
    if (*serve_cmd) return cmd_serve(config_path);
    if (*provider_cmd) return cmd_provider(provider_dim, provider_bind);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitUser;
}
