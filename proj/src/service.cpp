#include "dendrite/service.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>

#include "dendrite/png_io.hpp"

namespace dendrite {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::supplier: return "supplier";
    case Role::carrier: return "carrier";
    case Role::vendor: return "vendor";
    case Role::admin: return "admin";
  }
  return "unknown";
}

std::optional<Role> parse_role(std::string_view text) {
  for (Role r : {Role::supplier, Role::carrier, Role::vendor, Role::admin}) {
    if (to_string(r) == text) return r;
  }
  return std::nullopt;
}

ServiceConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::invalid_params, "config must be a JSON object");
  ServiceConfig c;
  try {
    c.store_path = doc.value("store_path", c.store_path);
    c.registry.accept_threshold = doc.value("accept_threshold", c.registry.accept_threshold);
    c.registry.suspect_threshold = doc.value("suspect_threshold", c.registry.suspect_threshold);
    c.registry.k = doc.value("k", c.registry.k);
    c.registry.auto_refit = doc.value("auto_refit", c.registry.auto_refit);
    c.registry.match.tau_node = doc.value("tau_node", c.registry.match.tau_node);
    c.host = doc.value("host", c.host);
    c.port = doc.value("port", c.port);
    c.threads = doc.value("threads", c.threads);
    if (doc.contains("tokens")) {
      for (const auto& t : doc.at("tokens")) {
        ApiToken token;
        token.token = t.at("token").get<std::string>();
        const auto role = parse_role(t.at("role").get<std::string>());
        if (!role) throw Error(ErrorCode::invalid_params, "unknown role '" + t.at("role").get<std::string>() + "'");
        token.role = *role;
        token.actor = t.value("actor", std::string(to_string(token.role)));
        if (token.token.empty()) throw Error(ErrorCode::invalid_params, "empty token");
        c.tokens.push_back(std::move(token));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_params, std::string("bad config: ") + e.what());
  }
  const auto& r = c.registry;
  if (!(r.accept_threshold > 0.0 && r.accept_threshold <= 1.0) ||
      !(r.suspect_threshold >= 0.0 && r.suspect_threshold <= r.accept_threshold)) {
    throw Error(ErrorCode::invalid_params, "need 0 <= suspect_threshold <= accept_threshold <= 1");
  }
  if (r.k == 0) throw Error(ErrorCode::invalid_params, "k must be positive");
  if (!(r.match.tau_node > 0.0)) throw Error(ErrorCode::invalid_params, "tau_node must be positive");
  if (c.port < 0 || c.port > 65535) throw Error(ErrorCode::invalid_params, "port out of range");
  if (c.threads < 1) throw Error(ErrorCode::invalid_params, "threads must be positive");
  return c;
}

ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::invalid_params, "cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_params, "config " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string clean;
  clean.reserve(text.size());
  for (char ch : text) {
    if (ch == '\n' || ch == '\r' || ch == ' ' || ch == '\t') continue;
    clean.push_back(ch);
  }
  if (clean.size() % 4 != 0) throw Error(ErrorCode::bad_request, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw Error(ErrorCode::bad_request, "malformed base64");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::unauthorized: return 401;
    case ErrorCode::forbidden: return 403;
    case ErrorCode::unknown_record: return 404;
    case ErrorCode::duplicate_tag:
    case ErrorCode::invalid_transition:
    case ErrorCode::empty_registry:
    case ErrorCode::empty_index:
    case ErrorCode::insufficient_samples:
    case ErrorCode::degenerate_covariance:
    case ErrorCode::model_version_missing:
    case ErrorCode::model_version_mismatch:
      return 409;
    case ErrorCode::empty_foreground:
    case ErrorCode::degenerate_pattern:
    case ErrorCode::degenerate_graph:
      return 422;
    case ErrorCode::invalid_params:
    case ErrorCode::decode_failure:
    case ErrorCode::dimension_mismatch:
    case ErrorCode::bad_request:
      return 400;
    case ErrorCode::store_failure:
    case ErrorCode::store_corruption:
    case ErrorCode::bind_failure:
      return 500;
  }
  return 500;
}

ojson record_summary_json(const ProductRecord& record) {
  ojson j = to_json(record);
  j.erase("graph");
  j.erase("feature_vector");
  j["node_count"] = record.graph.nodes.size();
  j["edge_count"] = record.graph.edges.size();
  return j;
}

namespace {

ojson score_json(const MatchScore& s) {
  return {{"record_id", s.candidate_id}, {"score", s.value}, {"matched_nodes", s.matched_nodes}};
}

}  // namespace

ojson identify_json(const IdentifyResult& r) {
  ojson j;
  j["decision"] = r.decision == Decision::matched ? "matched" : "no_match";
  j["best"] = r.best ? score_json(*r.best) : ojson();
  auto& ranked = j["ranked"] = ojson::array();
  for (const auto& s : r.ranked) ranked.push_back(score_json(s));
  j["shortlist_size"] = r.shortlist_size;
  j["elapsed_ms"] = r.elapsed * 1000.0;
  if (r.secondary) {
    j["secondary"] = {{"authentic", r.secondary->authentic},
                      {"confidence", r.secondary->confidence},
                      {"method", r.secondary->method}};
  } else {
    j["secondary"] = nullptr;
  }
  return j;
}

ojson authentication_json(const Authentication& a) {
  ojson j = identify_json(a.result);
  j["audit"] = to_json(a.audit);
  j["event"] = a.event ? to_json(*a.event) : ojson();
  j["flagged"] = a.flagged ? ojson(*a.flagged) : ojson();
  return j;
}

// ---------------------------------------------------------------------------

namespace {

// Any authenticated role when the list is empty; no authentication when unset.
using Roles = std::optional<std::vector<Role>>;
const Roles kPublic = std::nullopt;
const Roles kAnyRole = std::vector<Role>{};

json parse_body(const httplib::Request& req) {
  if (req.is_multipart_form_data()) {
    json fields = json::object();
    for (const auto& [name, part] : req.files) {
      if (part.filename.empty()) fields[name] = part.content;
    }
    return fields;
  }
  if (req.body.empty()) return json::object();
  try {
    json doc = json::parse(req.body);
    if (!doc.is_object()) throw Error(ErrorCode::bad_request, "request body must be a JSON object");
    return doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::bad_request, std::string("malformed JSON body: ") + e.what());
  }
}

std::vector<std::uint8_t> image_bytes(const httplib::Request& req, const json& body) {
  if (req.is_multipart_form_data() && req.has_file("image")) {
    const auto& content = req.get_file_value("image").content;
    return {content.begin(), content.end()};
  }
  if (body.contains("image_base64") && body.at("image_base64").is_string()) {
    return base64_decode(body.at("image_base64").get<std::string>());
  }
  throw Error(ErrorCode::bad_request, "missing image (multipart field 'image' or JSON 'image_base64')");
}

int threshold_of(const json& body) {
  if (!body.contains("threshold")) return 128;
  const auto& t = body.at("threshold");
  int v = 128;
  if (t.is_number_integer()) {
    v = t.get<int>();
  } else if (t.is_string()) {
    try {
      v = std::stoi(t.get<std::string>());
    } catch (const std::exception&) {
      throw Error(ErrorCode::bad_request, "threshold must be an integer");
    }
  } else {
    throw Error(ErrorCode::bad_request, "threshold must be an integer");
  }
  if (v < 1 || v > 255) throw Error(ErrorCode::bad_request, "threshold must be in [1, 255]");
  return v;
}

std::string string_field(const json& body, const char* key, bool required = false) {
  if (!body.contains(key) || body.at(key).is_null()) {
    if (required) throw Error(ErrorCode::bad_request, std::string("missing field '") + key + "'");
    return {};
  }
  if (!body.at(key).is_string()) throw Error(ErrorCode::bad_request, std::string("field '") + key + "' must be a string");
  return body.at(key).get<std::string>();
}

std::optional<double> number_field(const json& body, const char* key) {
  if (!body.contains(key) || body.at(key).is_null()) return std::nullopt;
  const auto& v = body.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v.get<std::string>(), &used);
      if (used == v.get<std::string>().size()) return d;
    } catch (const std::exception&) {
    }
  }
  throw Error(ErrorCode::bad_request, std::string("field '") + key + "' must be a number");
}

RecordId record_id_of(const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used == text.size()) return static_cast<RecordId>(v);
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::bad_request, "bad record id '" + text + "'");
}

std::size_t size_param(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string text = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used == text.size()) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::bad_request, std::string("bad '") + key + "' parameter");
}

bool valid_request_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  for (unsigned char ch : id) {
    if (ch < 0x21 || ch > 0x7e) return false;
  }
  return true;
}

}  // namespace

struct Service::Impl {
  Registry& registry;
  ServiceConfig config;
  httplib::Server server;
  std::thread thread;
  int port = -1;
  std::mutex mutex;
  std::mt19937_64 rng{std::random_device{}()};
  std::atomic<std::uint64_t> counter{0};

  using Handler = std::function<std::optional<ojson>(const httplib::Request&, httplib::Response&,
                                                     const ApiRequestContext&)>;

  Impl(Registry& r, ServiceConfig c) : registry(r), config(std::move(c)) {
    const int threads = config.threads;
    server.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    server.set_payload_max_length(64u << 20);
    // The library default adds SO_REUSEPORT, which would let a second
    // instance share the port instead of failing to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
    });
    install_routes();
  }

  std::string new_request_id() {
    std::uint64_t r;
    {
      std::lock_guard lock(mutex);
      r = rng();
    }
    char buf[40];
    std::snprintf(buf, sizeof(buf), "req-%012llx-%llu", static_cast<unsigned long long>(r & 0xffffffffffffULL),
                   static_cast<unsigned long long>(++counter));
    return buf;
  }

  ApiRequestContext authenticate(const httplib::Request& req, const Roles& roles, std::string request_id) const {
    ApiRequestContext ctx;
    ctx.request_id = std::move(request_id);
    if (!roles) return ctx;
    const std::string header = req.get_header_value("Authorization");
    constexpr std::string_view kBearer = "Bearer ";
    if (header.rfind(kBearer, 0) != 0) throw Error(ErrorCode::unauthorized, "missing bearer token");
    const std::string token = header.substr(kBearer.size());
    for (const auto& t : config.tokens) {
      if (t.token == token) {
        ctx.token = t.token;
        ctx.role = t.role;
        ctx.actor = t.actor;
        if (!roles->empty() && std::find(roles->begin(), roles->end(), t.role) == roles->end()) {
          throw Error(ErrorCode::forbidden, "role " + std::string(to_string(t.role)) + " may not call this endpoint");
        }
        return ctx;
      }
    }
    throw Error(ErrorCode::unauthorized, "unknown token");
  }

  httplib::Server::Handler wrap(Roles roles, Handler handler) {
    return [this, roles = std::move(roles), handler = std::move(handler)](const httplib::Request& req,
                                                                          httplib::Response& res) {
      std::string request_id = req.get_header_value("X-Request-Id");
      if (!valid_request_id(request_id)) request_id = new_request_id();
      res.set_header("X-Request-Id", request_id);
      const auto fail = [&](int status, std::string_view code, const std::string& message, ojson extra = {}) {
        ojson body;
        body["error"] = code;
        body["message"] = message;
        body["request_id"] = request_id;
        if (extra.is_object()) {
          for (auto it = extra.begin(); it != extra.end(); ++it) body[it.key()] = it.value();
        }
        res.status = status;
        res.set_content(body.dump(), "application/json");
      };
      try {
        const ApiRequestContext ctx = authenticate(req, roles, request_id);
        res.status = 200;
        auto body = handler(req, res, ctx);
        if (body) {
          (*body)["request_id"] = request_id;
          res.set_content(body->dump(), "application/json");
        }
      } catch (const DuplicateTagError& e) {
        fail(http_status(e.code()), e.name(), e.what(), {{"record_id", e.existing()}, {"score", e.score()}});
      } catch (const Error& e) {
        fail(http_status(e.code()), e.name(), e.what());
      } catch (const std::exception& e) {
        fail(500, "internal", e.what());
      }
    };
  }

  void install_routes() {
    server.Get("/health", wrap(kPublic, [this](const auto&, auto&, const auto&) -> std::optional<ojson> {
      const auto model = registry.model();
      ojson j;
      j["status"] = "ok";
      j["records"] = registry.size();
      j["model_version"] = model ? ojson(model->version) : ojson();
      return j;
    }));

    server.Get("/session", wrap(kAnyRole, [](const auto&, auto&, const ApiRequestContext& ctx) -> std::optional<ojson> {
      return ojson{{"role", to_string(ctx.role)}, {"actor", ctx.actor}};
    }));

    const Roles suppliers = std::vector<Role>{Role::supplier, Role::admin};
    const Roles admins = std::vector<Role>{Role::admin};

    server.Post("/tags", wrap(suppliers, [this](const httplib::Request& req, httplib::Response& res,
                                                const ApiRequestContext& ctx) -> std::optional<ojson> {
      const json body = parse_body(req);
      const auto png = image_bytes(req, body);
      const DendriteImage image = ingest(png, threshold_of(body));
      const auto p = registry.personalize(image, ctx.actor, png);
      res.status = 201;
      return ojson{{"record_id", p.record_id}, {"tag_id", p.tag_id.hex()}, {"status", "personalized"}};
    }));

    server.Post("/products", wrap(suppliers, [this](const httplib::Request& req, httplib::Response& res,
                                                    const ApiRequestContext& ctx) -> std::optional<ojson> {
      const json body = parse_body(req);
      RecordId id = 0;
      if (body.contains("record_id") && body.at("record_id").is_number_unsigned()) {
        id = body.at("record_id").get<RecordId>();
      } else if (body.contains("record_id") && body.at("record_id").is_string()) {
        id = record_id_of(body.at("record_id").get<std::string>());
      } else {
        throw Error(ErrorCode::bad_request, "missing field 'record_id'");
      }
      ProductInfo info;
      info.name = string_field(body, "name", true);
      info.supplier = string_field(body, "supplier");
      info.batch = string_field(body, "batch");
      info.description = string_field(body, "description");
      const auto record = registry.register_product(id, std::move(info), ctx.actor);
      res.status = 201;
      return record_summary_json(record);
    }));

    server.Get("/products", wrap(kAnyRole, [this](const httplib::Request& req, auto&,
                                                  const auto&) -> std::optional<ojson> {
      std::optional<RecordStatus> status;
      if (req.has_param("status") && !req.get_param_value("status").empty()) {
        status = parse_status(req.get_param_value("status"));
        if (!status) throw Error(ErrorCode::bad_request, "unknown status '" + req.get_param_value("status") + "'");
      }
      const std::size_t offset = size_param(req, "offset", 0);
      const std::size_t limit = std::min<std::size_t>(size_param(req, "limit", 50), 1000);
      ojson j;
      auto& records = j["records"] = ojson::array();
      for (const auto& r : registry.list(status, offset, limit)) records.push_back(record_summary_json(r));
      j["total"] = registry.count(status);
      j["offset"] = offset;
      j["limit"] = limit;
      return j;
    }));

    server.Get(R"(/products/(\d+))", wrap(kAnyRole, [this](const httplib::Request& req, auto&,
                                                           const auto&) -> std::optional<ojson> {
      return record_summary_json(registry.get(record_id_of(req.matches[1])));
    }));

    server.Get(R"(/products/(\d+)/history)", wrap(kAnyRole, [this](const httplib::Request& req, auto&,
                                                                   const auto&) -> std::optional<ojson> {
      const RecordId id = record_id_of(req.matches[1]);
      ojson j;
      j["record_id"] = id;
      auto& events = j["events"] = ojson::array();
      for (const auto& e : registry.history(id)) events.push_back(to_json(e));
      return j;
    }));

    server.Get(R"(/products/(\d+)/image)", wrap(kAnyRole, [this](const httplib::Request& req, httplib::Response& res,
                                                                 const auto&) -> std::optional<ojson> {
      const RecordId id = record_id_of(req.matches[1]);
      const auto png = registry.reference_image(id);
      if (!png) throw Error(ErrorCode::unknown_record, "record " + std::to_string(id) + " has no stored image");
      res.set_content(std::string(png->begin(), png->end()), "image/png");
      return std::nullopt;
    }));

    server.Post(R"(/products/(\d+)/flag/clear)", wrap(admins, [this](const httplib::Request& req, auto&,
                                                                     const ApiRequestContext& ctx) -> std::optional<ojson> {
      return record_summary_json(registry.clear_flag(record_id_of(req.matches[1]), ctx.actor));
    }));

    server.Post(R"(/products/(\d+)/retire)", wrap(admins, [this](const httplib::Request& req, auto&,
                                                                 const ApiRequestContext& ctx) -> std::optional<ojson> {
      return record_summary_json(registry.retire(record_id_of(req.matches[1]), ctx.actor));
    }));

    server.Post("/identify", wrap(kAnyRole, [this](const httplib::Request& req, auto&,
                                                   const auto&) -> std::optional<ojson> {
      const json body = parse_body(req);
      const auto png = image_bytes(req, body);
      return identify_json(registry.identify(ingest(png, threshold_of(body))));
    }));

    server.Post("/scan", wrap(kAnyRole, [this](const httplib::Request& req, auto&,
                                               const ApiRequestContext& ctx) -> std::optional<ojson> {
      ScanContext scan;
      scan.actor = ctx.actor;
      scan.request_id = ctx.request_id;
      // Malformed requests and undecodable uploads are authentication attempts
      // too and get an audit entry.
      std::vector<std::uint8_t> bytes;
      DendriteImage image;
      try {
        const json body = parse_body(req);
        const std::string kind = string_field(body, "kind");
        if (!kind.empty()) {
          const auto k = parse_event_kind(kind);
          if (!k) throw Error(ErrorCode::bad_request, "unknown scan kind '" + kind + "'");
          scan.kind = *k;
        }
        if (body.contains("location") && body.at("location").is_object()) {
          const auto& l = body.at("location");
          scan.location = {string_field(l, "text"), number_field(l, "lat"), number_field(l, "lon")};
        } else {
          scan.location = {string_field(body, "location"), number_field(body, "lat"), number_field(body, "lon")};
        }
        bytes = image_bytes(req, body);
        image = ingest(bytes, threshold_of(body));
      } catch (const Error& e) {
        registry.record_failed_attempt(bytes_fingerprint(bytes), e.code(), scan);
        throw;
      }
      return authentication_json(registry.authenticate_and_track(image, scan));
    }));

    server.Post("/admin/refit", wrap(admins, [this](const auto&, auto&, const auto&) -> std::optional<ojson> {
      const auto model = registry.refit_and_reindex();
      return ojson{{"version", model.version}, {"trained_on", model.trained_on}};
    }));
  }
};

Service::Service(Registry& registry, ServiceConfig config)
    : impl_(std::make_unique<Impl>(registry, std::move(config))) {}

Service::~Service() { stop(); }

int Service::bind() {
  if (impl_->port >= 0) return impl_->port;
  int port = -1;
  if (impl_->config.port == 0) {
    port = impl_->server.bind_to_any_port(impl_->config.host);
  } else if (impl_->server.bind_to_port(impl_->config.host, impl_->config.port)) {
    port = impl_->config.port;
  }
  if (port < 0) {
    throw Error(ErrorCode::bind_failure,
                "cannot listen on " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  }
  impl_->port = port;
  return port;
}

void Service::run() {
  bind();
  impl_->server.listen_after_bind();
}

int Service::start() {
  const int port = bind();
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void Service::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int Service::port() const { return impl_->port; }

namespace {

std::atomic<bool> g_shutdown{false};

extern "C" void on_signal(int) { g_shutdown.store(true); }

}  // namespace

void serve(const ServiceConfig& config) {
  Registry registry(config.store_path, config.registry);
  Service service(registry, config);
  const int port = service.bind();
  std::cerr << "dendrite: serving " << registry.size() << " records on " << config.host << ":" << port << "\n";
  g_shutdown.store(false);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::atomic<bool> done{false};
  std::thread watcher([&] {
    while (!done.load()) {
      if (g_shutdown.load()) {
        service.stop();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  service.run();
  done.store(true);
  watcher.join();
  service.stop();
  std::cerr << "dendrite: stopped\n";
}

}  // namespace dendrite
