#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dendrite/registry.hpp"

namespace dendrite {

enum class Role { supplier, carrier, vendor, admin };

std::string_view to_string(Role role);
std::optional<Role> parse_role(std::string_view text);

struct ApiToken {
  std::string token;
  Role role = Role::vendor;
  std::string actor;  // principal recorded on tracking events
};

struct ServiceConfig {
  std::string store_path;  // "" keeps the registry in memory
  RegistryConfig registry;
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  int threads = 8;
  std::vector<ApiToken> tokens;
};

// JSON document:
//   {"store_path": "...", "accept_threshold": 0.75, "suspect_threshold": 0.5,
//    "k": 25, "tau_node": 4.0, "host": "127.0.0.1", "port": 8080, "threads": 8,
//    "tokens": [{"token": "...", "role": "admin", "actor": "ops"}]}
// Every key is optional. Throws invalid-params on bad values.
ServiceConfig config_from_json(const nlohmann::json& doc);
ServiceConfig load_config(const std::filesystem::path& path);

struct ApiRequestContext {
  std::string token;
  Role role = Role::vendor;
  std::string actor;
  std::string request_id;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);  // bad-request on malformed input

// HTTP status used for an error code.
int http_status(ErrorCode code);

// JSON bodies shared by the HTTP layer and the CLI.
nlohmann::ordered_json record_summary_json(const ProductRecord& record);
nlohmann::ordered_json identify_json(const IdentifyResult& result);
nlohmann::ordered_json authentication_json(const Authentication& auth);

// HTTP facade over a Registry.
//
//   GET  /health                        no token
//   GET  /session                       any role
//   POST /tags                          supplier, admin
//   POST /products                      supplier, admin
//   GET  /products?status=&offset=&limit=  any role
//   GET  /products/{id}                 any role
//   GET  /products/{id}/history         any role
//   GET  /products/{id}/image           any role
//   POST /products/{id}/flag/clear      admin
//   POST /products/{id}/retire          admin
//   POST /identify                      any role
//   POST /scan                          any role
//   POST /admin/refit                   admin
//
// Tokens travel as "Authorization: Bearer <token>". Images arrive either as a
// multipart file field "image" or as base64 PNG in the JSON field
// "image_base64". An X-Request-Id header is echoed, otherwise one is generated;
// it appears in every response body, the X-Request-Id header, and audit reasons.
// Errors are {"error": code, "message": text, "request_id": id}.
class Service {
 public:
  Service(Registry& registry, ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the listening socket and returns the port. Throws bind-failure.
  int bind();
  // Serves until stop(); bind() is called first if needed.
  void run();
  // bind() plus run() on a background thread.
  int start();
  // Stops accepting and waits for in-flight requests to finish.
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Opens the registry named in `config` and serves until SIGINT or SIGTERM.
// store-corruption and bind-failure propagate before anything is served.
void serve(const ServiceConfig& config);

}  // namespace dendrite
