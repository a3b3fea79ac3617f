#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dendrite/error.hpp"
#include "dendrite/features.hpp"
#include "dendrite/graph.hpp"
#include "dendrite/graph_extract.hpp"
#include "dendrite/image.hpp"
#include "dendrite/matcher.hpp"

namespace dendrite {

class Store;

enum class RecordStatus { personalized, registered, in_transit, delivered, flagged, retired };

enum class EventKind { personalized, registered, scanned, transferred, delivered, flag_raised, flag_cleared, retired };

enum class AuditOutcome { success, failure };

std::string_view to_string(RecordStatus status);
std::string_view to_string(EventKind kind);
std::string_view to_string(AuditOutcome outcome);
std::optional<RecordStatus> parse_status(std::string_view text);
std::optional<EventKind> parse_event_kind(std::string_view text);
std::optional<AuditOutcome> parse_outcome(std::string_view text);

// Lifecycle edges. A flagged record may return to any of the non-terminal
// states, but clear_flag only ever restores the one it was flagged from.
bool transition_allowed(RecordStatus from, RecordStatus to);

// Status a successful scan of `kind` moves a record to, or nullopt when the
// scan kind is not valid from `current`. Plain scans never change status.
std::optional<RecordStatus> status_after_scan(RecordStatus current, EventKind kind);

struct ProductInfo {
  std::string name;
  std::string supplier;
  std::string batch;
  std::string description;
  std::string created_at;  // set by register_product
};

struct ProductRecord {
  RecordId record_id = 0;
  TagId tag_id;
  KeyPointGraph graph;
  FeatureVector feature_vector;
  Surrogate surrogate;
  std::optional<ProductInfo> product_info;
  RecordStatus status = RecordStatus::personalized;
  std::optional<RecordStatus> prior_status;  // while flagged
  std::string created_at;
};

struct Location {
  std::string text;
  std::optional<double> lat;
  std::optional<double> lon;
};

struct TrackingEvent {
  std::uint64_t event_id = 0;
  RecordId record_id = 0;
  std::string timestamp;
  Location location;
  std::string actor;
  EventKind kind = EventKind::scanned;
  std::optional<double> auth_score;
};

struct AuditEntry {
  std::uint64_t entry_id = 0;
  std::string timestamp;
  std::optional<RecordId> record_id;
  AuditOutcome outcome = AuditOutcome::failure;
  std::string reason;
  std::string request_fingerprint;  // hex SHA-256 of the submitted raster
};

struct ScanContext {
  Location location;
  std::string actor;
  EventKind kind = EventKind::scanned;  // scanned, transferred or delivered
  std::string request_id;               // appended to the audit reason when set
};

// duplicate-tag, naming the record the new tag collides with.
class DuplicateTagError : public Error {
 public:
  DuplicateTagError(RecordId existing, double score)
      : Error(ErrorCode::duplicate_tag, "tag duplicates record " + std::to_string(existing) + " (score " +
                                            std::to_string(score) + ")"),
        existing_(existing),
        score_(score) {}
  RecordId existing() const noexcept { return existing_; }
  double score() const noexcept { return score_; }

 private:
  RecordId existing_;
  double score_;
};

struct RegistryConfig {
  double accept_threshold = 0.75;
  double suspect_threshold = 0.5;
  std::size_t k = 25;
  // Refit automatically once the record count reaches twice the size the
  // current model was trained on (first fit at 3 records).
  bool auto_refit = true;
  MatchOptions match;
  ExtractOptions extract;
};

struct Personalized {
  RecordId record_id = 0;
  TagId tag_id;
};

struct Authentication {
  IdentifyResult result;
  AuditEntry audit;
  std::optional<TrackingEvent> event;     // appended on a match
  std::optional<RecordId> flagged;        // record moved to flagged by this attempt
};

// Hex SHA-256 over the raster dimensions and pixels.
std::string image_fingerprint(const DendriteImage& image);
// Hex SHA-256 of raw bytes, for uploads that never decoded to a raster.
std::string bytes_fingerprint(const std::vector<std::uint8_t>& bytes);

// Current UTC time as ISO-8601 with milliseconds, e.g. 2026-01-31T12:00:00.000Z.
std::string utc_now_iso8601();

// Product records, their tracking history and the authentication audit log,
// persisted in a SQLite store ("" or ":memory:" keeps everything in memory).
//
// Writers are serialized. identify and the matching half of
// authenticate_and_track run against an immutable index snapshot, so a
// concurrent refit or personalize is never observed half-applied.
class Registry {
 public:
  explicit Registry(const std::string& store_path = "", RegistryConfig config = {});
  ~Registry();
  Registry(const Registry&) = delete;
  Registry& operator=(const Registry&) = delete;

  const RegistryConfig& config() const { return config_; }

  // Rejects the tag if it scores >= accept_threshold against any active
  // record. `png` is kept as the record's reference image when non-empty.
  Personalized personalize(const DendriteImage& image, const std::string& actor = "system",
                           const std::vector<std::uint8_t>& png = {});
  ProductRecord register_product(RecordId id, ProductInfo info, const std::string& actor = "system");

  // Exactly one audit entry per call, including when extraction fails or the
  // requested transition is invalid (both rethrown after the entry is written).
  Authentication authenticate_and_track(const DendriteImage& image, const ScanContext& context);

  // Failure audit entry for an attempt rejected before it reached
  // authenticate_and_track (e.g. an undecodable upload).
  AuditEntry record_failed_attempt(const std::string& fingerprint, ErrorCode reason, const ScanContext& context);

  // Identification only; nothing is written.
  IdentifyResult identify(const DendriteImage& image) const;

  ProductRecord clear_flag(RecordId id, const std::string& actor = "system");
  ProductRecord retire(RecordId id, const std::string& actor = "system");

  ProjectionModel refit_and_reindex();

  ProductRecord get(RecordId id) const;
  std::vector<ProductRecord> list(std::optional<RecordStatus> status = std::nullopt, std::size_t offset = 0,
                                  std::size_t limit = SIZE_MAX) const;
  std::size_t size() const;
  std::size_t count(std::optional<RecordStatus> status) const;
  std::vector<TrackingEvent> history(RecordId id) const;
  std::vector<AuditEntry> audit_log() const;
  std::size_t audit_count() const;
  std::optional<std::vector<std::uint8_t>> reference_image(RecordId id) const;

  std::shared_ptr<const SearchIndex> snapshot() const;
  std::shared_ptr<const ProjectionModel> model() const;

  // Backup document with records, events, audit and the current model.
  nlohmann::ordered_json export_json() const;
  // Loads a backup into an empty registry.
  void import_json(const nlohmann::json& doc);

 private:
  struct Entry {
    ProductRecord record;
    std::shared_ptr<const PreparedGraph> prepared;
  };

  void publish_locked();
  std::string next_timestamp_locked();
  TrackingEvent make_event_locked(RecordId id, EventKind kind, const std::string& actor, const Location& where,
                                  std::optional<double> score);
  AuditEntry make_audit_locked(std::optional<RecordId> id, AuditOutcome outcome, std::string reason,
                               const std::string& fingerprint);
  void write_audit_only(AuditEntry& entry);
  const Entry& entry_locked(RecordId id) const;

  RegistryConfig config_;
  std::unique_ptr<Store> store_;

  mutable std::shared_mutex state_mutex_;  // records_, events_, audit_, model_
  std::mutex writer_mutex_;                // serializes mutations
  std::map<RecordId, Entry> records_;
  std::map<RecordId, std::vector<TrackingEvent>> events_;
  std::vector<AuditEntry> audit_;
  std::shared_ptr<const ProjectionModel> model_;
  RecordId next_record_id_ = 1;
  std::uint64_t next_event_id_ = 1;
  std::uint64_t next_entry_id_ = 1;
  std::string last_timestamp_;

  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const SearchIndex> snapshot_;
};

nlohmann::ordered_json to_json(const ProductRecord& record);
nlohmann::ordered_json to_json(const TrackingEvent& event);
nlohmann::ordered_json to_json(const AuditEntry& entry);
ProductRecord record_from_json(const nlohmann::json& doc);
TrackingEvent event_from_json(const nlohmann::json& doc);
AuditEntry audit_from_json(const nlohmann::json& doc);

}  // namespace dendrite
