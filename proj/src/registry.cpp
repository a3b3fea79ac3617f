#include "dendrite/registry.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <set>
#include <utility>

#include "store.hpp"

namespace dendrite {

namespace {

constexpr std::pair<RecordStatus, std::string_view> kStatusNames[] = {
    {RecordStatus::personalized, "personalized"}, {RecordStatus::registered, "registered"},
    {RecordStatus::in_transit, "in_transit"},     {RecordStatus::delivered, "delivered"},
    {RecordStatus::flagged, "flagged"},           {RecordStatus::retired, "retired"},
};

constexpr std::pair<EventKind, std::string_view> kEventNames[] = {
    {EventKind::personalized, "personalized"}, {EventKind::registered, "registered"},
    {EventKind::scanned, "scanned"},           {EventKind::transferred, "transferred"},
    {EventKind::delivered, "delivered"},       {EventKind::flag_raised, "flag_raised"},
    {EventKind::flag_cleared, "flag_cleared"}, {EventKind::retired, "retired"},
};

template <typename E, std::size_t N>
std::string_view name_of(const std::pair<E, std::string_view> (&table)[N], E value) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "unknown";
}

template <typename E, std::size_t N>
std::optional<E> value_of(const std::pair<E, std::string_view> (&table)[N], std::string_view text) {
  for (const auto& [v, name] : table) {
    if (name == text) return v;
  }
  return std::nullopt;
}

bool is_active(RecordStatus s) { return s != RecordStatus::retired; }

std::string with_request(std::string reason, const std::string& request_id) {
  if (!request_id.empty()) reason += " request_id=" + request_id;
  return reason;
}

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::string_view to_string(RecordStatus status) { return name_of(kStatusNames, status); }
std::string_view to_string(EventKind kind) { return name_of(kEventNames, kind); }
std::string_view to_string(AuditOutcome outcome) { return outcome == AuditOutcome::success ? "success" : "failure"; }

std::optional<RecordStatus> parse_status(std::string_view text) { return value_of(kStatusNames, text); }
std::optional<EventKind> parse_event_kind(std::string_view text) { return value_of(kEventNames, text); }
std::optional<AuditOutcome> parse_outcome(std::string_view text) {
  if (text == "success") return AuditOutcome::success;
  if (text == "failure") return AuditOutcome::failure;
  return std::nullopt;
}

bool transition_allowed(RecordStatus from, RecordStatus to) {
  using S = RecordStatus;
  switch (from) {
    case S::personalized:
      return to == S::registered || to == S::flagged;
    case S::registered:
      return to == S::in_transit || to == S::flagged;
    case S::in_transit:
      return to == S::in_transit || to == S::delivered || to == S::flagged;
    case S::delivered:
      return to == S::flagged;
    case S::flagged:
      return to != S::flagged;
    case S::retired:
      return false;
  }
  return false;
}

std::optional<RecordStatus> status_after_scan(RecordStatus current, EventKind kind) {
  using S = RecordStatus;
  if (current == S::retired) return std::nullopt;
  switch (kind) {
    case EventKind::scanned:
      return current;
    case EventKind::transferred:
      if (current == S::registered || current == S::in_transit) return S::in_transit;
      return std::nullopt;
    case EventKind::delivered:
      if (current == S::in_transit) return S::delivered;
      return std::nullopt;
    default:
      return std::nullopt;
  }
}

namespace {

std::string sha256_hex(std::initializer_list<std::pair<const void*, std::size_t>> parts) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1;
  for (const auto& [data, size] : parts) ok = ok && EVP_DigestUpdate(ctx, data, size) == 1;
  ok = ok && EVP_DigestFinal_ex(ctx, digest, &length) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(ErrorCode::store_failure, "sha256 unavailable");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

}  // namespace

std::string image_fingerprint(const DendriteImage& image) {
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(image.width), static_cast<std::uint32_t>(image.height)};
  return sha256_hex({{dims, sizeof(dims)}, {image.pixels.data(), image.pixels.size()}});
}

std::string bytes_fingerprint(const std::vector<std::uint8_t>& bytes) {
  return sha256_hex({{bytes.data(), bytes.size()}});
}

std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
  return buf;
}

// ---------------------------------------------------------------------------

Registry::Registry(const std::string& store_path, RegistryConfig config)
    : config_(std::move(config)), store_(std::make_unique<Store>(store_path)) {
  if (!(config_.suspect_threshold <= config_.accept_threshold) || config_.k == 0) {
    throw Error(ErrorCode::invalid_params, "need suspect_threshold <= accept_threshold and k > 0");
  }
  auto contents = store_->load();
  for (auto& r : contents.records) {
    next_record_id_ = std::max(next_record_id_, r.record_id + 1);
    if (last_timestamp_ < r.created_at) last_timestamp_ = r.created_at;
    auto prepared = std::make_shared<const PreparedGraph>(r.graph);
    const RecordId id = r.record_id;
    records_.emplace(id, Entry{std::move(r), std::move(prepared)});
  }
  for (auto& e : contents.events) {
    next_event_id_ = std::max(next_event_id_, e.event_id + 1);
    if (last_timestamp_ < e.timestamp) last_timestamp_ = e.timestamp;
    events_[e.record_id].push_back(std::move(e));
  }
  for (auto& a : contents.audit) {
    next_entry_id_ = std::max(next_entry_id_, a.entry_id + 1);
    if (last_timestamp_ < a.timestamp) last_timestamp_ = a.timestamp;
    audit_.push_back(std::move(a));
  }
  if (contents.model) model_ = std::make_shared<const ProjectionModel>(std::move(*contents.model));
  publish_locked();
}

Registry::~Registry() = default;

void Registry::publish_locked() {
  auto index = std::make_shared<SearchIndex>();
  index->model = model_;
  index->records.reserve(records_.size());
  for (const auto& [id, entry] : records_) {
    if (!is_active(entry.record.status)) continue;
    index->records.push_back({id, entry.record.surrogate, entry.prepared});
  }
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(index);
}

std::string Registry::next_timestamp_locked() {
  std::string now = utc_now_iso8601();
  if (now < last_timestamp_) now = last_timestamp_;
  last_timestamp_ = now;
  return now;
}

TrackingEvent Registry::make_event_locked(RecordId id, EventKind kind, const std::string& actor, const Location& where,
                                          std::optional<double> score) {
  TrackingEvent e;
  e.event_id = next_event_id_++;
  e.record_id = id;
  e.timestamp = next_timestamp_locked();
  e.location = where;
  e.actor = actor;
  e.kind = kind;
  e.auth_score = score;
  return e;
}

AuditEntry Registry::make_audit_locked(std::optional<RecordId> id, AuditOutcome outcome, std::string reason,
                                       const std::string& fingerprint) {
  AuditEntry a;
  a.entry_id = next_entry_id_++;
  a.timestamp = next_timestamp_locked();
  a.record_id = id;
  a.outcome = outcome;
  a.reason = std::move(reason);
  a.request_fingerprint = fingerprint;
  return a;
}

void Registry::write_audit_only(AuditEntry& entry) {
  Store::Transaction tx(*store_);
  store_->append_audit(entry);
  tx.commit();
  std::unique_lock lock(state_mutex_);
  audit_.push_back(entry);
}

const Registry::Entry& Registry::entry_locked(RecordId id) const {
  const auto it = records_.find(id);
  if (it == records_.end()) throw Error(ErrorCode::unknown_record, "no record " + std::to_string(id));
  return it->second;
}

namespace {

struct Refit {
  std::shared_ptr<const ProjectionModel> model;
  std::vector<Surrogate> surrogates;  // in records_ order, then the pending record
};

}  // namespace

Personalized Registry::personalize(const DendriteImage& image, const std::string& actor,
                                   const std::vector<std::uint8_t>& png) {
  PreparedQuery query = prepare_query(image, config_.extract);
  const TagId tag = canonical_id(query.graph);

  std::lock_guard writer(writer_mutex_);
  {
    std::shared_lock state(state_mutex_);
    for (const auto& [id, entry] : records_) {
      if (is_active(entry.record.status) && entry.record.tag_id == tag) throw DuplicateTagError(id, 1.0);
    }
    for (const auto& [id, entry] : records_) {
      if (!is_active(entry.record.status)) continue;
      const MatchScore s = graph_match_score(*query.prepared, *entry.prepared, config_.match);
      if (s.value >= config_.accept_threshold) throw DuplicateTagError(id, s.value);
    }
  }

  ProductRecord record;
  record.record_id = next_record_id_;
  record.tag_id = tag;
  record.graph = std::move(query.graph);
  record.feature_vector = query.features;
  record.status = RecordStatus::personalized;
  record.created_at = next_timestamp_locked();

  // Optional automatic refit over the existing records plus this one.
  std::optional<Refit> refit;
  const std::size_t total = records_.size() + 1;
  if (config_.auto_refit && total >= 3 && (!model_ || total >= 2 * model_->trained_on)) {
    std::vector<FeatureVector> vectors;
    vectors.reserve(total);
    for (const auto& [id, entry] : records_) vectors.push_back(entry.record.feature_vector);
    vectors.push_back(record.feature_vector);
    try {
      Refit r;
      r.model = std::make_shared<const ProjectionModel>(fit_projection(vectors, model_ ? model_->version : 0));
      r.surrogates.reserve(total);
      for (const auto& v : vectors) r.surrogates.push_back(project(v, *r.model));
      refit = std::move(r);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_covariance) throw;
    }
  }
  if (refit) {
    record.surrogate = refit->surrogates.back();
  } else if (model_) {
    record.surrogate = project(record.feature_vector, *model_);
  }

  TrackingEvent event = make_event_locked(record.record_id, EventKind::personalized, actor, Location{"personalization", {}, {}}, {});

  {
    Store::Transaction tx(*store_);
    store_->insert_record(record, png);
    store_->append_event(event);
    if (refit) {
      store_->put_model(*refit->model);
      std::size_t i = 0;
      for (const auto& [id, entry] : records_) {
        ProductRecord updated = entry.record;
        updated.surrogate = refit->surrogates[i++];
        store_->update_record(updated);
      }
    }
    tx.commit();
  }

  std::unique_lock state(state_mutex_);
  next_record_id_ = record.record_id + 1;
  if (refit) {
    model_ = refit->model;
    std::size_t i = 0;
    for (auto& [id, entry] : records_) entry.record.surrogate = refit->surrogates[i++];
  }
  const Personalized out{record.record_id, record.tag_id};
  const RecordId id = record.record_id;
  records_.emplace(id, Entry{std::move(record), query.prepared});
  events_[id].push_back(std::move(event));
  publish_locked();
  return out;
}

ProductRecord Registry::register_product(RecordId id, ProductInfo info, const std::string& actor) {
  std::lock_guard writer(writer_mutex_);
  ProductRecord updated;
  {
    std::shared_lock state(state_mutex_);
    updated = entry_locked(id).record;
  }
  if (updated.status != RecordStatus::personalized) {
    throw Error(ErrorCode::invalid_transition,
                "record " + std::to_string(id) + " is " + std::string(to_string(updated.status)) + ", not personalized");
  }
  info.created_at = next_timestamp_locked();
  updated.product_info = std::move(info);
  updated.status = RecordStatus::registered;
  TrackingEvent event = make_event_locked(id, EventKind::registered, actor, Location{"registration", {}, {}}, {});
  {
    Store::Transaction tx(*store_);
    store_->update_record(updated);
    store_->append_event(event);
    tx.commit();
  }
  std::unique_lock state(state_mutex_);
  records_.at(id).record = updated;
  events_[id].push_back(std::move(event));
  return updated;
}

Authentication Registry::authenticate_and_track(const DendriteImage& image, const ScanContext& context) {
  const std::string fingerprint = image_fingerprint(image);
  const auto fail = [&](std::optional<RecordId> id, const std::string& reason) {
    std::lock_guard writer(writer_mutex_);
    AuditEntry entry = make_audit_locked(id, AuditOutcome::failure, with_request(reason, context.request_id), fingerprint);
    write_audit_only(entry);
    return entry;
  };

  Authentication out;
  if (context.kind != EventKind::scanned && context.kind != EventKind::transferred &&
      context.kind != EventKind::delivered) {
    fail(std::nullopt, std::string(error_name(ErrorCode::invalid_params)));
    throw Error(ErrorCode::invalid_params,
                "scan kind must be scanned, transferred or delivered, not " + std::string(to_string(context.kind)));
  }
  try {
    const auto snap = snapshot();
    IdentifyOptions options;
    options.k = config_.k;
    options.accept_threshold = config_.accept_threshold;
    options.match = config_.match;
    options.extract = config_.extract;
    out.result = dendrite::identify(image, *snap, options);
  } catch (const Error& e) {
    fail(std::nullopt, std::string(e.name()));
    throw;
  }

  std::lock_guard writer(writer_mutex_);
  if (out.result.decision == Decision::matched) {
    const RecordId id = out.result.best->candidate_id;
    ProductRecord updated;
    {
      std::shared_lock state(state_mutex_);
      updated = entry_locked(id).record;
    }
    const auto next = status_after_scan(updated.status, context.kind);
    if (!next) {
      out.audit = make_audit_locked(id, AuditOutcome::failure,
                                    with_request(std::string(error_name(ErrorCode::invalid_transition)), context.request_id),
                                    fingerprint);
      write_audit_only(out.audit);
      throw Error(ErrorCode::invalid_transition, "cannot record " + std::string(to_string(context.kind)) +
                                                     " for record " + std::to_string(id) + " in status " +
                                                     std::string(to_string(updated.status)));
    }
    const bool changed = *next != updated.status;
    updated.status = *next;
    out.event = make_event_locked(id, context.kind, context.actor, context.location, out.result.best->value);
    out.audit = make_audit_locked(id, AuditOutcome::success, with_request("matched", context.request_id), fingerprint);
    {
      Store::Transaction tx(*store_);
      if (changed) store_->update_record(updated);
      store_->append_event(*out.event);
      store_->append_audit(out.audit);
      tx.commit();
    }
    std::unique_lock state(state_mutex_);
    if (changed) records_.at(id).record = updated;
    events_[id].push_back(*out.event);
    audit_.push_back(out.audit);
    return out;
  }

  // No match: flag the nearest record when the best score is suspicious.
  std::optional<ProductRecord> flag;
  if (out.result.best && out.result.best->value >= config_.suspect_threshold) {
    std::shared_lock state(state_mutex_);
    const auto it = records_.find(out.result.best->candidate_id);
    if (it != records_.end() && transition_allowed(it->second.record.status, RecordStatus::flagged)) {
      flag = it->second.record;
    }
  }
  if (!flag) {
    const bool suspicious = out.result.best && out.result.best->value >= config_.suspect_threshold;
    out.audit = make_audit_locked(suspicious ? std::optional<RecordId>(out.result.best->candidate_id) : std::nullopt,
                                  AuditOutcome::failure,
                                  with_request(suspicious ? "suspicious-match" : "no-match", context.request_id),
                                  fingerprint);
    write_audit_only(out.audit);
    return out;
  }
  const RecordId id = flag->record_id;
  flag->prior_status = flag->status;
  flag->status = RecordStatus::flagged;
  out.event = make_event_locked(id, EventKind::flag_raised, context.actor, context.location, out.result.best->value);
  out.audit =
      make_audit_locked(id, AuditOutcome::failure, with_request("suspicious-match", context.request_id), fingerprint);
  out.flagged = id;
  {
    Store::Transaction tx(*store_);
    store_->update_record(*flag);
    store_->append_event(*out.event);
    store_->append_audit(out.audit);
    tx.commit();
  }
  std::unique_lock state(state_mutex_);
  records_.at(id).record = *flag;
  events_[id].push_back(*out.event);
  audit_.push_back(out.audit);
  return out;
}

AuditEntry Registry::record_failed_attempt(const std::string& fingerprint, ErrorCode reason,
                                          const ScanContext& context) {
  std::lock_guard writer(writer_mutex_);
  AuditEntry entry = make_audit_locked(std::nullopt, AuditOutcome::failure,
                                       with_request(std::string(error_name(reason)), context.request_id), fingerprint);
  write_audit_only(entry);
  return entry;
}

IdentifyResult Registry::identify(const DendriteImage& image) const {
  const auto snap = snapshot();
  IdentifyOptions options;
  options.k = config_.k;
  options.accept_threshold = config_.accept_threshold;
  options.match = config_.match;
  options.extract = config_.extract;
  return dendrite::identify(image, *snap, options);
}

ProductRecord Registry::clear_flag(RecordId id, const std::string& actor) {
  std::lock_guard writer(writer_mutex_);
  ProductRecord updated;
  {
    std::shared_lock state(state_mutex_);
    updated = entry_locked(id).record;
  }
  if (updated.status != RecordStatus::flagged || !updated.prior_status) {
    throw Error(ErrorCode::invalid_transition, "record " + std::to_string(id) + " is not flagged");
  }
  updated.status = *updated.prior_status;
  updated.prior_status.reset();
  TrackingEvent event = make_event_locked(id, EventKind::flag_cleared, actor, Location{"inspection", {}, {}}, {});
  {
    Store::Transaction tx(*store_);
    store_->update_record(updated);
    store_->append_event(event);
    tx.commit();
  }
  std::unique_lock state(state_mutex_);
  records_.at(id).record = updated;
  events_[id].push_back(std::move(event));
  return updated;
}

ProductRecord Registry::retire(RecordId id, const std::string& actor) {
  std::lock_guard writer(writer_mutex_);
  ProductRecord updated;
  {
    std::shared_lock state(state_mutex_);
    updated = entry_locked(id).record;
  }
  if (!transition_allowed(updated.status, RecordStatus::retired)) {
    throw Error(ErrorCode::invalid_transition,
                "record " + std::to_string(id) + " is " + std::string(to_string(updated.status)) + ", not flagged");
  }
  updated.status = RecordStatus::retired;
  updated.prior_status.reset();
  TrackingEvent event = make_event_locked(id, EventKind::retired, actor, Location{"inspection", {}, {}}, {});
  {
    Store::Transaction tx(*store_);
    store_->update_record(updated);
    store_->append_event(event);
    tx.commit();
  }
  std::unique_lock state(state_mutex_);
  records_.at(id).record = updated;
  events_[id].push_back(std::move(event));
  publish_locked();
  return updated;
}

ProjectionModel Registry::refit_and_reindex() {
  std::lock_guard writer(writer_mutex_);
  std::vector<FeatureVector> vectors;
  vectors.reserve(records_.size());
  for (const auto& [id, entry] : records_) vectors.push_back(entry.record.feature_vector);
  auto model = std::make_shared<const ProjectionModel>(fit_projection(vectors, model_ ? model_->version : 0));
  std::vector<Surrogate> surrogates;
  surrogates.reserve(vectors.size());
  for (const auto& v : vectors) surrogates.push_back(project(v, *model));
  {
    Store::Transaction tx(*store_);
    store_->put_model(*model);
    std::size_t i = 0;
    for (const auto& [id, entry] : records_) {
      ProductRecord updated = entry.record;
      updated.surrogate = surrogates[i++];
      store_->update_record(updated);
    }
    tx.commit();
  }
  std::unique_lock state(state_mutex_);
  model_ = model;
  std::size_t i = 0;
  for (auto& [id, entry] : records_) entry.record.surrogate = surrogates[i++];
  publish_locked();
  return *model;
}

ProductRecord Registry::get(RecordId id) const {
  std::shared_lock state(state_mutex_);
  return entry_locked(id).record;
}

std::vector<ProductRecord> Registry::list(std::optional<RecordStatus> status, std::size_t offset,
                                          std::size_t limit) const {
  std::shared_lock state(state_mutex_);
  std::vector<ProductRecord> out;
  std::size_t skipped = 0;
  for (const auto& [id, entry] : records_) {
    if (out.size() >= limit) break;
    if (status && entry.record.status != *status) continue;
    if (skipped < offset) {
      ++skipped;
      continue;
    }
    out.push_back(entry.record);
  }
  return out;
}

std::size_t Registry::size() const {
  std::shared_lock state(state_mutex_);
  return records_.size();
}

std::size_t Registry::count(std::optional<RecordStatus> status) const {
  std::shared_lock state(state_mutex_);
  if (!status) return records_.size();
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(),
                                                [&](const auto& kv) { return kv.second.record.status == *status; }));
}

std::vector<TrackingEvent> Registry::history(RecordId id) const {
  std::shared_lock state(state_mutex_);
  entry_locked(id);
  const auto it = events_.find(id);
  return it == events_.end() ? std::vector<TrackingEvent>{} : it->second;
}

std::vector<AuditEntry> Registry::audit_log() const {
  std::shared_lock state(state_mutex_);
  return audit_;
}

std::size_t Registry::audit_count() const {
  std::shared_lock state(state_mutex_);
  return audit_.size();
}

std::optional<std::vector<std::uint8_t>> Registry::reference_image(RecordId id) const {
  {
    std::shared_lock state(state_mutex_);
    entry_locked(id);
  }
  return store_->image(id);
}

std::shared_ptr<const SearchIndex> Registry::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

std::shared_ptr<const ProjectionModel> Registry::model() const {
  std::shared_lock state(state_mutex_);
  return model_;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

constexpr const char* kExportFormat = "dendrite-registry";
constexpr int kExportVersion = 1;

nlohmann::ordered_json location_json(const Location& l) {
  nlohmann::ordered_json j;
  j["text"] = l.text;
  j["lat"] = optional_json(l.lat);
  j["lon"] = optional_json(l.lon);
  return j;
}

template <typename T>
std::optional<T> optional_field(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || doc.at(key).is_null()) return std::nullopt;
  return doc.at(key).get<T>();
}

}  // namespace

nlohmann::ordered_json to_json(const ProductRecord& r) {
  nlohmann::ordered_json j;
  j["record_id"] = r.record_id;
  j["tag_id"] = r.tag_id.hex();
  j["status"] = to_string(r.status);
  j["prior_status"] = r.prior_status ? nlohmann::ordered_json(to_string(*r.prior_status)) : nlohmann::ordered_json();
  j["created_at"] = r.created_at;
  if (r.product_info) {
    j["product_info"] = {{"name", r.product_info->name},
                         {"supplier", r.product_info->supplier},
                         {"batch", r.product_info->batch},
                         {"description", r.product_info->description},
                         {"created_at", r.product_info->created_at}};
  } else {
    j["product_info"] = nullptr;
  }
  j["surrogate"] = {{"u", r.surrogate.u}, {"v", r.surrogate.v}, {"model_version", r.surrogate.model_version}};
  j["feature_vector"] = to_json(r.feature_vector);
  j["graph"] = to_json(r.graph);
  return j;
}

nlohmann::ordered_json to_json(const TrackingEvent& e) {
  nlohmann::ordered_json j;
  j["event_id"] = e.event_id;
  j["record_id"] = e.record_id;
  j["timestamp"] = e.timestamp;
  j["location"] = location_json(e.location);
  j["actor"] = e.actor;
  j["kind"] = to_string(e.kind);
  j["auth_score"] = optional_json(e.auth_score);
  return j;
}

nlohmann::ordered_json to_json(const AuditEntry& a) {
  nlohmann::ordered_json j;
  j["entry_id"] = a.entry_id;
  j["timestamp"] = a.timestamp;
  j["record_id"] = optional_json(a.record_id);
  j["outcome"] = to_string(a.outcome);
  j["reason"] = a.reason;
  j["request_fingerprint"] = a.request_fingerprint;
  return j;
}

ProductRecord record_from_json(const nlohmann::json& doc) {
  try {
    ProductRecord r;
    r.record_id = doc.at("record_id").get<RecordId>();
    r.tag_id = TagId::from_hex(doc.at("tag_id").get<std::string>());
    const auto status = parse_status(doc.at("status").get<std::string>());
    if (!status) throw Error(ErrorCode::bad_request, "unknown status");
    r.status = *status;
    if (auto prior = optional_field<std::string>(doc, "prior_status")) {
      r.prior_status = parse_status(*prior);
      if (!r.prior_status) throw Error(ErrorCode::bad_request, "unknown prior_status");
    }
    r.created_at = doc.at("created_at").get<std::string>();
    if (doc.contains("product_info") && !doc.at("product_info").is_null()) {
      const auto& p = doc.at("product_info");
      r.product_info = ProductInfo{p.at("name"), p.at("supplier"), p.at("batch"), p.at("description"),
                                   p.at("created_at")};
    }
    const auto& s = doc.at("surrogate");
    r.surrogate = {s.at("u").get<double>(), s.at("v").get<double>(), s.at("model_version").get<std::uint64_t>()};
    r.feature_vector = feature_vector_from_json(doc.at("feature_vector"));
    r.graph = graph_from_json(doc.at("graph"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_request, std::string("malformed record: ") + e.what());
  }
}

TrackingEvent event_from_json(const nlohmann::json& doc) {
  try {
    TrackingEvent e;
    e.event_id = doc.at("event_id").get<std::uint64_t>();
    e.record_id = doc.at("record_id").get<RecordId>();
    e.timestamp = doc.at("timestamp").get<std::string>();
    const auto& l = doc.at("location");
    e.location = {l.at("text").get<std::string>(), optional_field<double>(l, "lat"), optional_field<double>(l, "lon")};
    e.actor = doc.at("actor").get<std::string>();
    const auto kind = parse_event_kind(doc.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::bad_request, "unknown event kind");
    e.kind = *kind;
    e.auth_score = optional_field<double>(doc, "auth_score");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::bad_request, std::string("malformed event: ") + ex.what());
  }
}

AuditEntry audit_from_json(const nlohmann::json& doc) {
  try {
    AuditEntry a;
    a.entry_id = doc.at("entry_id").get<std::uint64_t>();
    a.timestamp = doc.at("timestamp").get<std::string>();
    a.record_id = optional_field<RecordId>(doc, "record_id");
    const auto outcome = parse_outcome(doc.at("outcome").get<std::string>());
    if (!outcome) throw Error(ErrorCode::bad_request, "unknown outcome");
    a.outcome = *outcome;
    a.reason = doc.at("reason").get<std::string>();
    a.request_fingerprint = doc.at("request_fingerprint").get<std::string>();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_request, std::string("malformed audit entry: ") + e.what());
  }
}

nlohmann::ordered_json Registry::export_json() const {
  std::shared_lock state(state_mutex_);
  nlohmann::ordered_json doc;
  doc["format"] = kExportFormat;
  doc["version"] = kExportVersion;
  doc["model"] = model_ ? to_json(*model_) : nlohmann::ordered_json();
  auto& records = doc["records"] = nlohmann::ordered_json::array();
  for (const auto& [id, entry] : records_) records.push_back(to_json(entry.record));
  std::vector<const TrackingEvent*> events;
  for (const auto& [id, list] : events_) {
    for (const auto& e : list) events.push_back(&e);
  }
  std::sort(events.begin(), events.end(), [](auto* a, auto* b) { return a->event_id < b->event_id; });
  auto& ev = doc["events"] = nlohmann::ordered_json::array();
  for (const auto* e : events) ev.push_back(to_json(*e));
  auto& au = doc["audit"] = nlohmann::ordered_json::array();
  for (const auto& a : audit_) au.push_back(to_json(a));
  return doc;
}

void Registry::import_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", "") != kExportFormat || doc.value("version", 0) != kExportVersion) {
    throw Error(ErrorCode::bad_request, "not a registry export document");
  }
  std::vector<ProductRecord> records;
  std::vector<TrackingEvent> events;
  std::vector<AuditEntry> audit;
  std::optional<ProjectionModel> model;
  try {
    for (const auto& r : doc.at("records")) records.push_back(record_from_json(r));
    for (const auto& e : doc.at("events")) events.push_back(event_from_json(e));
    for (const auto& a : doc.at("audit")) audit.push_back(audit_from_json(a));
    if (doc.contains("model") && !doc.at("model").is_null()) model = model_from_json(doc.at("model"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_request, std::string("malformed export: ") + e.what());
  }

  std::set<RecordId> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.record_id).second) throw Error(ErrorCode::bad_request, "duplicate record id");
    if ((r.status == RecordStatus::flagged) != r.prior_status.has_value()) {
      throw Error(ErrorCode::bad_request, "prior_status must be set exactly for flagged records");
    }
    if (const auto msg = check_invariants(r.graph); !msg.empty()) {
      throw Error(ErrorCode::bad_request, "record " + std::to_string(r.record_id) + ": " + msg);
    }
    const std::uint64_t expect = model ? model->version : 0;
    if (r.surrogate.model_version != expect) {
      throw Error(ErrorCode::model_version_mismatch, "record " + std::to_string(r.record_id) + " surrogate version");
    }
  }
  std::set<std::uint64_t> event_ids;
  for (const auto& e : events) {
    if (!ids.count(e.record_id)) throw Error(ErrorCode::bad_request, "event for unknown record");
    if (!event_ids.insert(e.event_id).second) throw Error(ErrorCode::bad_request, "duplicate event id");
  }
  std::set<std::uint64_t> entry_ids;
  for (const auto& a : audit) {
    if (!entry_ids.insert(a.entry_id).second) throw Error(ErrorCode::bad_request, "duplicate audit entry id");
  }

  std::lock_guard writer(writer_mutex_);
  {
    std::shared_lock state(state_mutex_);
    if (!records_.empty() || !audit_.empty()) throw Error(ErrorCode::bad_request, "import needs an empty registry");
  }
  {
    Store::Transaction tx(*store_);
    if (model) store_->put_model(*model);
    for (const auto& r : records) store_->insert_record(r, {});
    for (const auto& e : events) store_->append_event(e);
    for (const auto& a : audit) store_->append_audit(a);
    tx.commit();
  }
  std::unique_lock state(state_mutex_);
  for (auto& r : records) {
    next_record_id_ = std::max(next_record_id_, r.record_id + 1);
    if (last_timestamp_ < r.created_at) last_timestamp_ = r.created_at;
    auto prepared = std::make_shared<const PreparedGraph>(r.graph);
    const RecordId id = r.record_id;
    records_.emplace(id, Entry{std::move(r), std::move(prepared)});
  }
  std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.event_id < b.event_id; });
  for (auto& e : events) {
    next_event_id_ = std::max(next_event_id_, e.event_id + 1);
    if (last_timestamp_ < e.timestamp) last_timestamp_ = e.timestamp;
    events_[e.record_id].push_back(std::move(e));
  }
  std::sort(audit.begin(), audit.end(), [](const auto& a, const auto& b) { return a.entry_id < b.entry_id; });
  for (auto& a : audit) {
    next_entry_id_ = std::max(next_entry_id_, a.entry_id + 1);
    if (last_timestamp_ < a.timestamp) last_timestamp_ = a.timestamp;
    audit_.push_back(std::move(a));
  }
  if (model) model_ = std::make_shared<const ProjectionModel>(std::move(*model));
  publish_locked();
}

}  // namespace dendrite
