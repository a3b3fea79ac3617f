#include "store.hpp"

#include <sqlite3.h>

#include <cstring>
#include <utility>

#include "dendrite/error.hpp"

namespace dendrite {

namespace {

constexpr int kSchemaVersion = 1;

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS records (
  record_id INTEGER PRIMARY KEY,
  tag_id TEXT NOT NULL,
  status TEXT NOT NULL,
  prior_status TEXT,
  created_at TEXT NOT NULL,
  product_info TEXT,
  graph TEXT NOT NULL,
  features TEXT NOT NULL,
  surrogate_u REAL NOT NULL,
  surrogate_v REAL NOT NULL,
  model_version INTEGER NOT NULL,
  image BLOB
);
CREATE TABLE IF NOT EXISTS events (
  event_id INTEGER PRIMARY KEY,
  record_id INTEGER NOT NULL REFERENCES records(record_id),
  timestamp TEXT NOT NULL,
  location TEXT NOT NULL,
  lat REAL,
  lon REAL,
  actor TEXT NOT NULL,
  kind TEXT NOT NULL,
  auth_score REAL
);
CREATE INDEX IF NOT EXISTS events_by_record ON events(record_id, timestamp, event_id);
CREATE TABLE IF NOT EXISTS audit (
  entry_id INTEGER PRIMARY KEY,
  timestamp TEXT NOT NULL,
  record_id INTEGER,
  outcome TEXT NOT NULL,
  reason TEXT NOT NULL,
  request_fingerprint TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS models (
  version INTEGER PRIMARY KEY,
  body TEXT NOT NULL
);
CREATE TRIGGER IF NOT EXISTS events_no_update BEFORE UPDATE ON events
  BEGIN SELECT RAISE(ABORT, 'events are append-only'); END;
CREATE TRIGGER IF NOT EXISTS events_no_delete BEFORE DELETE ON events
  BEGIN SELECT RAISE(ABORT, 'events are append-only'); END;
CREATE TRIGGER IF NOT EXISTS audit_no_update BEFORE UPDATE ON audit
  BEGIN SELECT RAISE(ABORT, 'audit is append-only'); END;
CREATE TRIGGER IF NOT EXISTS audit_no_delete BEFORE DELETE ON audit
  BEGIN SELECT RAISE(ABORT, 'audit is append-only'); END;
)sql";

[[noreturn]] void fail(sqlite3* db, const std::string& what) {
  const int code = db ? sqlite3_errcode(db) : SQLITE_ERROR;
  const std::string msg = what + ": " + (db ? sqlite3_errmsg(db) : "no connection");
  if (code == SQLITE_CORRUPT || code == SQLITE_NOTADB) throw Error(ErrorCode::store_corruption, msg);
  throw Error(ErrorCode::store_failure, msg);
}

class Statement {
 public:
  Statement(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) fail(db, "prepare");
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;

  Statement& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, double v) {
    check(sqlite3_bind_double(stmt_, i, v));
    return *this;
  }
  Statement& bind(int i, const std::string& v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Statement& bind(int i, const std::vector<std::uint8_t>& v) {
    if (v.empty()) {
      check(sqlite3_bind_null(stmt_, i));
    } else {
      check(sqlite3_bind_blob(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    }
    return *this;
  }
  template <typename T>
  Statement& bind(int i, const std::optional<T>& v) {
    if (v) return bind(i, *v);
    check(sqlite3_bind_null(stmt_, i));
    return *this;
  }

  // True while rows remain.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    fail(db_, "step");
  }
  void run() {
    while (step()) {
    }
  }

  bool is_null(int c) const { return sqlite3_column_type(stmt_, c) == SQLITE_NULL; }
  std::int64_t integer(int c) const { return sqlite3_column_int64(stmt_, c); }
  double real(int c) const { return sqlite3_column_double(stmt_, c); }
  std::string text(int c) const {
    const auto* p = sqlite3_column_text(stmt_, c);
    return p ? std::string(reinterpret_cast<const char*>(p), static_cast<std::size_t>(sqlite3_column_bytes(stmt_, c)))
             : std::string();
  }
  std::vector<std::uint8_t> blob(int c) const {
    const auto* p = static_cast<const std::uint8_t*>(sqlite3_column_blob(stmt_, c));
    return p ? std::vector<std::uint8_t>(p, p + sqlite3_column_bytes(stmt_, c)) : std::vector<std::uint8_t>();
  }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) fail(db_, "bind");
  }

  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

std::optional<RecordStatus> status_column(const Statement& st, int c) {
  if (st.is_null(c)) return std::nullopt;
  auto s = parse_status(st.text(c));
  if (!s) throw Error(ErrorCode::store_corruption, "unknown status '" + st.text(c) + "'");
  return s;
}

std::optional<double> real_column(const Statement& st, int c) {
  if (st.is_null(c)) return std::nullopt;
  return st.real(c);
}

nlohmann::json info_json(const ProductInfo& info) {
  return {{"name", info.name},
          {"supplier", info.supplier},
          {"batch", info.batch},
          {"description", info.description},
          {"created_at", info.created_at}};
}

std::optional<std::string> info_text(const ProductRecord& r) {
  if (!r.product_info) return std::nullopt;
  return info_json(*r.product_info).dump();
}

std::optional<std::string> status_text(const std::optional<RecordStatus>& s) {
  if (!s) return std::nullopt;
  return std::string(to_string(*s));
}

}  // namespace

Store::Store(const std::string& path) {
  const std::string target = path.empty() ? ":memory:" : path;
  if (sqlite3_open_v2(target.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    throw Error(ErrorCode::store_failure, "cannot open store '" + target + "': " + msg);
  }
  try {
    sqlite3_busy_timeout(db_, 5000);
    {
      Statement check(db_, "PRAGMA quick_check");
      if (!check.step() || check.text(0) != "ok") {
        throw Error(ErrorCode::store_corruption, "integrity check failed for '" + target + "'");
      }
    }
    int version = 0;
    bool has_tables = false;
    {
      Statement st(db_, "PRAGMA user_version");
      if (st.step()) version = static_cast<int>(st.integer(0));
      Statement tables(db_, "SELECT count(*) FROM sqlite_master WHERE type = 'table'");
      if (tables.step()) has_tables = tables.integer(0) > 0;
    }
    if (has_tables && version != kSchemaVersion) {
      throw Error(ErrorCode::store_corruption,
                  "'" + target + "' has schema version " + std::to_string(version) + ", expected " +
                      std::to_string(kSchemaVersion));
    }
    exec("PRAGMA journal_mode = WAL");
    exec("PRAGMA synchronous = FULL");
    exec("PRAGMA foreign_keys = ON");
    exec(kSchema);
    exec(("PRAGMA user_version = " + std::to_string(kSchemaVersion)).c_str());
  } catch (...) {
    sqlite3_close(db_);
    db_ = nullptr;
    throw;
  }
}

Store::~Store() { sqlite3_close(db_); }

void Store::exec(const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    const std::string msg = err ? err : "unknown";
    sqlite3_free(err);
    const int code = sqlite3_errcode(db_);
    if (code == SQLITE_CORRUPT || code == SQLITE_NOTADB) throw Error(ErrorCode::store_corruption, msg);
    throw Error(ErrorCode::store_failure, msg);
  }
}

Store::Transaction::Transaction(Store& store) : store_(store), lock_(store.mutex_) { store_.exec("BEGIN IMMEDIATE"); }

Store::Transaction::~Transaction() {
  if (!done_) {
    sqlite3_exec(store_.db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
}

void Store::Transaction::commit() {
  store_.exec("COMMIT");
  done_ = true;
}

void Store::insert_record(const ProductRecord& r, const std::vector<std::uint8_t>& image) {
  Statement st(db_,
               "INSERT INTO records (record_id, tag_id, status, prior_status, created_at, product_info, graph, "
               "features, surrogate_u, surrogate_v, model_version, image) VALUES (?,?,?,?,?,?,?,?,?,?,?,?)");
  st.bind(1, static_cast<std::int64_t>(r.record_id))
      .bind(2, r.tag_id.hex())
      .bind(3, std::string(to_string(r.status)))
      .bind(4, status_text(r.prior_status))
      .bind(5, r.created_at)
      .bind(6, info_text(r))
      .bind(7, to_json(r.graph).dump())
      .bind(8, to_json(r.feature_vector).dump())
      .bind(9, r.surrogate.u)
      .bind(10, r.surrogate.v)
      .bind(11, static_cast<std::int64_t>(r.surrogate.model_version))
      .bind(12, image);
  st.run();
}

void Store::update_record(const ProductRecord& r) {
  Statement st(db_,
               "UPDATE records SET status = ?, prior_status = ?, product_info = ?, surrogate_u = ?, surrogate_v = ?, "
               "model_version = ? WHERE record_id = ?");
  st.bind(1, std::string(to_string(r.status)))
      .bind(2, status_text(r.prior_status))
      .bind(3, info_text(r))
      .bind(4, r.surrogate.u)
      .bind(5, r.surrogate.v)
      .bind(6, static_cast<std::int64_t>(r.surrogate.model_version))
      .bind(7, static_cast<std::int64_t>(r.record_id));
  st.run();
  if (sqlite3_changes(db_) != 1) throw Error(ErrorCode::store_failure, "record " + std::to_string(r.record_id) + " missing");
}

void Store::append_event(const TrackingEvent& e) {
  Statement st(db_,
               "INSERT INTO events (event_id, record_id, timestamp, location, lat, lon, actor, kind, auth_score) "
               "VALUES (?,?,?,?,?,?,?,?,?)");
  st.bind(1, static_cast<std::int64_t>(e.event_id))
      .bind(2, static_cast<std::int64_t>(e.record_id))
      .bind(3, e.timestamp)
      .bind(4, e.location.text)
      .bind(5, e.location.lat)
      .bind(6, e.location.lon)
      .bind(7, e.actor)
      .bind(8, std::string(to_string(e.kind)))
      .bind(9, e.auth_score);
  st.run();
}

void Store::append_audit(const AuditEntry& a) {
  Statement st(db_,
               "INSERT INTO audit (entry_id, timestamp, record_id, outcome, reason, request_fingerprint) "
               "VALUES (?,?,?,?,?,?)");
  std::optional<std::int64_t> rid;
  if (a.record_id) rid = static_cast<std::int64_t>(*a.record_id);
  st.bind(1, static_cast<std::int64_t>(a.entry_id))
      .bind(2, a.timestamp)
      .bind(3, rid)
      .bind(4, std::string(to_string(a.outcome)))
      .bind(5, a.reason)
      .bind(6, a.request_fingerprint);
  st.run();
}

void Store::put_model(const ProjectionModel& model) {
  Statement st(db_, "INSERT INTO models (version, body) VALUES (?, ?)");
  st.bind(1, static_cast<std::int64_t>(model.version)).bind(2, to_json(model).dump());
  st.run();
}

Store::Contents Store::load() {
  std::lock_guard lock(mutex_);
  Contents out;
  try {
    {
      Statement st(db_,
                   "SELECT record_id, tag_id, status, prior_status, created_at, product_info, graph, features, "
                   "surrogate_u, surrogate_v, model_version FROM records ORDER BY record_id");
      while (st.step()) {
        ProductRecord r;
        r.record_id = static_cast<RecordId>(st.integer(0));
        r.tag_id = TagId::from_hex(st.text(1));
        r.status = *status_column(st, 2);
        r.prior_status = status_column(st, 3);
        r.created_at = st.text(4);
        if (!st.is_null(5)) {
          const auto j = nlohmann::json::parse(st.text(5));
          r.product_info = ProductInfo{j.at("name"), j.at("supplier"), j.at("batch"), j.at("description"),
                                       j.at("created_at")};
        }
        r.graph = graph_from_json(nlohmann::json::parse(st.text(6)));
        r.feature_vector = feature_vector_from_json(nlohmann::json::parse(st.text(7)));
        r.surrogate = {st.real(8), st.real(9), static_cast<std::uint64_t>(st.integer(10))};
        out.records.push_back(std::move(r));
      }
    }
    {
      Statement st(db_,
                   "SELECT event_id, record_id, timestamp, location, lat, lon, actor, kind, auth_score FROM events "
                   "ORDER BY event_id");
      while (st.step()) {
        TrackingEvent e;
        e.event_id = static_cast<std::uint64_t>(st.integer(0));
        e.record_id = static_cast<RecordId>(st.integer(1));
        e.timestamp = st.text(2);
        e.location = {st.text(3), real_column(st, 4), real_column(st, 5)};
        e.actor = st.text(6);
        const auto kind = parse_event_kind(st.text(7));
        if (!kind) throw Error(ErrorCode::store_corruption, "unknown event kind '" + st.text(7) + "'");
        e.kind = *kind;
        e.auth_score = real_column(st, 8);
        out.events.push_back(std::move(e));
      }
    }
    {
      Statement st(db_,
                   "SELECT entry_id, timestamp, record_id, outcome, reason, request_fingerprint FROM audit "
                   "ORDER BY entry_id");
      while (st.step()) {
        AuditEntry a;
        a.entry_id = static_cast<std::uint64_t>(st.integer(0));
        a.timestamp = st.text(1);
        if (!st.is_null(2)) a.record_id = static_cast<RecordId>(st.integer(2));
        const auto outcome = parse_outcome(st.text(3));
        if (!outcome) throw Error(ErrorCode::store_corruption, "unknown outcome '" + st.text(3) + "'");
        a.outcome = *outcome;
        a.reason = st.text(4);
        a.request_fingerprint = st.text(5);
        out.audit.push_back(std::move(a));
      }
    }
    {
      Statement st(db_, "SELECT body FROM models ORDER BY version DESC LIMIT 1");
      if (st.step()) out.model = model_from_json(nlohmann::json::parse(st.text(0)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::store_corruption, std::string("malformed stored document: ") + e.what());
  }
  return out;
}

std::optional<std::vector<std::uint8_t>> Store::image(RecordId id) {
  std::lock_guard lock(mutex_);
  Statement st(db_, "SELECT image FROM records WHERE record_id = ?");
  st.bind(1, static_cast<std::int64_t>(id));
  if (!st.step() || st.is_null(0)) return std::nullopt;
  return st.blob(0);
}

}  // namespace dendrite
