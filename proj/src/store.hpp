#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dendrite/registry.hpp"

struct sqlite3;

namespace dendrite {

// SQLite persistence for the registry: records, events, audit and models
// tables, WAL journal, synchronous commits. Events and audit rows are
// append-only at the schema level.
class Store {
 public:
  explicit Store(const std::string& path);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // Holds the store lock; rolls back unless commit() is called.
  class Transaction {
   public:
    explicit Transaction(Store& store);
    ~Transaction();
    void commit();

   private:
    Store& store_;
    std::unique_lock<std::mutex> lock_;
    bool done_ = false;
  };

  // Inside a Transaction.
  void insert_record(const ProductRecord& record, const std::vector<std::uint8_t>& image);
  void update_record(const ProductRecord& record);
  void append_event(const TrackingEvent& event);
  void append_audit(const AuditEntry& entry);
  void put_model(const ProjectionModel& model);

  struct Contents {
    std::vector<ProductRecord> records;
    std::vector<TrackingEvent> events;
    std::vector<AuditEntry> audit;
    std::optional<ProjectionModel> model;
  };
  Contents load();

  std::optional<std::vector<std::uint8_t>> image(RecordId id);

 private:
  void exec(const char* sql);

  sqlite3* db_ = nullptr;
  std::mutex mutex_;
};

}  // namespace dendrite
