#include <gtest/gtest.h>
#include <signal.h>
#include <sqlite3.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "dendrite/error.hpp"
#include "dendrite/registry.hpp"
#include "test_support.hpp"

using namespace dendrite;
namespace fs = std::filesystem;

namespace {

const std::vector<DendriteImage>& tags() { return fixtures::images(21, 40); }

fs::path temp_store(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dendrite-registry-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const fs::path p = dir / name;
  for (const char* suffix : {"", "-wal", "-shm"}) fs::remove(p.string() + suffix);
  return p;
}

ScanContext scan(EventKind kind = EventKind::scanned, std::string actor = "carrier-1") {
  return {{"dock 4", 52.1, 4.3}, std::move(actor), kind, ""};
}

ProductInfo info(const std::string& name) { return {name, "acme", "b-1", "widget", ""}; }

template <typename Fn>
std::optional<ErrorCode> code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

// Registry with `n` personalized and registered tags (ids 1..n).
void populate(Registry& r, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = r.personalize(tags()[i], "supplier-1");
    r.register_product(p.record_id, info("item " + std::to_string(i)), "supplier-1");
  }
}

std::vector<EventKind> kinds(const std::vector<TrackingEvent>& events) {
  std::vector<EventKind> out;
  for (const auto& e : events) out.push_back(e.kind);
  return out;
}

}  // namespace

TEST(StateMachine, AllowedEdges) {
  using S = RecordStatus;
  EXPECT_TRUE(transition_allowed(S::personalized, S::registered));
  EXPECT_TRUE(transition_allowed(S::registered, S::in_transit));
  EXPECT_TRUE(transition_allowed(S::in_transit, S::in_transit));
  EXPECT_TRUE(transition_allowed(S::in_transit, S::delivered));
  EXPECT_TRUE(transition_allowed(S::delivered, S::flagged));
  EXPECT_TRUE(transition_allowed(S::flagged, S::retired));
  EXPECT_TRUE(transition_allowed(S::flagged, S::registered));
  EXPECT_FALSE(transition_allowed(S::personalized, S::in_transit));
  EXPECT_FALSE(transition_allowed(S::registered, S::delivered));
  EXPECT_FALSE(transition_allowed(S::delivered, S::in_transit));
  EXPECT_FALSE(transition_allowed(S::registered, S::personalized));
  EXPECT_FALSE(transition_allowed(S::flagged, S::flagged));
  EXPECT_FALSE(transition_allowed(S::registered, S::retired));
  for (auto to : {S::personalized, S::registered, S::in_transit, S::delivered, S::flagged, S::retired}) {
    EXPECT_FALSE(transition_allowed(S::retired, to));
  }
  EXPECT_EQ(status_after_scan(S::registered, EventKind::scanned), S::registered);
  EXPECT_EQ(status_after_scan(S::registered, EventKind::transferred), S::in_transit);
  EXPECT_EQ(status_after_scan(S::in_transit, EventKind::delivered), S::delivered);
  EXPECT_FALSE(status_after_scan(S::registered, EventKind::delivered));
  EXPECT_FALSE(status_after_scan(S::retired, EventKind::scanned));
}

TEST(Registry, PersonalizeAndRegister) {
  Registry r;
  const auto p = r.personalize(tags()[0]);
  EXPECT_EQ(p.record_id, 1u);
  EXPECT_EQ(p.tag_id, canonical_id(extract_graph(tags()[0])));
  EXPECT_EQ(r.get(1).status, RecordStatus::personalized);
  EXPECT_FALSE(r.get(1).product_info);
  EXPECT_EQ(kinds(r.history(1)), std::vector<EventKind>{EventKind::personalized});

  const auto rec = r.register_product(1, info("chair"), "supplier-1");
  EXPECT_EQ(rec.status, RecordStatus::registered);
  ASSERT_TRUE(rec.product_info);
  EXPECT_EQ(rec.product_info->name, "chair");
  EXPECT_FALSE(rec.product_info->created_at.empty());
  EXPECT_EQ(r.history(1).back().kind, EventKind::registered);
  EXPECT_EQ(r.history(1).back().actor, "supplier-1");

  EXPECT_EQ(code_of([&] { r.register_product(1, info("chair")); }), ErrorCode::invalid_transition);
  EXPECT_EQ(code_of([&] { r.register_product(99, info("chair")); }), ErrorCode::unknown_record);
  EXPECT_EQ(code_of([&] { r.get(99); }), ErrorCode::unknown_record);
  EXPECT_EQ(code_of([&] { r.history(99); }), ErrorCode::unknown_record);
}

TEST(Registry, DuplicateTagNamesFirstRecord) {
  Registry r;
  r.personalize(tags()[0]);
  r.personalize(tags()[1]);
  try {
    r.personalize(tags()[1]);
    FAIL();
  } catch (const DuplicateTagError& e) {
    EXPECT_EQ(e.code(), ErrorCode::duplicate_tag);
    EXPECT_EQ(e.existing(), 2u);
    EXPECT_DOUBLE_EQ(e.score(), 1.0);
  }
  // A slightly perturbed re-capture of the same tag is also a duplicate.
  const auto shifted = perturb(tags()[0], {0.0, {1, -1}, 0.0, 0});
  EXPECT_EQ(code_of([&] { r.personalize(shifted); }), ErrorCode::duplicate_tag);
  EXPECT_EQ(r.size(), 2u);
}

TEST(Registry, ExtractionErrorsPropagate) {
  Registry r;
  EXPECT_EQ(code_of([&] { r.personalize(DendriteImage(32, 32)); }), ErrorCode::empty_foreground);
  EXPECT_EQ(r.size(), 0u);
}

TEST(Registry, ScanTransferDeliver) {
  Registry r;
  populate(r, 6);
  auto a = r.authenticate_and_track(tags()[2], scan(EventKind::scanned));
  EXPECT_EQ(a.result.decision, Decision::matched);
  EXPECT_EQ(a.audit.outcome, AuditOutcome::success);
  EXPECT_EQ(a.audit.reason, "matched");
  EXPECT_EQ(a.audit.record_id, 3u);
  EXPECT_EQ(a.audit.request_fingerprint, image_fingerprint(tags()[2]));
  ASSERT_TRUE(a.event);
  EXPECT_DOUBLE_EQ(*a.event->auth_score, 1.0);
  EXPECT_EQ(r.get(3).status, RecordStatus::registered);

  r.authenticate_and_track(tags()[2], scan(EventKind::transferred));
  EXPECT_EQ(r.get(3).status, RecordStatus::in_transit);
  r.authenticate_and_track(tags()[2], scan(EventKind::transferred));
  r.authenticate_and_track(tags()[2], scan(EventKind::delivered));
  EXPECT_EQ(r.get(3).status, RecordStatus::delivered);
  EXPECT_EQ(kinds(r.history(3)),
            (std::vector<EventKind>{EventKind::personalized, EventKind::registered, EventKind::scanned,
                                    EventKind::transferred, EventKind::transferred, EventKind::delivered}));
  const auto h = r.history(3);
  for (std::size_t i = 1; i < h.size(); ++i) {
    EXPECT_LE(h[i - 1].timestamp, h[i].timestamp);
    EXPECT_LT(h[i - 1].event_id, h[i].event_id);
  }
  EXPECT_EQ(h.back().location.text, "dock 4");
  EXPECT_DOUBLE_EQ(*h.back().location.lat, 52.1);

  // Delivered records take no further transfers; the attempt is still audited.
  const auto before = r.audit_count();
  EXPECT_EQ(code_of([&] { r.authenticate_and_track(tags()[2], scan(EventKind::transferred)); }),
            ErrorCode::invalid_transition);
  EXPECT_EQ(r.audit_count(), before + 1);
  EXPECT_EQ(r.audit_log().back().reason, "invalid-transition");
  EXPECT_EQ(code_of([&] { r.authenticate_and_track(tags()[2], scan(EventKind::flag_raised)); }),
            ErrorCode::invalid_params);
  EXPECT_EQ(r.audit_count(), before + 2);
}

TEST(Registry, HistoryOfRegisterScanDeliver) {
  Registry r;
  populate(r, 3);
  r.authenticate_and_track(tags()[0], scan(EventKind::transferred));
  r.authenticate_and_track(tags()[0], scan(EventKind::delivered));
  const auto h = r.history(1);
  // register, transfer, deliver after the personalization event
  ASSERT_EQ(h.size(), 4u);
  EXPECT_EQ(kinds(h), (std::vector<EventKind>{EventKind::personalized, EventKind::registered, EventKind::transferred,
                                               EventKind::delivered}));
  EXPECT_EQ(kinds(r.history(2)), (std::vector<EventKind>{EventKind::personalized, EventKind::registered}));
}

TEST(Registry, UnregisteredScanFailsWithoutEvent) {
  Registry r;
  populate(r, 6);
  const auto events_before = r.history(1).size();
  const auto a = r.authenticate_and_track(fixtures::images(99, 1)[0], scan());
  EXPECT_EQ(a.result.decision, Decision::no_match);
  EXPECT_EQ(a.audit.outcome, AuditOutcome::failure);
  EXPECT_EQ(a.audit.reason, "no-match");
  EXPECT_FALSE(a.event);
  EXPECT_FALSE(a.flagged);
  EXPECT_EQ(r.history(1).size(), events_before);
  EXPECT_EQ(r.audit_count(), 1u);
}

TEST(Registry, ExtractionFailureIsAudited) {
  Registry r;
  populate(r, 3);
  ScanContext ctx = scan();
  ctx.request_id = "req-7";
  EXPECT_EQ(code_of([&] { r.authenticate_and_track(DendriteImage(40, 40), ctx); }), ErrorCode::empty_foreground);
  ASSERT_EQ(r.audit_count(), 1u);
  EXPECT_EQ(r.audit_log()[0].reason, "empty-foreground request_id=req-7");
  EXPECT_EQ(r.audit_log()[0].outcome, AuditOutcome::failure);
  EXPECT_FALSE(r.audit_log()[0].record_id);
}

TEST(Registry, EmptyRegistryScanIsAudited) {
  Registry r;
  EXPECT_EQ(code_of([&] { r.authenticate_and_track(tags()[0], scan()); }), ErrorCode::empty_registry);
  EXPECT_EQ(r.audit_count(), 1u);
  EXPECT_EQ(r.audit_log()[0].reason, "empty-registry");
}

TEST(Registry, NearCloneBands) {
  Registry r;
  populate(r, 10);
  // Sweep perturbations of tag 1 to find a re-capture in each score band.
  std::optional<DendriteImage> accept_band, suspect_band;
  double accept_score = 0, suspect_score = 0;
  for (int step = 0; step < 80 && !(accept_band && suspect_band); ++step) {
    Perturbation p;
    p.noise_rate = 0.005 * (step % 20);
    p.rotation_deg = 0.5 * (step / 20);
    p.shift = {step % 3 - 1, 0};
    p.rng_seed = static_cast<std::uint64_t>(step);
    const auto img = perturb(tags()[0], p);
    IdentifyResult res;
    try {
      res = r.identify(img);
    } catch (const Error&) {
      continue;
    }
    if (!res.best || res.best->candidate_id != 1) continue;
    const double s = res.best->value;
    if (!accept_band && s >= 0.75 && s < 1.0) {
      accept_band = img;
      accept_score = s;
    }
    if (!suspect_band && s >= 0.5 && s < 0.75) {
      suspect_band = img;
      suspect_score = s;
    }
  }
  ASSERT_TRUE(accept_band) << "no perturbation scored in [0.75, 1)";
  ASSERT_TRUE(suspect_band) << "no perturbation scored in [0.5, 0.75)";

  const auto matched = r.authenticate_and_track(*accept_band, scan());
  EXPECT_EQ(matched.result.decision, Decision::matched);
  EXPECT_DOUBLE_EQ(matched.result.best->value, accept_score);
  EXPECT_EQ(r.get(1).status, RecordStatus::registered);

  const auto flagged = r.authenticate_and_track(*suspect_band, scan());
  EXPECT_EQ(flagged.result.decision, Decision::no_match);
  EXPECT_DOUBLE_EQ(flagged.result.best->value, suspect_score);
  EXPECT_EQ(flagged.flagged, 1u);
  EXPECT_EQ(flagged.audit.reason, "suspicious-match");
  EXPECT_EQ(r.get(1).status, RecordStatus::flagged);
  EXPECT_EQ(r.get(1).prior_status, RecordStatus::registered);
  EXPECT_EQ(r.history(1).back().kind, EventKind::flag_raised);

  // A second suspicious scan leaves the flag in place and writes no event.
  const auto events = r.history(1).size();
  const auto again = r.authenticate_and_track(*suspect_band, scan());
  EXPECT_FALSE(again.flagged);
  EXPECT_EQ(r.history(1).size(), events);

  const auto cleared = r.clear_flag(1, "admin");
  EXPECT_EQ(cleared.status, RecordStatus::registered);
  EXPECT_FALSE(cleared.prior_status);
  EXPECT_EQ(r.history(1).back().kind, EventKind::flag_cleared);
  EXPECT_EQ(code_of([&] { r.clear_flag(1); }), ErrorCode::invalid_transition);
  EXPECT_EQ(code_of([&] { r.retire(1); }), ErrorCode::invalid_transition);

  r.authenticate_and_track(*suspect_band, scan());
  const auto retired = r.retire(1, "admin");
  EXPECT_EQ(retired.status, RecordStatus::retired);
  EXPECT_FALSE(retired.prior_status);
  Registry copy;
  copy.import_json(nlohmann::json::parse(r.export_json().dump()));
  EXPECT_EQ(copy.get(1).status, RecordStatus::retired);
  // Retired tags drop out of identification.
  const auto res = r.identify(tags()[0]);
  EXPECT_TRUE(!res.best || res.best->candidate_id != 1);
  EXPECT_EQ(r.count(RecordStatus::retired), 1u);
}

TEST(Registry, ConcurrentScansGetDistinctEvents) {
  Registry r;
  populate(r, 4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 32; ++t) {
    threads.emplace_back([&, t] { r.authenticate_and_track(tags()[1], scan(EventKind::scanned, "c" + std::to_string(t))); });
  }
  for (auto& t : threads) t.join();
  const auto h = r.history(2);
  ASSERT_EQ(h.size(), 34u);
  std::set<std::uint64_t> ids;
  for (const auto& e : h) ids.insert(e.event_id);
  EXPECT_EQ(ids.size(), h.size());
  for (std::size_t i = 1; i < h.size(); ++i) EXPECT_LT(h[i - 1].event_id, h[i].event_id);
  EXPECT_EQ(r.audit_count(), 32u);
}

TEST(Registry, RefitErrorsAndVersions) {
  Registry r("", [] {
    RegistryConfig c;
    c.auto_refit = false;
    return c;
  }());
  EXPECT_EQ(code_of([&] { r.refit_and_reindex(); }), ErrorCode::insufficient_samples);
  r.personalize(tags()[0]);
  EXPECT_EQ(code_of([&] { r.refit_and_reindex(); }), ErrorCode::insufficient_samples);
  r.personalize(tags()[1]);
  r.personalize(tags()[2]);
  const auto m1 = r.refit_and_reindex();
  const auto m2 = r.refit_and_reindex();
  EXPECT_EQ(m1.version, 1u);
  EXPECT_GT(m2.version, m1.version);
  const auto snap = r.snapshot();
  EXPECT_EQ(snap->model->version, m2.version);
  for (const auto& rec : snap->records) EXPECT_EQ(rec.surrogate.model_version, m2.version);
  for (const auto& rec : r.list()) EXPECT_EQ(rec.surrogate.model_version, m2.version);
}

TEST(Registry, RefitKeepsUnperturbedShortlists) {
  Registry r;
  for (std::size_t i = 0; i < 40; ++i) r.personalize(tags()[i]);
  const auto before = r.snapshot();
  const auto model = r.refit_and_reindex();
  const auto after = r.snapshot();
  EXPECT_GT(model.version, before->model->version);
  int unchanged = 0;
  for (std::size_t i = 0; i < 40; ++i) {
    const auto a = r.identify(tags()[i]);
    const auto fv = featurize(extract_graph(tags()[i]));
    std::vector<IndexEntry> idx_before, idx_after;
    for (const auto& rec : before->records) idx_before.push_back({rec.id, rec.surrogate});
    for (const auto& rec : after->records) idx_after.push_back({rec.id, rec.surrogate});
    const auto sb = shortlist(project(fv, *before->model), idx_before, 25);
    const auto sa = shortlist(project(fv, *after->model), idx_after, 25);
    if (sb.front() == sa.front() && sa.front() == i + 1 && a.best->candidate_id == i + 1) ++unchanged;
  }
  EXPECT_GE(unchanged, 38);  // 95%
}

TEST(Registry, SnapshotIsolationDuringRefit) {
  Registry r;
  populate(r, 8);
  std::atomic<bool> stop{false};
  std::atomic<int> errors{0}, scans{0};
  std::thread reader([&] {
    while (!stop) {
      try {
        const auto res = r.identify(tags()[3]);
        if (!res.best || res.best->candidate_id != 4) ++errors;
      } catch (const Error&) {
        ++errors;
      }
      ++scans;
    }
  });
  for (int i = 0; i < 20; ++i) r.refit_and_reindex();
  while (scans < 5) std::this_thread::yield();
  stop = true;
  reader.join();
  EXPECT_EQ(errors, 0);
}

TEST(Registry, FuzzStateMachineAndAuditCompleteness) {
  Registry r;
  populate(r, 5);
  for (std::size_t i = 5; i < 8; ++i) r.personalize(tags()[i]);
  std::mt19937_64 rng(4);
  std::size_t scans = 0;
  std::map<RecordId, RecordStatus> last;
  for (const auto& rec : r.list()) last[rec.record_id] = rec.status;
  const std::vector<DendriteImage> probes = {tags()[0], tags()[1], tags()[2], tags()[5], tags()[6],
                                              fixtures::images(99, 1)[0], DendriteImage(20, 20)};
  for (int op = 0; op < 300; ++op) {
    const RecordId id = 1 + rng() % 9;  // includes an unknown id
    try {
      switch (rng() % 6) {
        case 0:
        case 1: {
          const EventKind kind = std::array{EventKind::scanned, EventKind::transferred, EventKind::delivered,
                                            EventKind::registered}[rng() % 4];
          ++scans;
          r.authenticate_and_track(probes[rng() % probes.size()], scan(kind));
          break;
        }
        case 2: r.register_product(id, info("fuzz")); break;
        case 3: r.clear_flag(id); break;
        case 4: r.retire(id); break;
        case 5: {
          // Suspicious clone of an existing tag.
          ++scans;
          r.authenticate_and_track(perturb(tags()[rng() % 3], {0.06, {1, 1}, 1.5, rng()}), scan());
          break;
        }
      }
    } catch (const Error&) {
    }
    for (const auto& rec : r.list()) {
      const auto prev = last.at(rec.record_id);
      if (prev != rec.status) {
        EXPECT_TRUE(transition_allowed(prev, rec.status))
            << to_string(prev) << " -> " << to_string(rec.status) << " at op " << op;
      }
      EXPECT_EQ(rec.status == RecordStatus::flagged, rec.prior_status.has_value());
      last[rec.record_id] = rec.status;
    }
    ASSERT_EQ(r.audit_count(), scans);
  }
  // Replaying each history reproduces the current status.
  for (const auto& rec : r.list()) {
    RecordStatus s = RecordStatus::personalized;
    std::optional<RecordStatus> prior;
    for (const auto& e : r.history(rec.record_id)) {
      switch (e.kind) {
        case EventKind::personalized: break;
        case EventKind::registered: s = RecordStatus::registered; break;
        case EventKind::scanned: break;
        case EventKind::transferred: s = RecordStatus::in_transit; break;
        case EventKind::delivered: s = RecordStatus::delivered; break;
        case EventKind::flag_raised: prior = s; s = RecordStatus::flagged; break;
        case EventKind::flag_cleared: s = *prior; break;
        case EventKind::retired: s = RecordStatus::retired; break;
      }
    }
    EXPECT_EQ(s, rec.status) << "record " << rec.record_id;
  }
}

TEST(Registry, ListAndCount) {
  Registry r;
  populate(r, 3);
  r.personalize(tags()[3]);
  EXPECT_EQ(r.size(), 4u);
  EXPECT_EQ(r.count(RecordStatus::registered), 3u);
  EXPECT_EQ(r.count(RecordStatus::personalized), 1u);
  const auto page = r.list(std::nullopt, 1, 2);
  ASSERT_EQ(page.size(), 2u);
  EXPECT_EQ(page[0].record_id, 2u);
  EXPECT_EQ(r.list(RecordStatus::personalized).at(0).record_id, 4u);
}

TEST(Registry, PersistsAcrossReopen) {
  const auto path = temp_store("reopen.db");
  nlohmann::ordered_json before;
  {
    Registry r(path.string());
    populate(r, 4);
    r.authenticate_and_track(tags()[1], scan(EventKind::transferred));
    r.authenticate_and_track(fixtures::images(99, 1)[0], scan());
    before = r.export_json();
  }
  Registry again(path.string());
  EXPECT_EQ(again.export_json(), before);
  EXPECT_EQ(again.get(2).status, RecordStatus::in_transit);
  // New ids continue after the persisted ones.
  EXPECT_EQ(again.personalize(tags()[10]).record_id, 5u);
}

TEST(Registry, ReferenceImageStored) {
  Registry r;
  const std::vector<std::uint8_t> png = {1, 2, 3};
  r.personalize(tags()[0], "s", png);
  r.personalize(tags()[1]);
  EXPECT_EQ(r.reference_image(1), png);
  EXPECT_FALSE(r.reference_image(2));
}

TEST(Registry, ExportImportRoundTrip) {
  Registry r;
  populate(r, 4);
  r.authenticate_and_track(tags()[0], scan(EventKind::transferred));
  r.authenticate_and_track(fixtures::images(99, 1)[0], scan());
  const auto doc = r.export_json();
  EXPECT_EQ(doc["format"], "dendrite-registry");
  EXPECT_EQ(doc["records"].size(), 4u);
  EXPECT_EQ(doc["audit"].size(), 2u);

  Registry copy;
  copy.import_json(nlohmann::json::parse(doc.dump()));
  EXPECT_EQ(copy.export_json(), doc);
  EXPECT_EQ(copy.identify(tags()[2]).best->candidate_id, 3u);
  EXPECT_EQ(code_of([&] { copy.import_json(nlohmann::json::parse(doc.dump())); }), ErrorCode::bad_request);

  Registry bad;
  EXPECT_EQ(code_of([&] { bad.import_json(nlohmann::json{{"format", "other"}}); }), ErrorCode::bad_request);
}

TEST(Registry, JsonShapes) {
  Registry r;
  populate(r, 1);
  const auto rec = r.get(1);
  EXPECT_EQ(record_from_json(to_json(rec)).tag_id, rec.tag_id);
  EXPECT_EQ(to_json(record_from_json(to_json(rec))), to_json(rec));
  const auto ev = r.history(1).back();
  EXPECT_EQ(to_json(event_from_json(to_json(ev))), to_json(ev));
  const auto j = to_json(ev);
  EXPECT_EQ(j.begin().key(), "event_id");
  EXPECT_TRUE(j.contains("auth_score"));
}

TEST(Store, AppendOnlyTablesRejectUpdatesAndDeletes) {
  const auto path = temp_store("append.db");
  {
    Registry r(path.string());
    populate(r, 2);
    r.authenticate_and_track(tags()[0], scan());
  }
  sqlite3* db = nullptr;
  ASSERT_EQ(sqlite3_open(path.c_str(), &db), SQLITE_OK);
  for (const char* sql : {"DELETE FROM events", "UPDATE events SET actor = 'x'", "DELETE FROM audit",
                          "UPDATE audit SET reason = 'x'"}) {
    char* err = nullptr;
    EXPECT_NE(sqlite3_exec(db, sql, nullptr, nullptr, &err), SQLITE_OK) << sql;
    sqlite3_free(err);
  }
  sqlite3_close(db);
  Registry r(path.string());
  EXPECT_EQ(r.history(1).size(), 3u);
  EXPECT_EQ(r.audit_count(), 1u);
}

TEST(Store, GarbageFileIsCorruption) {
  const auto path = temp_store("garbage.db");
  {
    std::ofstream out(path, std::ios::binary);
    for (int i = 0; i < 4096; ++i) out.put(static_cast<char>(i * 37));
  }
  EXPECT_EQ(code_of([&] { Registry r(path.string()); }), ErrorCode::store_corruption);
}

TEST(Store, CrashBetweenOperationsKeepsCommittedState) {
  const auto path = temp_store("crash.db");
  int fds[2];
  ASSERT_EQ(::pipe(fds), 0);
  const pid_t child = ::fork();
  ASSERT_GE(child, 0);
  if (child == 0) {
    ::close(fds[0]);
    Registry r(path.string());
    for (std::size_t i = 0;; ++i) {
      const auto p = r.personalize(tags()[i]);
      r.register_product(p.record_id, info("crash"));
      r.authenticate_and_track(tags()[i], scan(EventKind::transferred));
      const std::uint64_t id = p.record_id;
      if (::write(fds[1], &id, sizeof id) != sizeof id) ::_exit(1);
      if (i + 1 == 20) break;
    }
    ::pause();
    ::_exit(0);
  }
  ::close(fds[1]);
  std::vector<std::uint64_t> committed;
  std::uint64_t id = 0;
  while (committed.size() < 6 && ::read(fds[0], &id, sizeof id) == sizeof id) committed.push_back(id);
  ::kill(child, SIGKILL);
  ::waitpid(child, nullptr, 0);
  ::close(fds[0]);
  ASSERT_EQ(committed.size(), 6u);

  Registry r(path.string());
  for (const auto rid : committed) {
    const auto rec = r.get(rid);
    EXPECT_EQ(rec.status, RecordStatus::in_transit);
    EXPECT_EQ(kinds(r.history(rid)),
              (std::vector<EventKind>{EventKind::personalized, EventKind::registered, EventKind::transferred}));
  }
  for (const auto& rec : r.list()) {
    const auto h = r.history(rec.record_id);
    ASSERT_FALSE(h.empty());
    EXPECT_EQ(h.front().kind, EventKind::personalized);
  }
  EXPECT_GE(r.audit_count(), committed.size());
}
