// Operator command line for the dendrite registry.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dendrite/corpus.hpp"
#include "dendrite/png_io.hpp"
#include "dendrite/registry.hpp"
#include "dendrite/service.hpp"

namespace fs = std::filesystem;
using namespace dendrite;

namespace {

struct StoreArgs {
  std::string config;
  std::string store;
};

void add_store_args(CLI::App* cmd, StoreArgs& args) {
  cmd->add_option("--config", args.config, "JSON config file");
  cmd->add_option("--store", args.store, "SQLite store path (overrides the config; default dendrite.db)");
}

ServiceConfig resolve(const StoreArgs& args) {
  ServiceConfig c = args.config.empty() ? ServiceConfig{} : load_config(args.config);
  if (!args.store.empty()) c.store_path = args.store;
  if (c.store_path.empty()) c.store_path = "dendrite.db";
  return c;
}

DendriteImage load_image(const std::string& path, int threshold) { return read_png(path, threshold); }

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << "\n";
    return;
  }
  std::ofstream out(path, std::ios::binary);
  out << text << "\n";
  if (!out) throw Error(ErrorCode::invalid_params, "cannot write " + path);
}

nlohmann::ordered_json params_json(const GrowthParams& p) {
  return {{"lattice_size", p.lattice_size},
          {"particle_count", p.particle_count},
          {"stickiness", p.stickiness},
          {"spawn_radius_margin", p.spawn_radius_margin},
          {"rng_seed", p.rng_seed}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dendrite: tag personalization, identification and tracking"};
  app.require_subcommand(1);
  app.fallthrough();

  int threshold = 128;
  bool as_json = false;

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Grow synthetic dendrites into PNG files plus manifest.json");
  std::string gen_out;
  std::size_t gen_n = 10;
  std::uint64_t gen_seed = 1;
  GrowthParams gen_params;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n", gen_n, "Number of tags");
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--lattice", gen_params.lattice_size, "Lattice size");
  gen->add_option("--particles", gen_params.particle_count, "Particles per aggregate");
  gen->add_option("--stickiness", gen_params.stickiness, "Sticking probability");

  // personalize
  auto* pers = app.add_subcommand("personalize", "Personalize tag images");
  StoreArgs pers_store;
  std::vector<std::string> pers_images;
  std::string pers_actor = "cli";
  add_store_args(pers, pers_store);
  pers->add_option("images", pers_images, "PNG files")->required();
  pers->add_option("--actor", pers_actor, "Actor recorded on the event");
  pers->add_option("--threshold", threshold, "Binarization threshold");

  // register
  auto* reg = app.add_subcommand("register", "Attach product information to a personalized record");
  StoreArgs reg_store;
  RecordId reg_id = 0;
  ProductInfo reg_info;
  std::string reg_actor = "cli";
  add_store_args(reg, reg_store);
  reg->add_option("--id", reg_id, "Record id")->required();
  reg->add_option("--name", reg_info.name, "Product name")->required();
  reg->add_option("--supplier", reg_info.supplier, "Supplier");
  reg->add_option("--batch", reg_info.batch, "Batch");
  reg->add_option("--description", reg_info.description, "Description");
  reg->add_option("--actor", reg_actor, "Actor recorded on the event");

  // identify
  auto* ident = app.add_subcommand("identify", "Identify a tag image (read-only)");
  StoreArgs ident_store;
  std::string ident_image;
  add_store_args(ident, ident_store);
  ident->add_option("image", ident_image, "PNG file")->required();
  ident->add_option("--threshold", threshold, "Binarization threshold");
  ident->add_flag("--json", as_json, "Print the full result as JSON");

  // scan
  auto* scan = app.add_subcommand("scan", "Authenticate a tag image and record the scan");
  StoreArgs scan_store;
  std::string scan_image;
  std::string scan_kind = "scanned";
  ScanContext scan_ctx;
  scan_ctx.actor = "cli";
  add_store_args(scan, scan_store);
  scan->add_option("image", scan_image, "PNG file")->required();
  scan->add_option("--kind", scan_kind, "scanned, transferred or delivered");
  scan->add_option("--location", scan_ctx.location.text, "Location text");
  scan->add_option("--lat", scan_ctx.location.lat, "Latitude");
  scan->add_option("--lon", scan_ctx.location.lon, "Longitude");
  scan->add_option("--actor", scan_ctx.actor, "Actor recorded on the event");
  scan->add_option("--threshold", threshold, "Binarization threshold");
  scan->add_flag("--json", as_json, "Print the full result as JSON");

  // history
  auto* hist = app.add_subcommand("history", "Print a record's tracking history");
  StoreArgs hist_store;
  RecordId hist_id = 0;
  add_store_args(hist, hist_store);
  hist->add_option("--id", hist_id, "Record id")->required();
  hist->add_flag("--json", as_json, "Print JSON");

  // refit
  auto* refit = app.add_subcommand("refit", "Refit the projection model and reindex all records");
  StoreArgs refit_store;
  add_store_args(refit, refit_store);

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Genuine and impostor score distributions on a synthetic corpus");
  std::size_t cal_n = 30;
  std::uint64_t cal_seed = 1;
  GrowthParams cal_params;
  PerturbRange cal_range;
  std::string cal_csv;
  cal->add_option("--n", cal_n, "Number of tags");
  cal->add_option("--seed", cal_seed, "Corpus seed");
  cal->add_option("--lattice", cal_params.lattice_size, "Lattice size");
  cal->add_option("--particles", cal_params.particle_count, "Particles per aggregate");
  cal->add_option("--noise", cal_range.noise_rate, "Genuine query noise rate");
  cal->add_option("--shift", cal_range.max_shift, "Genuine query max shift (px)");
  cal->add_option("--rotation", cal_range.max_rotation_deg, "Genuine query max rotation (deg)");
  cal->add_option("--csv", cal_csv, "Write pair_kind,score rows here");

  // export / import
  auto* exp = app.add_subcommand("export", "Write the registry backup document");
  StoreArgs exp_store;
  std::string exp_out = "-";
  add_store_args(exp, exp_store);
  exp->add_option("--out", exp_out, "Output file (default stdout)");

  auto* imp = app.add_subcommand("import", "Load a backup document into an empty store");
  StoreArgs imp_store;
  std::string imp_in;
  add_store_args(imp, imp_store);
  imp->add_option("--in", imp_in, "Backup file")->required();

  // serve
  auto* srv = app.add_subcommand("serve", "Run the HTTP service until SIGINT/SIGTERM");
  StoreArgs srv_store;
  std::string srv_host;
  int srv_port = -1;
  add_store_args(srv, srv_store);
  srv->add_option("--host", srv_host, "Listen address");
  srv->add_option("--port", srv_port, "Listen port (0 picks one)");

  // bench
  auto* bench = app.add_subcommand("bench", "Identify latency over a synthetic registry");
  BenchOptions bench_opts;
  bench->add_option("--n", bench_opts.records, "Registry size");
  bench->add_option("--queries", bench_opts.queries, "Number of queries");
  bench->add_option("--k", bench_opts.k, "Shortlist size");
  bench->add_option("--seed", bench_opts.seed, "Corpus seed");
  bench->add_option("--lattice", bench_opts.growth.lattice_size, "Lattice size");
  bench->add_option("--particles", bench_opts.growth.particle_count, "Particles per aggregate");
  bench->add_option("--noise", bench_opts.perturb.noise_rate, "Query noise rate");
  bench->add_option("--shift", bench_opts.perturb.max_shift, "Query max shift (px)");
  bench->add_option("--rotation", bench_opts.perturb.max_rotation_deg, "Query max rotation (deg)");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == argv[1];
    if (!known) {
      std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (gen->parsed()) {
      fs::create_directories(gen_out);
      validate(gen_params);
      nlohmann::ordered_json manifest;
      manifest["seed"] = gen_seed;
      // Constants the feature scalars are divided by, and the arc histogram edges.
      manifest["feature_scalar_scale"] = kScalarScale;
      manifest["arc_bin_edges"] = std::vector<double>(kArcBinEdges.begin(), kArcBinEdges.end() - 1);
      auto& samples = manifest["samples"] = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < gen_n; ++i) {
        const GrowthParams p = corpus_params(gen_params, gen_seed, i);
        char name[32];
        std::snprintf(name, sizeof(name), "tag_%05zu.png", i);
        write_png(fs::path(gen_out) / name, generate(p));
        samples.push_back({{"id", i}, {"params", params_json(p)}, {"file", name}});
      }
      write_text((fs::path(gen_out) / "manifest.json").string(), manifest.dump(2));
      std::cout << "wrote " << gen_n << " tags to " << gen_out << "\n";
      return 0;
    }

    if (pers->parsed()) {
      const auto cfg = resolve(pers_store);
      Registry registry(cfg.store_path, cfg.registry);
      int failures = 0;
      for (const auto& file : pers_images) {
        try {
          const auto png = read_file_bytes(file);
          const auto p = registry.personalize(ingest(png, threshold), pers_actor, png);
          std::cout << file << " record_id=" << p.record_id << " tag_id=" << p.tag_id.hex() << "\n";
        } catch (const Error& e) {
          std::cerr << file << ": " << e.what() << "\n";
          ++failures;
        }
      }
      return failures == 0 ? 0 : 1;
    }

    if (reg->parsed()) {
      const auto cfg = resolve(reg_store);
      Registry registry(cfg.store_path, cfg.registry);
      const auto r = registry.register_product(reg_id, reg_info, reg_actor);
      std::cout << "record_id=" << r.record_id << " status=" << to_string(r.status) << "\n";
      return 0;
    }

    if (ident->parsed()) {
      const auto cfg = resolve(ident_store);
      Registry registry(cfg.store_path, cfg.registry);
      const auto r = registry.identify(load_image(ident_image, threshold));
      if (as_json) {
        std::cout << identify_json(r).dump(2) << "\n";
      } else if (r.decision == Decision::matched) {
        std::cout << "matched record_id=" << r.best->candidate_id << " score=" << fixed(r.best->value) << "\n";
      } else if (r.best) {
        std::cout << "no_match best_record_id=" << r.best->candidate_id << " score=" << fixed(r.best->value) << "\n";
      } else {
        std::cout << "no_match\n";
      }
      return 0;
    }

    if (scan->parsed()) {
      const auto cfg = resolve(scan_store);
      Registry registry(cfg.store_path, cfg.registry);
      const auto kind = parse_event_kind(scan_kind);
      if (!kind) throw Error(ErrorCode::invalid_params, "unknown scan kind '" + scan_kind + "'");
      scan_ctx.kind = *kind;
      DendriteImage image;
      try {
        image = load_image(scan_image, threshold);
      } catch (const Error& e) {
        std::vector<std::uint8_t> bytes;
        try {
          bytes = read_file_bytes(scan_image);
        } catch (const Error&) {
        }
        registry.record_failed_attempt(bytes_fingerprint(bytes), e.code(), scan_ctx);
        throw;
      }
      const auto a = registry.authenticate_and_track(image, scan_ctx);
      if (as_json) {
        std::cout << authentication_json(a).dump(2) << "\n";
      } else {
        std::cout << (a.result.decision == Decision::matched ? "matched" : "no_match");
        if (a.result.best) {
          std::cout << " record_id=" << a.result.best->candidate_id << " score=" << fixed(a.result.best->value);
        }
        if (a.flagged) std::cout << " flagged=" << *a.flagged;
        std::cout << " audit=" << a.audit.entry_id << "\n";
      }
      return 0;
    }

    if (hist->parsed()) {
      const auto cfg = resolve(hist_store);
      Registry registry(cfg.store_path, cfg.registry);
      const auto events = registry.history(hist_id);
      if (as_json) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& e : events) arr.push_back(to_json(e));
        std::cout << arr.dump(2) << "\n";
      } else {
        for (const auto& e : events) {
          std::cout << e.event_id << "\t" << e.timestamp << "\t" << to_string(e.kind) << "\t" << e.actor << "\t"
                    << e.location.text << "\t" << (e.auth_score ? fixed(*e.auth_score) : "-") << "\n";
        }
      }
      return 0;
    }

    if (refit->parsed()) {
      const auto cfg = resolve(refit_store);
      Registry registry(cfg.store_path, cfg.registry);
      const auto m = registry.refit_and_reindex();
      std::cout << "model_version=" << m.version << " trained_on=" << m.trained_on << "\n";
      return 0;
    }

    if (cal->parsed()) {
      const auto corpus = build_corpus(cal_params, cal_seed, cal_n, &std::cerr);
      std::vector<double> genuine, impostor;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto q = prepare_query(perturb(corpus[i].image, query_perturbation(cal_range, cal_seed, i)));
        genuine.push_back(graph_match_score(*corpus[i].query.prepared, *q.prepared).value);
        for (std::size_t j = i + 1; j < corpus.size(); ++j) {
          impostor.push_back(graph_match_score(*corpus[i].query.prepared, *corpus[j].query.prepared).value);
        }
      }
      if (!cal_csv.empty()) {
        std::ofstream out(cal_csv);
        out << "pair_kind,score\n";
        for (double s : genuine) out << "genuine," << fixed(s) << "\n";
        for (double s : impostor) out << "impostor," << fixed(s) << "\n";
        if (!out) throw Error(ErrorCode::invalid_params, "cannot write " + cal_csv);
      }
      const auto mean = [](const std::vector<double>& v) {
        return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      };
      const auto lo = [](const std::vector<double>& v) { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); };
      const auto hi = [](const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); };
      std::cout << "kind\tcount\tmin\tmean\tmax\n";
      std::cout << "genuine\t" << genuine.size() << "\t" << fixed(lo(genuine), 4) << "\t" << fixed(mean(genuine), 4)
                << "\t" << fixed(hi(genuine), 4) << "\n";
      std::cout << "impostor\t" << impostor.size() << "\t" << fixed(lo(impostor), 4) << "\t"
                << fixed(mean(impostor), 4) << "\t" << fixed(hi(impostor), 4) << "\n";
      return 0;
    }

    if (exp->parsed()) {
      const auto cfg = resolve(exp_store);
      Registry registry(cfg.store_path, cfg.registry);
      write_text(exp_out, registry.export_json().dump(2));
      return 0;
    }

    if (imp->parsed()) {
      const auto cfg = resolve(imp_store);
      std::ifstream in(imp_in);
      if (!in) throw Error(ErrorCode::invalid_params, "cannot read " + imp_in);
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::bad_request, imp_in + ": " + e.what());
      }
      Registry registry(cfg.store_path, cfg.registry);
      registry.import_json(doc);
      std::cout << "imported " << registry.size() << " records\n";
      return 0;
    }

    if (srv->parsed()) {
      auto cfg = resolve(srv_store);
      if (!srv_host.empty()) cfg.host = srv_host;
      if (srv_port >= 0) cfg.port = srv_port;
      serve(cfg);
      return 0;
    }

    if (bench->parsed()) {
      validate(bench_opts.growth);
      const auto report = run_bench(bench_opts, &std::cerr);
      print_bench_report(report, std::cout);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
