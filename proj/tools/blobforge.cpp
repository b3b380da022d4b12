// blobforge command-line front end.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "blobforge/curation.hpp"
#include "blobforge/edit.hpp"
#include "blobforge/harness.hpp"
#include "blobforge/io.hpp"
#include "blobforge/metrics.hpp"
#include "blobforge/service.hpp"
#include "blobforge/store.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace blobforge;

namespace {

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& ex) {
    throw IoError("cannot parse " + path.string() + ": " + ex.what());
  }
}

// Accepts inline JSON or "@path".
json json_arg(const std::string& arg) {
  if (!arg.empty() && arg.front() == '@') return read_json(arg.substr(1));
  try {
    return json::parse(arg);
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("malformed JSON argument: ") + ex.what());
  }
}

void emit(const std::string& out, const std::string& data) {
  if (out.empty() || out == "-") {
    std::cout << data;
  } else {
    write_file_atomic(out, data);
  }
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blobforge: blob scenes, fields, edits, curation and metrics"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string addr = "127.0.0.1:8080";
  std::string data_dir = "blobforge-data";
  serve->add_option("--addr", addr, "host:port")->envname("BLOBFORGE_ADDR")->capture_default_str();
  serve->add_option("--data-dir", data_dir, "Data directory")
      ->envname("BLOBFORGE_DATA_DIR")
      ->capture_default_str();

  // render
  auto* render = app.add_subcommand("render", "Render a scene field");
  render->set_help_flag("--help", "Print this help message and exit");
  std::string scene_path, kind = "opacity", format = "png", out, blob;
  int width = 0, height = 0;
  double p = 0.0;
  render->add_option("--scene", scene_path, "Scene JSON")->required()->check(CLI::ExistingFile);
  render->add_option("--kind", kind, "opacity|composed|mask|feature-preview")->capture_default_str();
  render->add_option("--w", width, "Width (default: scene width)");
  render->add_option("--h", height, "Height (default: scene height)");
  render->add_option("--p", p, "Confidence level override");
  render->add_option("--blob", blob, "Render a single blob");
  render->add_option("--format", format, "png|raw")->check(CLI::IsMember({"png", "raw"}))->capture_default_str();
  render->add_option("--out", out, "Output file")->required();

  // edit
  auto* edit = app.add_subcommand("edit", "Apply edit ops to a scene file");
  std::vector<std::string> ops;
  std::string edit_out;
  edit->add_option("--scene", scene_path, "Scene JSON")->required()->check(CLI::ExistingFile);
  edit->add_option("--op", ops, "Edit op JSON or @file (repeatable)")->required();
  edit->add_option("--out", edit_out, "Output scene (default stdout)");

  // curate
  auto* curate = app.add_subcommand("curate", "Curate a directory of image/mask pairs");
  std::string in_dir, manifest;
  CurationRules rules;
  double confidence = kDefaultConfidence;
  unsigned threads = 0;
  curate->add_option("--in", in_dir, "Input directory")->required()->check(CLI::ExistingDirectory);
  curate->add_option("--out", manifest, "Manifest (JSONL)")->required();
  curate->add_option("--min-short-side", rules.min_short_side)->capture_default_str();
  curate->add_option("--area-lo", rules.area_lo)->capture_default_str();
  curate->add_option("--area-hi", rules.area_hi)->capture_default_str();
  curate->add_option("--min-eig", rules.min_cov_eig)->capture_default_str();
  curate->add_option("--confidence", confidence)->capture_default_str();
  curate->add_option("--threads", threads, "Worker threads (0: all cores)");

  // sample
  auto* sample = app.add_subcommand("sample", "Build one training sample");
  std::string image_path, mask_path, config_path, caption, sample_out;
  std::uint64_t perturb_seed = 0, augment_seed = 0;
  bool as_tar = false;
  sample->add_option("--image", image_path)->required()->check(CLI::ExistingFile);
  sample->add_option("--mask", mask_path)->required()->check(CLI::ExistingFile);
  sample->add_option("--perturb-seed", perturb_seed)->required();
  sample->add_option("--augment-seed", augment_seed)->required();
  sample->add_option("--config", config_path, "JSON with perturb/augment/rules/confidence")
      ->check(CLI::ExistingFile);
  sample->add_option("--caption", caption);
  sample->add_option("--out", sample_out, "Output directory (or .tar with --tar)")->required();
  sample->add_flag("--tar", as_tar, "Write a tar archive");

  // harness-check
  auto* harness = app.add_subcommand("harness-check", "Run the fusion harness self-check");
  std::uint64_t seed = 0;
  int size = 8, levels = 2;
  std::string report;
  harness->add_option("--seed", seed)->capture_default_str();
  harness->add_option("--size", size)->capture_default_str();
  harness->add_option("--levels", levels)->capture_default_str();
  harness->add_option("--report", report, "Report JSON (default stdout)");

  // bench
  auto* bench = app.add_subcommand("bench", "Grounding and image metrics");
  BenchOptions bopts;
  std::string images, bench_out;
  bench->add_option("--pred-masks", bopts.pred_masks)->required()->check(CLI::ExistingDirectory);
  bench->add_option("--gt", bopts.gt)->required()->check(CLI::ExistingFile);
  bench->add_option("--images", images)->check(CLI::ExistingDirectory);
  bench->add_option("--out", bench_out, "Report JSON (default stdout)");
  bench->add_option("--threads", bopts.threads);

  CLI11_PARSE(app, argc, argv);

  try {
    if (serve->parsed()) {
      const auto colon = addr.rfind(':');
      if (colon == std::string::npos) throw ValidationError("--addr must be host:port");
      const std::string host = addr.substr(0, colon);
      const int port = std::stoi(addr.substr(colon + 1));
      SceneStore store(fs::path(data_dir) / "scenes");
      httplib::Server server;
      install_routes(server, store);
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::cerr << "listening on " << host << ":" << port << "\n";
      if (!server.listen(host, port)) throw IoError("cannot listen on " + addr);
      return 0;
    }
    if (render->parsed()) {
      const BlobScene scene = scene_from_json(read_json(scene_path));
      RenderRequest req;
      req.kind = render_kind_from_string(kind);
      req.width = width > 0 ? width : scene.width;
      req.height = height > 0 ? height : scene.height;
      if (render->count("--p")) req.p = p;
      if (!blob.empty()) req.blob = blob;
      const FieldMap field = render_scene(scene, req);
      if (format == "raw") {
        write_field(out, field);
      } else {
        const Preview preview = make_preview(field);
        write_png(out, preview.image);
        write_file_atomic(out + ".json", preview_sidecar(preview, field).dump(2) + "\n");
      }
      return 0;
    }
    if (edit->parsed()) {
      BlobScene scene = scene_from_json(read_json(scene_path));
      for (const auto& op : ops) scene = apply_edit(scene, edit_op_from_json(json_arg(op), scene.confidence));
      emit(edit_out, json(scene).dump(2) + "\n");
      return 0;
    }
    if (curate->parsed()) {
      rules.validate();
      const CurationSummary summary =
          curate_directory(in_dir, manifest, rules, ConfidenceLevel(confidence), threads);
      std::cout << json(summary).dump(2) << "\n";
      return 0;
    }
    if (sample->parsed()) {
      const json config = config_path.empty() ? json::object() : read_json(config_path);
      SampleRequest req;
      req.perturb = perturb_config_from_json(config.value("perturb", json::object()));
      req.perturb.seed = perturb_seed;
      req.augment = augment_config_from_json(config.value("augment", json::object()));
      req.augment_seed = augment_seed;
      req.rules = curation_rules_from_json(config.value("rules", json::object()));
      req.level = ConfidenceLevel(config.value("confidence", kDefaultConfidence));
      req.caption = caption;
      const SampleResult result =
          build_training_sample(read_png(image_path), binarize(read_png(mask_path)), req);
      if (const auto* rej = std::get_if<Rejection>(&result)) {
        std::cerr << "rejected: " << rej->reason;
        if (!rej->detail.empty()) std::cerr << " (" << rej->detail << ")";
        std::cerr << "\n";
        return 3;
      }
      const auto& s = std::get<TrainingSample>(result);
      if (as_tar) {
        write_file_atomic(sample_out, make_tar(sample_files(s)));
      } else {
        write_sample(sample_out, s);
      }
      return 0;
    }
    if (harness->parsed()) {
      const json result = run_harness_check(seed, size, levels);
      emit(report, result.dump(2) + "\n");
      for (const auto& c : result.at("checks")) {
        std::cerr << (c.at("pass").get<bool>() ? "PASS " : "FAIL ") << c.at("name").get<std::string>()
                  << "\n";
      }
      return result.at("pass").get<bool>() ? 0 : 1;
    }
    if (bench->parsed()) {
      if (!images.empty()) bopts.images = images;
      emit(bench_out, run_bench(bopts).dump(2) + "\n");
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
