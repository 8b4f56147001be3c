#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "odssd/annotation.hpp"
#include "odssd/error.hpp"
#include "odssd/eval.hpp"
#include "odssd/model.hpp"
#include "odssd/postprocess.hpp"
#include "odssd/service.hpp"
#include "odssd/synth.hpp"
#include "odssd/train.hpp"
#include "odssd/weights.hpp"

#ifndef ODSSD_VERSION
#define ODSSD_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string utc_now() {
  const auto t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// One per command run; written next to the outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  json timings = json::object();
  json notes = json::array();

  void write(const fs::path& path) const {
    json j;
    j["tool"] = "odssd";
    j["version"] = ODSSD_VERSION;
    j["command"] = command;
    j["argv"] = argv;
    j["written_utc"] = utc_now();
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["timings_s"] = timings;
    j["notes"] = notes;
    const auto text = j.dump(2) + "\n";
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    odssd::write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                                 text.size()));
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  odssd::write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                               text.size()));
}

odssd::ModelConfig preset(const std::string& name) {
  if (name == "640") return odssd::ModelConfig::stereo640();
  if (name == "320") return odssd::ModelConfig::stereo320();
  if (name == "voc640") return odssd::ModelConfig::voc_reference640();
  if (name == "toy") return odssd::ModelConfig::toy();
  throw odssd::InvalidInput("unknown config preset '" + name + "' (640, 320, voc640, toy)");
}

odssd::IndexLoadOptions lenient_index() {
  odssd::IndexLoadOptions o;
  o.require_images = false;
  return o;
}

json config_json(const odssd::ModelConfig& c) { return json::parse(c.to_json()); }

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw odssd::IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) out[e.path().stem().string()] = e.path();
  }
  return out;
}

// ---- stack --------------------------------------------------------------

struct StackArgs {
  std::string left, right, out, source = "S1";
};

int cmd_stack(const StackArgs& a, RunManifest& m) {
  const auto t0 = Clock::now();
  const auto left = images_by_stem(a.left);
  const auto right = images_by_stem(a.right);
  const fs::path out(a.out);
  fs::create_directories(out / "images");
  odssd::DatasetIndex index;
  std::vector<std::string> problems;
  for (const auto& [stem, lp] : left) {
    auto it = right.find(stem);
    if (it == right.end()) {
      problems.push_back("no right image for " + lp.string());
      continue;
    }
    try {
      const auto stacked = odssd::stack_pair(odssd::read_image(lp), odssd::read_image(it->second));
      const auto dst = out / "images" / (stem + ".png");
      odssd::write_png(dst, stacked);
      index.entries.push_back({dst, out / "annotations" / (stem + ".xml"), a.source});
    } catch (const odssd::Error& e) {
      problems.push_back(stem + ": " + e.what());
    }
  }
  for (const auto& [stem, rp] : right) {
    if (!left.contains(stem)) problems.push_back("no left image for " + rp.string());
  }
  odssd::write_dataset_index(out / "index.tsv", index);
  for (const auto& p : problems) std::cerr << "stack: " << p << "\n";
  m.inputs = {{"left", a.left}, {"right", a.right}};
  m.outputs = {{"index", (out / "index.tsv").string()}, {"stacked", index.entries.size()}};
  m.config = {{"source", a.source}};
  m.notes = problems;
  m.timings = {{"total", seconds_since(t0)}};
  m.write(out / "manifest.json");
  std::cout << "stacked " << index.entries.size() << " pairs into " << out.string() << "\n";
  return problems.empty() ? 0 : 1;
}

// ---- synth --------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 10;
  std::uint64_t seed = 1;
  std::uint64_t first = 0;
  int dy_jitter = 0;
  int min_objects = 1, max_objects = 1;
  int view_width = 160, view_height = 80;
};

int cmd_synth(const SynthArgs& a, RunManifest& m) {
  const auto t0 = Clock::now();
  odssd::SceneSpec spec;
  spec.seed = a.seed;
  spec.view_width = a.view_width;
  spec.view_height = a.view_height;
  spec.max_disparity = std::min(spec.max_disparity, a.view_width / 4);
  spec.dy_jitter = a.dy_jitter;
  spec.min_objects = a.min_objects;
  spec.max_objects = a.max_objects;
  const fs::path out(a.out);
  fs::create_directories(out / "images");
  fs::create_directories(out / "annotations");
  fs::create_directories(out / "disparity");
  odssd::DatasetIndex index;
  for (std::size_t i = 0; i < a.count; ++i) {
    const auto scene = odssd::generate_scene(spec, a.first + i);
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%06zu", static_cast<std::size_t>(a.first + i));
    const auto img = out / "images" / (std::string(name) + ".png");
    const auto xml = out / "annotations" / (std::string(name) + ".xml");
    odssd::write_png(img, odssd::stack_pair(scene.left, scene.right));
    auto doc = odssd::doc_from_objects(std::string(name) + ".png", spec.view_width, spec.view_height, scene.objects);
    doc.folder = "images";
    doc.database = "synthetic";
    write_text(xml, odssd::write_annotation(doc));
    const auto png16 = odssd::encode_png16(scene.dense_disparity);
    odssd::write_file_atomic(out / "disparity" / (std::string(name) + ".png"), png16);
    index.entries.push_back({img, xml, "synthetic"});
  }
  odssd::write_dataset_index(out / "index.tsv", index);
  m.config = {{"seed", a.seed},       {"first_index", a.first},     {"view_width", a.view_width},
              {"view_height", a.view_height}, {"dy_jitter", a.dy_jitter}, {"min_objects", a.min_objects},
              {"max_objects", a.max_objects}};
  m.outputs = {{"index", (out / "index.tsv").string()}, {"scenes", a.count}};
  m.timings = {{"total", seconds_since(t0)}};
  m.write(out / "manifest.json");
  std::cout << "generated " << a.count << " scenes in " << out.string() << "\n";
  return 0;
}

// ---- infer --------------------------------------------------------------

struct InferArgs {
  std::string weights, index, out;
  double score_threshold = -1.0;
};

int cmd_infer(const InferArgs& a, RunManifest& m) {
  const auto t0 = Clock::now();
  auto model = odssd::load_weights(a.weights);
  odssd::ModelConfig cfg = model.config();
  if (a.score_threshold >= 0.0) {
    cfg.score_threshold = a.score_threshold;
  }
  const auto index = odssd::read_dataset_index(a.index, lenient_index());
  const auto priors = odssd::generate_priors(cfg);
  std::vector<odssd::DetectionRecord> records;
  std::vector<std::string> notes;
  double forward_s = 0.0;
  for (const auto& e : index.entries) {
    odssd::Image img;
    try {
      img = odssd::read_image(e.image);
    } catch (const odssd::Error& ex) {
      notes.push_back(e.id() + ": skipped: " + ex.what());
      continue;
    }
    if (img.width != cfg.input_width() || img.height != cfg.input_height()) {
      notes.push_back(e.id() + ": skipped: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                      ", model expects " + std::to_string(cfg.input_width()) + "x" +
                      std::to_string(cfg.input_height()));
      continue;
    }
    const auto tf = Clock::now();
    const auto out = model.forward(nullptr, odssd::images_to_tensor(std::span<const odssd::Image>(&img, 1)));
    const auto dets = odssd::detect(out.confidences, out.locations, priors, cfg).front();
    forward_s += seconds_since(tf);
    for (const auto& d : dets) records.push_back({e.id(), cfg.class_names[static_cast<std::size_t>(d.class_id)], d});
  }
  std::ostringstream os;
  odssd::write_detection_records(os, records);
  write_text(a.out, os.str());
  for (const auto& n : notes) std::cerr << "infer: " << n << "\n";
  m.config = config_json(cfg);
  m.inputs = {{"weights", a.weights}, {"index", a.index}};
  m.outputs = {{"detections", a.out}, {"records", records.size()}};
  m.notes = notes;
  m.timings = {{"total", seconds_since(t0)}, {"inference_and_nms", forward_s}};
  m.write(fs::path(a.out).string() + ".manifest.json");
  std::cout << records.size() << " detections written to " << a.out << "\n";
  return 0;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
  std::string index, detections, gt_dir, out;
  double iou = 0.5;
  double score = 0.0;
};

int cmd_eval(const EvalArgs& a, RunManifest& m) {
  const auto t0 = Clock::now();
  const auto index = odssd::read_dataset_index(a.index, lenient_index());
  std::ifstream in(a.detections);
  if (!in) throw odssd::IoError("cannot open detections " + a.detections);
  const auto records = odssd::read_detection_records(in);
  odssd::EvalOptions opt;
  opt.iou_threshold = a.iou;
  opt.score_threshold = a.score;
  std::optional<fs::path> gt;
  if (!a.gt_dir.empty()) gt = fs::path(a.gt_dir);
  const auto report = odssd::evaluate_dataset(index, records, gt, opt);
  const fs::path out(a.out);
  fs::create_directories(out);
  std::ostringstream txt, kv;
  odssd::write_report_text(txt, report);
  odssd::write_report_kv(kv, report);
  write_text(out / "report.txt", txt.str());
  write_text(out / "report.kv", kv.str());
  std::cout << txt.str();
  m.config = {{"iou_threshold", a.iou}, {"score_threshold", a.score}, {"masked_classes", opt.dense_masked_classes}};
  m.inputs = {{"index", a.index}, {"detections", a.detections}, {"gt_dir", a.gt_dir}};
  m.outputs = {{"report_text", (out / "report.txt").string()}, {"report_kv", (out / "report.kv").string()}};
  m.notes = report.issues;
  m.timings = {{"total", seconds_since(t0)}};
  m.write(out / "manifest.json");
  return 0;
}

// ---- bench --------------------------------------------------------------

struct BenchArgs {
  std::vector<std::string> configs{"640", "320"};
  std::string weights;
  int iterations = 10;
  int warmup = 2;
  double score_threshold = -1.0;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_bench(const BenchArgs& a, RunManifest& m) {
  if (a.iterations < 1 || a.warmup < 0) throw odssd::InvalidInput("bench: need iterations >= 1 and warmup >= 0");
  std::ostringstream report;
  report << "Input\tInference only\tInference + NMS\n";
  json rows = json::array();
  for (const auto& name : a.configs) {
    std::optional<odssd::Model<float>> model;
    if (!a.weights.empty()) {
      model.emplace(odssd::load_weights(a.weights));
    } else {
      model.emplace(preset(name), a.seed);
    }
    auto cfg = model->config();
    if (a.score_threshold >= 0.0) cfg.score_threshold = a.score_threshold;
    const auto t = odssd::time_inference(*model, cfg, a.iterations, a.warmup, a.seed);
    char line[160];
    std::snprintf(line, sizeof(line), "%dx%d\t%.1f ms/frame\t%.1f ms/frame\n", t.input_width, t.input_height,
                  t.inference_ms, t.inference_nms_ms);
    report << line;
    rows.push_back({{"config", name},
                    {"input", std::to_string(cfg.input_width()) + "x" + std::to_string(cfg.input_height())},
                    {"inference_only_ms", t.inference_ms},
                    {"inference_nms_ms", t.inference_nms_ms},
                    {"mean_detections", t.mean_detections}});
  }
  std::cout << report.str();
  m.config = {{"configs", a.configs}, {"iterations", a.iterations}, {"warmup", a.warmup}, {"seed", a.seed}};
  m.inputs = {{"weights", a.weights}};
  m.timings = {{"results", rows}};
  if (!a.out.empty()) {
    write_text(fs::path(a.out) / "bench.txt", report.str());
    m.outputs = {{"report", (fs::path(a.out) / "bench.txt").string()}};
    m.write(fs::path(a.out) / "manifest.json");
  } else {
    m.write("bench.manifest.json");
  }
  return 0;
}

// ---- train-toy ----------------------------------------------------------

struct TrainArgs {
  std::string out;
  odssd::TrainOptions options;
  int dy_jitter = 0;
};

int cmd_train_toy(TrainArgs a, RunManifest& m) {
  const auto t0 = Clock::now();
  const fs::path out(a.out);
  fs::create_directories(out);
  a.options.scenes.dy_jitter = a.dy_jitter;
  a.options.checkpoint = out / "checkpoint.weights";
  std::ofstream curve(out / "loss_curve.tsv");
  curve << "epoch\tloss\tclassification\tregression\tlearning_rate\tseconds\n";
  auto result = odssd::train_toy(a.options, [&](const odssd::EpochStats& s) {
    curve << s.epoch << '\t' << s.loss << '\t' << s.classification << '\t' << s.regression << '\t' << s.learning_rate
          << '\t' << s.seconds << std::endl;
    std::cout << "epoch " << s.epoch << " loss " << s.loss << " (" << s.seconds << " s)" << std::endl;
  });
  odssd::save_weights(out / "model.weights", result.model, odssd::WeightPrecision::Float32);
  auto held_spec = a.options.scenes;
  held_spec.seed = a.options.scenes.seed + 1000;
  const auto held = odssd::evaluate_held_out(result.model, held_spec, 0, 100);
  const double final_loss = result.curve.empty() ? result.initial_loss : result.curve.back().loss;
  std::cout << "initial loss " << result.initial_loss << ", final loss " << final_loss << "\n"
            << "held-out: " << held.detected << "/" << held.objects << " detected, mean |dx error| "
            << held.mean_abs_dx_error << " px\n";
  if (result.diverged) std::cerr << "train-toy: " << result.message << "\n";
  const auto& o = a.options;
  m.config = {{"model", config_json(o.model)},
              {"train_scenes", o.train_scenes},
              {"scene_seed", o.scenes.seed},
              {"dy_jitter", o.scenes.dy_jitter},
              {"epochs", o.epochs},
              {"batch_size", o.batch_size},
              {"learning_rate", o.learning_rate},
              {"momentum", o.momentum},
              {"weight_decay", o.weight_decay},
              {"lr_step_epochs", o.lr_step_epochs},
              {"lr_gamma", o.lr_gamma},
              {"grad_clip", o.grad_clip},
              {"warmup_epochs", o.warmup_epochs},
              {"mirror_augment", o.mirror_augment},
              {"init_seed", o.init_seed},
              {"shuffle_seed", o.shuffle_seed}};
  m.outputs = {{"weights", (out / "model.weights").string()},
               {"loss_curve", (out / "loss_curve.tsv").string()},
               {"initial_loss", result.initial_loss},
               {"final_loss", final_loss},
               {"held_out_mean_abs_dx_error", held.mean_abs_dx_error},
               {"held_out_detected", held.detected},
               {"held_out_objects", held.objects}};
  if (result.diverged) m.notes.push_back(result.message);
  m.timings = {{"total", seconds_since(t0)}};
  m.write(out / "manifest.json");
  return result.diverged ? 1 : 0;
}

// ---- serve --------------------------------------------------------------

odssd::AnnotationServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

struct ServeArgs {
  std::string index, annotations, host = "127.0.0.1";
  int port = 8080;
};

int cmd_serve(const ServeArgs& a, RunManifest& m) {
  auto index = odssd::read_dataset_index(a.index);
  std::optional<fs::path> dir;
  if (!a.annotations.empty()) dir = fs::path(a.annotations);
  odssd::AnnotationService service(std::move(index), dir);
  odssd::AnnotationServer server(service);
  const int port = server.bind(a.host, a.port);
  m.config = {{"host", a.host}, {"port", port}};
  m.inputs = {{"index", a.index}, {"annotations", a.annotations}};
  m.write(fs::path(a.index).parent_path() / "serve.manifest.json");
  std::cout << "serving " << service.index().entries.size() << " pairs on http://" << a.host << ":" << port
            << std::endl;
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  g_server = nullptr;
  return 0;
}

int run(int argc, char** argv);

int cmd_replay(const std::string& manifest) {
  const auto bytes = odssd::read_file(manifest);
  const auto j = json::parse(std::string(bytes.begin(), bytes.end()));
  auto args = j.at("argv").get<std::vector<std::string>>();
  std::vector<char*> ptrs;
  for (auto& s : args) ptrs.push_back(s.data());
  return run(static_cast<int>(ptrs.size()), ptrs.data());
}

int run(int argc, char** argv) {
  CLI::App app{"Stereo object-disparity toolkit"};
  app.set_version_flag("--version", ODSSD_VERSION);
  app.require_subcommand(1);
  RunManifest manifest;
  for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);

  StackArgs stack;
  auto* s_stack = app.add_subcommand("stack", "Stack left/right images into top/bottom pairs");
  s_stack->add_option("--left", stack.left, "Directory of left images")->required();
  s_stack->add_option("--right", stack.right, "Directory of right images (same file stems)")->required();
  s_stack->add_option("--out", stack.out, "Output directory")->required();
  s_stack->add_option("--source", stack.source, "Source system tag for the index");

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic stacked dataset with annotations");
  s_synth->add_option("--out", synth.out)->required();
  s_synth->add_option("--count", synth.count);
  s_synth->add_option("--seed", synth.seed);
  s_synth->add_option("--first-index", synth.first);
  s_synth->add_option("--dy-jitter", synth.dy_jitter);
  s_synth->add_option("--min-objects", synth.min_objects);
  s_synth->add_option("--max-objects", synth.max_objects);
  s_synth->add_option("--view-width", synth.view_width);
  s_synth->add_option("--view-height", synth.view_height);

  InferArgs infer;
  auto* s_infer = app.add_subcommand("infer", "Detect objects and disparities on an indexed dataset");
  s_infer->add_option("--weights", infer.weights)->required();
  s_infer->add_option("--index", infer.index)->required();
  s_infer->add_option("--out", infer.out, "Detection records file")->required();
  s_infer->add_option("--score-threshold", infer.score_threshold, "Override the model's score threshold");

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "Evaluate detection records against annotations");
  s_eval->add_option("--index", eval.index)->required();
  s_eval->add_option("--detections", eval.detections)->required();
  s_eval->add_option("--gt-dir", eval.gt_dir, "Dense 16-bit disparity PNGs named <id>.png");
  s_eval->add_option("--out", eval.out)->required();
  s_eval->add_option("--iou", eval.iou);
  s_eval->add_option("--score-threshold", eval.score);

  BenchArgs bench;
  auto* s_bench = app.add_subcommand("bench", "Time inference and inference + NMS");
  s_bench->add_option("--config", bench.configs, "Presets to time (640, 320, voc640, toy)");
  s_bench->add_option("--weights", bench.weights);
  s_bench->add_option("--iterations", bench.iterations);
  s_bench->add_option("--warmup", bench.warmup);
  s_bench->add_option("--score-threshold", bench.score_threshold);
  s_bench->add_option("--seed", bench.seed);
  s_bench->add_option("--out", bench.out);

  TrainArgs train;
  auto* s_train = app.add_subcommand("train-toy", "Train the toy model on synthetic scenes");
  s_train->add_option("--out", train.out)->required();
  s_train->add_option("--epochs", train.options.epochs);
  s_train->add_option("--scenes", train.options.train_scenes);
  s_train->add_option("--batch", train.options.batch_size);
  s_train->add_option("--lr", train.options.learning_rate);
  s_train->add_option("--momentum", train.options.momentum);
  s_train->add_option("--weight-decay", train.options.weight_decay);
  s_train->add_option("--lr-step", train.options.lr_step_epochs);
  s_train->add_option("--grad-clip", train.options.grad_clip);
  s_train->add_option("--dy-jitter", train.dy_jitter);
  s_train->add_option("--scene-seed", train.options.scenes.seed);
  s_train->add_option("--init-seed", train.options.init_seed);
  s_train->add_option("--shuffle-seed", train.options.shuffle_seed);

  ServeArgs serve;
  auto* s_serve = app.add_subcommand("serve", "HTTP backend for the annotation UI");
  s_serve->add_option("--index", serve.index)->required();
  s_serve->add_option("--annotations", serve.annotations, "Directory for <id>.xml (default: index paths)");
  s_serve->add_option("--host", serve.host);
  s_serve->add_option("--port", serve.port);

  std::string preset_name = "640";
  std::string dump_out;
  auto* s_config = app.add_subcommand("config", "Print a model configuration as JSON");
  s_config->add_option("--preset", preset_name);
  s_config->add_option("--out", dump_out);

  std::string replay;
  auto* s_replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  s_replay->add_option("manifest", replay)->required();

  CLI11_PARSE(app, argc, argv);

  if (s_stack->parsed()) return manifest.command = "stack", cmd_stack(stack, manifest);
  if (s_synth->parsed()) return manifest.command = "synth", cmd_synth(synth, manifest);
  if (s_infer->parsed()) return manifest.command = "infer", cmd_infer(infer, manifest);
  if (s_eval->parsed()) return manifest.command = "eval", cmd_eval(eval, manifest);
  if (s_bench->parsed()) return manifest.command = "bench", cmd_bench(bench, manifest);
  if (s_train->parsed()) return manifest.command = "train-toy", cmd_train_toy(train, manifest);
  if (s_serve->parsed()) return manifest.command = "serve", cmd_serve(serve, manifest);
  if (s_replay->parsed()) return cmd_replay(replay);
  if (s_config->parsed()) {
    const auto text = json::parse(preset(preset_name).to_json()).dump(2) + "\n";
    if (dump_out.empty()) {
      std::cout << text;
    } else {
      write_text(dump_out, text);
    }
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "odssd: " << e.what() << "\n";
    return 2;
  }
}
