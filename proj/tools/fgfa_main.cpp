#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fgfa/errors.hpp"
#include "fgfa/eval.hpp"
#include "fgfa/gradcheck.hpp"
#include "fgfa/infer.hpp"
#include "fgfa/nets.hpp"
#include "fgfa/parallel.hpp"
#include "fgfa/rng.hpp"
#include "fgfa/synthetic.hpp"
#include "fgfa/tensor_io.hpp"
#include "fgfa/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "fgfa 0.1.0";

// Flat dotted-key settings: defaults, then config file, then CLI flags.
class Settings {
 public:
  void set_default(const std::string& key, json value) {
    if (!values_.contains(key)) values_[key] = std::move(value);
  }
  void merge_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw fgfa::IoError("cannot open config file " + path);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw fgfa::ConfigError("config file " + path + ": " + e.what());
    }
    if (!j.is_object()) throw fgfa::ConfigError("config file " + path + " must be a JSON object");
    for (const auto& [key, val] : j.items()) {
      if (!values_.contains(key)) {
        throw fgfa::ConfigError("unknown config key '" + key + "' in " + path);
      }
      values_[key] = val;
    }
  }
  void override_value(const std::string& key, json value) { values_[key] = std::move(value); }
  void replace_all(json flat) { values_ = std::move(flat); }

  const json& raw() const { return values_; }

  std::string str(const std::string& key) const {
    require(key);
    if (!values_.at(key).is_string()) throw fgfa::ConfigError("config key '" + key + "' must be a string");
    return values_.at(key).get<std::string>();
  }
  long integer(const std::string& key) const {
    require(key);
    if (!values_.at(key).is_number_integer()) {
      throw fgfa::ConfigError("config key '" + key + "' must be an integer");
    }
    return values_.at(key).get<long>();
  }
  double num(const std::string& key) const {
    require(key);
    if (!values_.at(key).is_number()) throw fgfa::ConfigError("config key '" + key + "' must be a number");
    return values_.at(key).get<double>();
  }
  bool flag(const std::string& key) const {
    require(key);
    if (!values_.at(key).is_boolean()) throw fgfa::ConfigError("config key '" + key + "' must be a boolean");
    return values_.at(key).get<bool>();
  }

 private:
  void require(const std::string& key) const {
    if (!values_.contains(key)) throw fgfa::ConfigError("missing config key '" + key + "'");
  }
  json values_ = json::object();
};

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

void write_manifest(const fs::path& dir, const std::string& command,
                    const std::vector<std::string>& argv, const Settings& settings,
                    const ordered_json& inputs, const ordered_json& outputs,
                    const ordered_json& stats, double total_ms) {
  ordered_json m;
  m["engine_version"] = kVersion;
  m["command"] = command;
  m["argv"] = argv;
  m["threads"] = fgfa::max_threads();
  m["config"] = settings.raw();
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  if (!stats.empty()) m["stats"] = stats;
  m["timings_ms"] = ordered_json{{"total", total_ms}};
  std::error_code ec;
  fs::create_directories(dir, ec);
  const fs::path path = dir / ("run_manifest_" + command + ".json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fgfa::IoError("cannot write manifest " + path.string());
  out << m.dump(2) << "\n";
  if (!out) throw fgfa::IoError("failed writing manifest " + path.string());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fgfa::IoError("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fgfa::NetConfig net_config_from_settings(const Settings& s) {
  fgfa::NetConfig c;
  c.num_classes = static_cast<int>(s.integer("net.num_classes"));
  c.embed_mid = static_cast<int>(s.integer("net.embed_mid"));
  c.embed_out = static_cast<int>(s.integer("net.embed_out"));
  c.anchor_size = s.num("net.anchor_size");
  c.score_thresh = s.num("net.score_thresh");
  c.nms_iou = s.num("net.nms_iou");
  c.validate();
  return c;
}

void set_net_defaults(Settings& s) {
  fgfa::NetConfig d;
  s.set_default("net.num_classes", d.num_classes);
  s.set_default("net.embed_mid", d.embed_mid);
  s.set_default("net.embed_out", d.embed_out);
  s.set_default("net.anchor_size", d.anchor_size);
  s.set_default("net.score_thresh", d.score_thresh);
  s.set_default("net.nms_iou", d.nms_iou);
}

std::string offset_tag(int d) {
  std::ostringstream os;
  os << (d < 0 ? 'm' : 'p') << std::setw(2) << std::setfill('0') << std::abs(d);
  return os.str();
}

std::string pad4(int v) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << v;
  return os.str();
}

void run_generate(const Settings& s, const std::vector<std::string>& argv) {
  Timer timer;
  const std::string spec_path = s.str("generate.spec");
  const std::string out_dir = s.str("generate.out");
  fgfa::SceneSpec spec = fgfa::scene_spec_from_json(read_text_file(spec_path));
  fgfa::Dataset ds = fgfa::generate(spec);
  fgfa::save_dataset(out_dir, ds);
  write_manifest(out_dir, "generate", argv, s, ordered_json{{"spec", spec_path}},
                 ordered_json{{"dataset", out_dir}}, {}, timer.ms());
}

void run_infer(const Settings& s, const std::vector<std::string>& argv) {
  Timer timer;
  const std::string data_dir = s.str("infer.data");
  const std::string ckpt_dir = s.str("infer.checkpoint");
  const std::string out_file = s.str("infer.out");
  const int k = static_cast<int>(s.integer("infer.k"));
  const fgfa::InferMode mode = fgfa::infer_mode_from_string(s.str("infer.mode"));
  const double noise = s.num("infer.flow_noise");

  fgfa::LoadedDataset data = fgfa::load_dataset(data_dir);
  fgfa::CheckpointMeta meta;
  fgfa::Model model = fgfa::load_checkpoint(ckpt_dir, &meta);
  fgfa::InferConfig config = fgfa::InferConfig::for_mode(mode, k);
  config.record_weights = s.flag("infer.record_weights");

  const int stride = model.config.feature_stride();
  std::unique_ptr<fgfa::FlowSource> base;
  if (config.use_flow) {
    if (config.composed) {
      base = std::make_unique<fgfa::ComposedFlowSource>(&data.flows, stride);
    } else {
      base = std::make_unique<fgfa::ExactFlowSource>(data.spec, stride);
    }
  }
  std::unique_ptr<fgfa::NoisyFlowSource> noisy;
  fgfa::FlowSource* src = base.get();
  if (base && noise > 0) {
    noisy = std::make_unique<fgfa::NoisyFlowSource>(base.get(), noise,
                                                    static_cast<uint32_t>(s.integer("seed")));
    src = noisy.get();
  }
  fgfa::InferResult result = fgfa::infer_video(data.frames, model, config, src);
  const fs::path out_path(out_file);
  const fs::path out_parent = out_path.parent_path().empty() ? "." : out_path.parent_path();
  std::error_code ec;
  fs::create_directories(out_parent, ec);
  fgfa::write_detections_jsonl(out_file, result.detections);
  ordered_json outputs{{"detections", out_file}};
  if (config.record_weights) {
    const fs::path wdir = out_parent / "weights";
    fs::create_directories(wdir, ec);
    for (const fgfa::WeightRecord& rec : result.weights) {
      const std::string name = pad4(rec.frame) + "_" + offset_tag(rec.offset) + ".fgt";
      fgfa::write_tensor((wdir / name).string(), rec.map);
    }
    const auto rows = fgfa::weight_histogram(result, data.tracks, k, stride,
                                             static_cast<int>(data.frames.size()));
    const fs::path hist = out_parent / "weight_histogram.csv";
    fgfa::write_weight_histogram_csv(hist.string(), rows);
    outputs["weights_dir"] = wdir.string();
    outputs["weight_histogram"] = hist.string();
  }
  ordered_json stats;
  stats["frames"] = static_cast<int>(data.frames.size());
  stats["feature_extractions"] = result.feature_extractions;
  stats["flow_evaluations"] = result.flow_evaluations;
  write_manifest(out_parent, "infer", argv, s,
                 ordered_json{{"data", data_dir}, {"checkpoint", ckpt_dir}}, outputs, stats,
                 timer.ms());
}

void run_train(const Settings& s, const std::vector<std::string>& argv) {
  Timer timer;
  const std::string data_dir = s.str("train.data");
  const std::string out_dir = s.str("train.out");
  fgfa::LoadedDataset data = fgfa::load_dataset(data_dir);

  fgfa::TrainConfig cfg;
  cfg.k_train = static_cast<int>(s.integer("train.k_train"));
  cfg.t_range = static_cast<int>(s.integer("train.t_range"));
  cfg.iterations = static_cast<int>(s.integer("train.iterations"));
  cfg.lr_initial = s.num("train.lr_initial");
  cfg.lr_final = s.num("train.lr_final");
  cfg.lr_switch_frac = s.num("train.lr_switch_frac");
  cfg.momentum = s.num("train.momentum");
  cfg.pos_weight = s.num("train.pos_weight");
  cfg.box_weight = s.num("train.box_weight");
  cfg.flow_noise_sigma = s.num("train.flow_noise_sigma");
  const uint32_t seed = static_cast<uint32_t>(s.integer("seed"));
  cfg.seed = seed + 1;  // init and step streams stay distinct
  cfg.dump_dir = (fs::path(out_dir) / "nan_dump").string();
  cfg.validate();

  fgfa::NetConfig net_cfg = net_config_from_settings(s);
  fgfa::Rng init_rng(seed);
  fgfa::Model model = fgfa::make_model<float>(net_cfg, init_rng);
  fgfa::TrainClip clip{data.spec, data.frames, data.tracks};
  fgfa::TrainResult result = fgfa::train({clip}, model, cfg);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path ckpt = fs::path(out_dir) / "checkpoint";
  fgfa::CheckpointMeta meta;
  meta.step = cfg.iterations;
  meta.rng_state = result.final_rng_state;
  fgfa::save_checkpoint(ckpt.string(), result.model, meta);
  const fs::path log = fs::path(out_dir) / "train_log.csv";
  fgfa::write_train_log_csv(log.string(), result.log);
  write_manifest(out_dir, "train", argv, s, ordered_json{{"data", data_dir}},
                 ordered_json{{"checkpoint", ckpt.string()}, {"train_log", log.string()}}, {},
                 timer.ms());
}

void run_eval(const Settings& s, const std::vector<std::string>& argv) {
  Timer timer;
  const std::string det_file = s.str("eval.detections");
  const std::string data_dir = s.str("eval.data");
  const std::string out_file = s.str("eval.out");

  std::vector<fgfa::Detection> dets = fgfa::read_detections_jsonl(det_file);
  std::vector<fgfa::Track> tracks =
      fgfa::read_tracks_json((fs::path(data_dir) / "tracks.json").string());

  const fs::path out_path(out_file);
  const fs::path out_parent = out_path.parent_path().empty() ? "." : out_path.parent_path();
  std::error_code ec;
  fs::create_directories(out_parent, ec);
  ordered_json outputs;
  if (s.flag("eval.seq_nms")) {
    fgfa::SeqNmsConfig nms_cfg;
    nms_cfg.link_iou = s.num("eval.link_iou");
    nms_cfg.suppress_iou = s.num("eval.suppress_iou");
    dets = fgfa::seq_nms(dets, nms_cfg);
    const fs::path rescored = out_parent / "detections_seqnms.jsonl";
    fgfa::write_detections_jsonl(rescored.string(), dets);
    outputs["detections_seqnms"] = rescored.string();
  }
  fgfa::EvalOptions opt;
  opt.iou_thresh = s.num("eval.iou");
  opt.eleven_point = s.flag("eval.eleven_point");
  opt.cross_group_fp = s.flag("eval.cross_group_fp");
  fgfa::EvalResult res = fgfa::evaluate_map(dets, fgfa::tracks_to_gt(tracks), opt);
  fgfa::write_metrics_json(out_file, res);
  outputs["metrics"] = out_file;
  for (const auto& [cls, pr] : res.pr_curves) {
    const fs::path pr_path = out_parent / ("pr_class_" + std::to_string(cls) + ".csv");
    std::ofstream pr_out(pr_path, std::ios::binary);
    if (!pr_out) throw fgfa::IoError("cannot write " + pr_path.string());
    pr_out << "recall,precision\n";
    for (const auto& [r, p] : pr) {
      std::ostringstream line;
      line.precision(9);
      line << r << "," << p << "\n";
      pr_out << line.str();
    }
  }
  write_manifest(out_parent, "eval", argv, s,
                 ordered_json{{"detections", det_file}, {"data", data_dir}}, outputs, {},
                 timer.ms());
}

int run_gradcheck(const Settings& s, const std::vector<std::string>& argv) {
  Timer timer;
  const std::string component = s.str("gradcheck.component");
  const int trials = static_cast<int>(s.integer("gradcheck.trials"));
  const uint32_t seed = static_cast<uint32_t>(s.integer("seed"));
  const std::string out_dir = s.str("gradcheck.out");
  std::vector<fgfa::GradCheckReport> reports = fgfa::run_grad_checks(component, trials, seed);
  bool all_pass = true;
  ordered_json jr = ordered_json::array();
  for (const fgfa::GradCheckReport& r : reports) {
    std::cout << r.component << " coords=" << r.coords << " max_rel_err=" << r.max_rel_err
              << " mean_rel_err=" << r.mean_rel_err << " tolerance=" << r.tolerance << " "
              << (r.pass ? "pass" : "FAIL") << "\n";
    all_pass = all_pass && r.pass;
    jr.push_back(ordered_json{{"component", r.component},
                              {"coords", r.coords},
                              {"max_rel_err", r.max_rel_err},
                              {"mean_rel_err", r.mean_rel_err},
                              {"tolerance", r.tolerance},
                              {"pass", r.pass}});
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path rpt = fs::path(out_dir) / "gradcheck_report.json";
  std::ofstream out(rpt, std::ios::binary);
  if (!out) throw fgfa::IoError("cannot write " + rpt.string());
  out << jr.dump(2) << "\n";
  write_manifest(out_dir, "gradcheck", argv, s, {}, ordered_json{{"report", rpt.string()}}, {},
                 timer.ms());
  return all_pass ? 0 : 3;
}

struct ReportRow {
  std::string run;
  std::string mode;
  fgfa::EvalResult metrics;
  double runtime_ms = 0.0;
};

void run_report(const Settings& s, const std::vector<std::string>& argv) {
  Timer timer;
  const std::string runs_dir = s.str("report.runs");
  const std::string out_csv = s.str("report.out");
  if (!fs::is_directory(runs_dir)) throw fgfa::IoError("runs dir not found: " + runs_dir);
  std::vector<ReportRow> rows;
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(runs_dir)) {
    if (e.is_directory()) entries.push_back(e.path());
  }
  std::sort(entries.begin(), entries.end());
  for (const fs::path& dir : entries) {
    const fs::path manifest = dir / "run_manifest_infer.json";
    const fs::path metrics = dir / "metrics.json";
    if (!fs::exists(manifest) || !fs::exists(metrics)) continue;
    json m;
    try {
      std::ifstream in(manifest, std::ios::binary);
      in >> m;
    } catch (const json::parse_error& e) {
      throw fgfa::IoError(manifest.string() + ": " + e.what());
    }
    ReportRow row;
    row.run = dir.filename().string();
    row.mode = m.at("config").value("infer.mode", "?");
    row.runtime_ms = m.at("timings_ms").value("total", 0.0);
    row.metrics = fgfa::read_metrics_json(metrics.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw fgfa::IoError("no evaluated runs under " + runs_dir);

  const fs::path csv_path(out_csv);
  fs::path md_path = csv_path;
  md_path.replace_extension(".md");
  std::error_code ec;
  if (!csv_path.parent_path().empty()) fs::create_directories(csv_path.parent_path(), ec);
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw fgfa::IoError("cannot write " + csv_path.string());
  csv << "run,mode,map,map_slow,map_medium,map_fast,runtime_ms\n";
  for (const ReportRow& r : rows) {
    std::ostringstream line;
    line.precision(6);
    line << r.run << "," << r.mode << "," << r.metrics.map << "," << r.metrics.map_slow << ","
         << r.metrics.map_medium << "," << r.metrics.map_fast << "," << r.runtime_ms << "\n";
    csv << line.str();
  }
  std::ofstream md(md_path, std::ios::binary);
  if (!md) throw fgfa::IoError("cannot write " + md_path.string());
  md << "| run | mode | mAP | mAP slow | mAP medium | mAP fast | runtime ms |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (const ReportRow& r : rows) {
    std::ostringstream line;
    line.precision(4);
    line << "| " << r.run << " | " << r.mode << " | " << r.metrics.map << " | "
         << r.metrics.map_slow << " | " << r.metrics.map_medium << " | " << r.metrics.map_fast
         << " | " << std::fixed << std::setprecision(1) << r.runtime_ms << " |\n";
    md << line.str();
  }
  write_manifest(csv_path.parent_path().empty() ? "." : csv_path.parent_path(), "report", argv, s,
                 ordered_json{{"runs", runs_dir}},
                 ordered_json{{"csv", csv_path.string()}, {"markdown", md_path.string()}}, {},
                 timer.ms());
}

int dispatch(const std::string& command, const Settings& s,
             const std::vector<std::string>& argv) {
  if (command == "generate") {
    run_generate(s, argv);
  } else if (command == "infer") {
    run_infer(s, argv);
  } else if (command == "train") {
    run_train(s, argv);
  } else if (command == "eval") {
    run_eval(s, argv);
  } else if (command == "gradcheck") {
    return run_gradcheck(s, argv);
  } else if (command == "report") {
    run_report(s, argv);
  } else {
    throw fgfa::ConfigError("unknown command '" + command + "'");
  }
  return 0;
}

int run_rerun(const std::string& manifest_path, const std::string& out_override,
              const std::vector<std::string>& argv) {
  json m;
  {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw fgfa::IoError("cannot open manifest " + manifest_path);
    try {
      in >> m;
    } catch (const json::parse_error& e) {
      throw fgfa::IoError(manifest_path + ": " + e.what());
    }
  }
  const std::string command = m.value("command", "");
  if (command.empty()) throw fgfa::ConfigError("manifest has no command field");
  Settings s;
  s.replace_all(m.at("config"));
  if (!out_override.empty()) {
    // every command names its primary output "<command>.out"
    s.override_value(command + ".out", out_override);
  }
  fgfa::set_max_threads(static_cast<int>(m.value("threads", 1)));
  return dispatch(command, s, argv);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> argv_vec(argv, argv + argc);
  CLI::App app{"flow-guided feature aggregation engine"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  int threads = 1;
  long seed = 1;
  std::string config_file;

  Settings s;
  s.set_default("seed", 1);
  s.set_default("threads", 1);

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "worker thread cap (1 = deterministic serial)");
    sub->add_option("--seed", seed, "rng seed");
    sub->add_option("--config", config_file, "JSON config file with flat dotted keys");
  };

  // generate
  auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
  std::string gen_spec, gen_out;
  gen->add_option("--spec", gen_spec, "scene spec JSON")->required();
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  add_common(gen);

  // infer
  auto* inf = app.add_subcommand("infer", "run detection over a dataset");
  std::string inf_data, inf_ckpt, inf_out, inf_mode = "fgfa";
  int inf_k = 10;
  double inf_noise = 0.0;
  bool inf_record = false;
  inf->add_option("--data", inf_data, "dataset directory")->required();
  inf->add_option("--checkpoint", inf_ckpt, "checkpoint directory")->required();
  inf->add_option("--out", inf_out, "detections JSONL path")->required();
  inf->add_option("--mode", inf_mode, "single|naive|adaptive|fgfa|fgfa-composed");
  inf->add_option("--k", inf_k, "neighbor radius");
  inf->add_option("--flow-noise", inf_noise, "gaussian flow perturbation sigma");
  inf->add_flag("--record-weights", inf_record, "dump per-offset weight maps and histogram");
  add_common(inf);

  // train
  auto* trn = app.add_subcommand("train", "train the toy detector");
  std::string trn_data, trn_out;
  fgfa::TrainConfig trn_defaults;
  int trn_ktrain = trn_defaults.k_train, trn_trange = trn_defaults.t_range,
      trn_iters = trn_defaults.iterations;
  double trn_lri = trn_defaults.lr_initial, trn_lrf = trn_defaults.lr_final,
         trn_switch = trn_defaults.lr_switch_frac, trn_momentum = trn_defaults.momentum,
         trn_posw = trn_defaults.pos_weight, trn_boxw = trn_defaults.box_weight,
         trn_noise = trn_defaults.flow_noise_sigma;
  trn->add_option("--data", trn_data, "dataset directory")->required();
  trn->add_option("--out", trn_out, "output run directory")->required();
  trn->add_option("--k-train", trn_ktrain, "neighbors sampled per step");
  trn->add_option("--t-range", trn_trange, "neighbor sampling radius");
  trn->add_option("--iterations", trn_iters, "sgd steps");
  trn->add_option("--lr-initial", trn_lri, "first-phase learning rate");
  trn->add_option("--lr-final", trn_lrf, "second-phase learning rate");
  trn->add_option("--lr-switch-frac", trn_switch, "fraction of steps on the first rate");
  trn->add_option("--momentum", trn_momentum, "sgd momentum");
  trn->add_option("--pos-weight", trn_posw, "foreground cell weight in the loss");
  trn->add_option("--box-weight", trn_boxw, "box regression loss scale");
  trn->add_option("--flow-noise", trn_noise, "training flow perturbation sigma");
  add_common(trn);

  // eval
  auto* evl = app.add_subcommand("eval", "score detections against ground truth");
  std::string evl_dets, evl_data, evl_out;
  double evl_iou = 0.5;
  bool evl_seqnms = false, evl_eleven = false, evl_crossfp = false;
  fgfa::SeqNmsConfig seq_defaults;
  double evl_link = seq_defaults.link_iou, evl_suppress = seq_defaults.suppress_iou;
  evl->add_option("--detections", evl_dets, "detections JSONL")->required();
  evl->add_option("--data", evl_data, "dataset directory with tracks.json")->required();
  evl->add_option("--out", evl_out, "metrics JSON path")->required();
  evl->add_option("--iou", evl_iou, "match IoU threshold");
  evl->add_flag("--seq-nms", evl_seqnms, "link and rescore boxes across frames first");
  evl->add_flag("--eleven-point", evl_eleven, "11-point AP interpolation");
  evl->add_flag("--cross-group-fp", evl_crossfp,
                "count out-of-group matches as false positives");
  evl->add_option("--link-iou", evl_link, "seq-nms link threshold");
  evl->add_option("--suppress-iou", evl_suppress, "seq-nms suppression threshold");
  add_common(evl);

  // gradcheck
  auto* grd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string grd_component = "all", grd_out = ".";
  int grd_trials = 3;
  grd->add_option("--component", grd_component, "component name or 'all'");
  grd->add_option("--trials", grd_trials, "instances per component");
  grd->add_option("--out", grd_out, "report directory");
  add_common(grd);

  // report
  auto* rpt = app.add_subcommand("report", "collect evaluated runs into a grid");
  std::string rpt_runs, rpt_out;
  rpt->add_option("--runs", rpt_runs, "directory of run directories")->required();
  rpt->add_option("--out", rpt_out, "output CSV path (Markdown written beside it)")->required();
  add_common(rpt);

  // rerun
  auto* rrn = app.add_subcommand("rerun", "replay a command from its manifest");
  std::string rrn_manifest, rrn_out;
  rrn->add_option("--manifest", rrn_manifest, "run manifest JSON")->required();
  rrn->add_option("--out-override", rrn_out, "redirect the primary output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (rrn->parsed()) {
      return run_rerun(rrn_manifest, rrn_out, argv_vec);
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();

    // defaults
    if (command == "generate") {
      s.set_default("generate.spec", "");
      s.set_default("generate.out", "");
    } else if (command == "infer") {
      s.set_default("infer.data", "");
      s.set_default("infer.checkpoint", "");
      s.set_default("infer.out", "");
      s.set_default("infer.mode", inf_mode);
      s.set_default("infer.k", inf_k);
      s.set_default("infer.flow_noise", inf_noise);
      s.set_default("infer.record_weights", false);
    } else if (command == "train") {
      s.set_default("train.data", "");
      s.set_default("train.out", "");
      s.set_default("train.k_train", trn_ktrain);
      s.set_default("train.t_range", trn_trange);
      s.set_default("train.iterations", trn_iters);
      s.set_default("train.lr_initial", trn_lri);
      s.set_default("train.lr_final", trn_lrf);
      s.set_default("train.lr_switch_frac", trn_switch);
      s.set_default("train.momentum", trn_momentum);
      s.set_default("train.pos_weight", trn_posw);
      s.set_default("train.box_weight", trn_boxw);
      s.set_default("train.flow_noise_sigma", trn_noise);
      set_net_defaults(s);
    } else if (command == "eval") {
      s.set_default("eval.detections", "");
      s.set_default("eval.data", "");
      s.set_default("eval.out", "");
      s.set_default("eval.iou", evl_iou);
      s.set_default("eval.seq_nms", false);
      s.set_default("eval.eleven_point", false);
      s.set_default("eval.cross_group_fp", false);
      s.set_default("eval.link_iou", evl_link);
      s.set_default("eval.suppress_iou", evl_suppress);
    } else if (command == "gradcheck") {
      s.set_default("gradcheck.component", grd_component);
      s.set_default("gradcheck.trials", grd_trials);
      s.set_default("gradcheck.out", grd_out);
    } else if (command == "report") {
      s.set_default("report.runs", "");
      s.set_default("report.out", "");
    }

    // config file between defaults and explicit flags
    if (sub->count("--config") > 0) s.merge_file(config_file);

    auto override_if = [&](const char* flag, const std::string& key, json value) {
      if (sub->count(flag) > 0) s.override_value(key, std::move(value));
    };
    if (sub->count("--threads") > 0) s.override_value("threads", threads);
    if (sub->count("--seed") > 0) s.override_value("seed", seed);

    if (command == "generate") {
      override_if("--spec", "generate.spec", gen_spec);
      override_if("--out", "generate.out", gen_out);
    } else if (command == "infer") {
      override_if("--data", "infer.data", inf_data);
      override_if("--checkpoint", "infer.checkpoint", inf_ckpt);
      override_if("--out", "infer.out", inf_out);
      override_if("--mode", "infer.mode", inf_mode);
      override_if("--k", "infer.k", inf_k);
      override_if("--flow-noise", "infer.flow_noise", inf_noise);
      override_if("--record-weights", "infer.record_weights", inf_record);
    } else if (command == "train") {
      override_if("--data", "train.data", trn_data);
      override_if("--out", "train.out", trn_out);
      override_if("--k-train", "train.k_train", trn_ktrain);
      override_if("--t-range", "train.t_range", trn_trange);
      override_if("--iterations", "train.iterations", trn_iters);
      override_if("--lr-initial", "train.lr_initial", trn_lri);
      override_if("--lr-final", "train.lr_final", trn_lrf);
      override_if("--lr-switch-frac", "train.lr_switch_frac", trn_switch);
      override_if("--momentum", "train.momentum", trn_momentum);
      override_if("--pos-weight", "train.pos_weight", trn_posw);
      override_if("--box-weight", "train.box_weight", trn_boxw);
      override_if("--flow-noise", "train.flow_noise_sigma", trn_noise);
    } else if (command == "eval") {
      override_if("--detections", "eval.detections", evl_dets);
      override_if("--data", "eval.data", evl_data);
      override_if("--out", "eval.out", evl_out);
      override_if("--iou", "eval.iou", evl_iou);
      override_if("--seq-nms", "eval.seq_nms", evl_seqnms);
      override_if("--eleven-point", "eval.eleven_point", evl_eleven);
      override_if("--cross-group-fp", "eval.cross_group_fp", evl_crossfp);
      override_if("--link-iou", "eval.link_iou", evl_link);
      override_if("--suppress-iou", "eval.suppress_iou", evl_suppress);
    } else if (command == "gradcheck") {
      override_if("--component", "gradcheck.component", grd_component);
      override_if("--trials", "gradcheck.trials", grd_trials);
      override_if("--out", "gradcheck.out", grd_out);
    } else if (command == "report") {
      override_if("--runs", "report.runs", rpt_runs);
      override_if("--out", "report.out", rpt_out);
    }

    fgfa::set_max_threads(static_cast<int>(s.integer("threads")));
    return dispatch(command, s, argv_vec);
  } catch (const fgfa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fgfa::ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 3;
  } catch (const fgfa::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
