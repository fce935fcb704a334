#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cwss/capsule.hpp"
#include "cwss/checkpoint.hpp"
#include "cwss/dataset.hpp"
#include "cwss/decoder.hpp"
#include "cwss/grad_suite.hpp"
#include "cwss/parallel.hpp"
#include "cwss/png_io.hpp"
#include "cwss/saliency.hpp"
#include "cwss/seg_metrics.hpp"
#include "cwss/taxonomy.hpp"
#include "cwss/training.hpp"
#include "cwss/wsss.hpp"

namespace fs = std::filesystem;
using namespace cwss;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

// CWSS_LOG: 0/quiet, 1/info (default), 2/debug.
int log_level() {
  static int level = [] {
    const char* env = std::getenv("CWSS_LOG");
    if (!env) return 1;
    std::string v(env);
    if (v == "0" || v == "quiet") return 0;
    if (v == "2" || v == "debug") return 2;
    return 1;
  }();
  return level;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << "\n";
}

// Mirrors the epoch log into the on-disk file and, when verbose, stderr.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* primary, std::streambuf* echo) : primary_(primary), echo_(echo) {}

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return traits_type::not_eof(c);
    int r = primary_->sputc(static_cast<char>(c));
    if (echo_) echo_->sputc(static_cast<char>(c));
    return r;
  }
  int sync() override {
    int r = primary_->pubsync();
    if (echo_) echo_->pubsync();
    return r;
  }

 private:
  std::streambuf* primary_;
  std::streambuf* echo_;
};

struct ArchOpts {
  std::string base = "desk";
  int input_size = 0;
  std::vector<int> conv_channels;
  int primary_types = 0;
  int primary_dim = 0;
  int primary_kernel = 0;
  int primary_padding = -1;
  int digit_dim = 0;
  int routing_iters = 0;
  std::vector<int> decoder_channels;
};

void add_arch_options(CLI::App* cmd, ArchOpts& a) {
  cmd->add_option("--arch", a.base, "base architecture")
      ->check(CLI::IsMember({"desk", "full"}))
      ->capture_default_str();
  cmd->add_option("--input-size", a.input_size, "square input extent (0 = keep base)");
  cmd->add_option("--conv-channels", a.conv_channels, "channels of the three conv layers")
      ->expected(3);
  cmd->add_option("--primary-types", a.primary_types, "primary capsule type count");
  cmd->add_option("--primary-dim", a.primary_dim, "primary capsule dimension");
  cmd->add_option("--primary-kernel", a.primary_kernel, "primary conv kernel extent");
  cmd->add_option("--primary-padding", a.primary_padding, "primary conv padding");
  cmd->add_option("--digit-dim", a.digit_dim, "class capsule dimension");
  cmd->add_option("--routing-iters", a.routing_iters, "dynamic routing iterations");
  cmd->add_option("--decoder-channels", a.decoder_channels, "decoder stage channels")
      ->expected(4);
}

ArchitectureConfig make_arch(const ArchOpts& a) {
  ArchitectureConfig arch =
      a.base == "full" ? ArchitectureConfig::full() : ArchitectureConfig::desk();
  if (a.input_size > 0) {
    arch.input_size = a.input_size;
    if (a.input_size % 16 == 0) arch.decoder.grid = a.input_size / 16;
  }
  if (!a.conv_channels.empty())
    for (int l = 0; l < 3; ++l) arch.conv[static_cast<size_t>(l)].channels = a.conv_channels[static_cast<size_t>(l)];
  if (a.primary_types > 0) arch.primary.types = a.primary_types;
  if (a.primary_dim > 0) arch.primary.dim = a.primary_dim;
  if (a.primary_kernel > 0) arch.primary.kernel = a.primary_kernel;
  if (a.primary_padding >= 0) arch.primary.padding = a.primary_padding;
  if (a.digit_dim > 0) arch.digit.dim = a.digit_dim;
  if (a.routing_iters > 0) arch.routing_iterations = a.routing_iters;
  if (!a.decoder_channels.empty())
    for (int l = 0; l < 4; ++l) arch.decoder.channels[static_cast<size_t>(l)] = a.decoder_channels[static_cast<size_t>(l)];
  return arch;
}

CapsNetParams params_from_checkpoint(const Checkpoint& ckpt) {
  CapsNetParams params;
  params.arch = ckpt.arch;
  for (const auto& [name, t] : ckpt.blocks)
    if (name.rfind("adam.", 0) != 0) params.tensors.emplace(name, t);
  for (const auto& name : params.ordered_names())
    if (!params.tensors.count(name))
      throw DataError("checkpoint is missing parameter block: " + name);
  return params;
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

SegMask mask_from_tensor(const Tensor& t) {
  SegMask m;
  m.height = t.dim(0);
  m.width = t.dim(1);
  m.cls.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i)
    m.cls[i] = static_cast<int>(std::lround(t.data[i]));
  return m;
}

Tensor mask_to_raw(const SegMask& m) {
  Tensor t({m.height, m.width});
  for (size_t i = 0; i < m.cls.size(); ++i) t.data[i] = static_cast<float>(m.cls[i]);
  return t;
}

Tensor mask_to_color(const SegMask& m) {
  const auto& tax = LabelTaxonomy::instance();
  Tensor img({3, m.height, m.width});
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      auto rgb = tax.color_of(m.at(y, x));
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(rgb[static_cast<size_t>(c)]) / 255.0f;
    }
  return img;
}

std::string legend_text(Mode mode) {
  const auto& tax = LabelTaxonomy::instance();
  std::ostringstream out;
  out << "id\tcode\tcolor\n";
  auto line = [&](int id, const std::string& code) {
    auto c = tax.color_of(id);
    out << id << "\t" << code << "\t"
        << fmt("#%02X%02X%02X", c[0], c[1], c[2]) << "\n";
  };
  for (int id : tax.mode_classes(mode)) line(id, tax.cls(id).code);
  line(LabelTaxonomy::kBackground, "Background");
  if (mode == Mode::Functional) line(LabelTaxonomy::kOther, "Other");
  return out.str();
}

std::string scores_csv_header() {
  const auto& tax = LabelTaxonomy::instance();
  std::string h = "filename";
  for (const auto& c : tax.classes()) h += "," + c.code;
  return h + "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  SynthConfig cfg;
};

void cmd_synth(const SynthArgs& a) {
  a.cfg.validate();
  auto records = generate_synthetic(a.cfg);
  save_dataset(records, a.out_dir);
  info(fmt("synth: wrote %zu patches to %s", records.size(), a.out_dir.c_str()));
}

struct TrainArgs {
  std::string data_dir;
  std::string out_dir = ".";
  std::string checkpoint_path;  // default <out-dir>/model.ckpt
  std::string log_path;         // default <out-dir>/train.log
  ArchOpts arch;
  TrainConfig cfg;
};

void cmd_train(const TrainArgs& a) {
  TrainConfig cfg = a.cfg;
  if (cfg.threads <= 0) cfg.threads = default_threads();
  fs::create_directories(a.out_dir);
  std::string ckpt =
      a.checkpoint_path.empty() ? (fs::path(a.out_dir) / "model.ckpt").string() : a.checkpoint_path;
  std::string logp =
      a.log_path.empty() ? (fs::path(a.out_dir) / "train.log").string() : a.log_path;
  cfg.checkpoint_path = ckpt;

  ArchitectureConfig arch = make_arch(a.arch);
  CapsNetParams params = CapsNetParams::init(arch, cfg.seed);

  auto data = load_dataset((fs::path(a.data_dir) / "images").string(),
                           (fs::path(a.data_dir) / "labels.csv").string());
  info(fmt("train: %zu patches, %d epochs, batch %d, %d thread(s)", data.size(), cfg.epochs,
           cfg.batch_size, cfg.threads));

  std::ofstream log_file(logp, std::ios::binary);
  if (!log_file) throw IoError("cannot open training log: " + logp);
  TeeBuf tee(log_file.rdbuf(), log_level() >= 1 ? std::cerr.rdbuf() : nullptr);
  std::ostream log(&tee);

  train(data, params, cfg, &log);
  info(fmt("train: checkpoint %s, log %s", ckpt.c_str(), logp.c_str()));
}

struct ClassifyArgs {
  std::string checkpoint;
  std::string data_dir;
  std::vector<std::string> images;
  std::string out_dir = ".";
  std::string out_csv;  // default <out-dir>/scores.csv
  int threads = 1;
};

void cmd_classify(const ClassifyArgs& a) {
  if (a.data_dir.empty() == a.images.empty())
    throw ValueError("classify needs exactly one of --data or --images");
  CapsNetParams params = params_from_checkpoint(load_checkpoint(a.checkpoint));

  std::vector<std::string> names;
  std::vector<Tensor> imgs;
  if (!a.data_dir.empty()) {
    auto data = load_dataset((fs::path(a.data_dir) / "images").string(),
                             (fs::path(a.data_dir) / "labels.csv").string());
    for (auto& r : data) {
      names.push_back(r.name);
      imgs.push_back(std::move(r.image));
    }
  } else {
    for (const auto& p : a.images) {
      names.push_back(fs::path(p).stem().string());
      imgs.push_back(read_png_rgb(p));
    }
  }

  int threads = a.threads <= 0 ? default_threads() : a.threads;
  std::vector<Tensor> scores(imgs.size());
  parallel_for(0, static_cast<int>(imgs.size()), threads, [&](int i) {
    scores[static_cast<size_t>(i)] =
        std::get<0>(forward_classify(imgs[static_cast<size_t>(i)], params));
  });

  std::ostringstream csv;
  csv << scores_csv_header();
  for (size_t i = 0; i < names.size(); ++i) {
    csv << names[i];
    for (float s : scores[i].data) csv << fmt(",%.6f", s);
    csv << "\n";
  }
  fs::create_directories(a.out_dir);
  std::string out =
      a.out_csv.empty() ? (fs::path(a.out_dir) / "scores.csv").string() : a.out_csv;
  write_text_file(out, csv.str());
  info(fmt("classify: %zu patches -> %s", names.size(), out.c_str()));
}

struct SegmentArgs {
  std::string checkpoint;
  std::vector<std::string> images;
  std::string mode_str = "morph";
  std::string out_dir;
  float threshold = 0.5f;
  float sigma = 0.15f;
  int samples = 40;
  float blur_sigma = 2.0f;
  std::uint64_t seed = 42;
};

void cmd_segment(const SegmentArgs& a) {
  CapsNetParams params = params_from_checkpoint(load_checkpoint(a.checkpoint));
  SegmentOptions opts;
  opts.mode = parse_mode(a.mode_str);
  opts.threshold = a.threshold;
  opts.blur_sigma = a.blur_sigma;
  opts.smoothgrad.sigma = a.sigma;
  opts.smoothgrad.samples = a.samples;
  opts.smoothgrad.seed = a.seed;
  opts.smoothgrad.validate();

  fs::create_directories(a.out_dir);
  write_text_file(fs::path(a.out_dir) / ("legend_" + mode_name(opts.mode) + ".txt"),
                  legend_text(opts.mode));

  const auto& tax = LabelTaxonomy::instance();
  for (const auto& path : a.images) {
    Tensor img = read_png_rgb(path);
    SegmentResult res = segment_patch(img, params, opts);

    fs::path dir = fs::path(a.out_dir) / fs::path(path).stem();
    fs::create_directories(dir);
    write_png_rgb((dir / "mask.png").string(), mask_to_color(res.mask));
    write_png_gray_raw((dir / "ids.png").string(), mask_to_raw(res.mask));
    write_png_gray((dir / "background.png").string(), res.bg_mask);
    if (opts.mode == Mode::Functional)
      write_png_gray((dir / "other.png").string(), res.other);
    for (const auto& [id, map] : res.fused)
      write_png_gray((dir / (tax.cls(id).code + ".png")).string(), map);

    std::string detected;
    for (int j : res.detected) detected += (detected.empty() ? "" : " ") + tax.cls(j).code;
    info(fmt("segment: %s -> %s (detected: %s)", path.c_str(), dir.string().c_str(),
             detected.empty() ? "none" : detected.c_str()));
  }
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string pred_dir;
  std::string mode_str = "morph";
  std::string out_dir = ".";
  float threshold = 0.5f;
  float sigma = 0.15f;
  int samples = 40;
  float blur_sigma = 2.0f;
  std::uint64_t seed = 42;
  int threads = 1;
};

void cmd_eval(const EvalArgs& a) {
  Mode mode = parse_mode(a.mode_str);
  const auto& tax = LabelTaxonomy::instance();

  auto data = load_dataset((fs::path(a.data_dir) / "images").string(),
                           (fs::path(a.data_dir) / "labels.csv").string(),
                           (fs::path(a.data_dir) / "masks").string());
  for (const auto& r : data)
    if (!r.mask) throw DataError("eval requires a ground-truth mask for patch " + r.name);

  std::vector<SegPair> pairs(data.size());
  EvalSummary summary;

  if (!a.pred_dir.empty()) {
    for (size_t i = 0; i < data.size(); ++i) {
      Tensor pred = read_png_gray_raw((fs::path(a.pred_dir) / (data[i].name + ".png")).string());
      pairs[i] = SegPair{mask_from_tensor(pred), mask_from_tensor(*data[i].mask)};
    }
  } else {
    if (a.checkpoint.empty()) throw ValueError("eval needs --checkpoint or --pred-dir");
    CapsNetParams params = params_from_checkpoint(load_checkpoint(a.checkpoint));
    SegmentOptions opts;
    opts.mode = mode;
    opts.threshold = a.threshold;
    opts.blur_sigma = a.blur_sigma;
    opts.smoothgrad.sigma = a.sigma;
    opts.smoothgrad.samples = a.samples;
    opts.smoothgrad.seed = a.seed;
    opts.smoothgrad.validate();

    std::vector<Tensor> scores(data.size());
    int threads = a.threads <= 0 ? default_threads() : a.threads;
    parallel_for(0, static_cast<int>(data.size()), threads, [&](int idx) {
      size_t i = static_cast<size_t>(idx);
      SegmentResult res = segment_patch(data[i].image, params, opts);
      scores[i] = std::move(res.scores);
      pairs[i] = SegPair{std::move(res.mask), mask_from_tensor(*data[i].mask)};
    });

    // Restrict accuracy to classes the dataset actually uses; counting the
    // other always-negative classes would inflate it with vacuous TNs.
    std::vector<int> used;
    for (int c = 0; c < LabelTaxonomy::kNumClasses; ++c) {
      bool any = false;
      for (const auto& r : data) any = any || r.labels.at(c) > 0.5f;
      if (any) used.push_back(c);
    }
    std::vector<Tensor> targets;
    for (const auto& r : data) targets.push_back(r.labels);
    ClassificationMetrics cm =
        classification_metrics(scores, targets, a.threshold, used.empty() ? nullptr : &used);
    summary.accuracy = cm.accuracy();
  }

  std::vector<int> class_set = tax.mode_classes(mode);
  class_set.push_back(LabelTaxonomy::kBackground);
  if (mode == Mode::Functional) class_set.push_back(LabelTaxonomy::kOther);

  MiouResult result = miou(pairs, class_set);
  if (mode == Mode::Morphological)
    summary.miou_morph = result.miou;
  else
    summary.miou_func = result.miou;

  fs::create_directories(a.out_dir);
  fs::path csv_path = fs::path(a.out_dir) / ("metrics_" + mode_name(mode) + ".csv");
  write_text_file(csv_path, report_csv(result, mode));
  fs::path json_path = fs::path(a.out_dir) / "summary.json";
  write_text_file(json_path, summary_json(summary));

  std::cout << report_text(result, mode);
  if (summary.accuracy)
    std::cout << fmt("patch accuracy: %.2f%%\n", *summary.accuracy);
  info(fmt("eval: wrote %s and %s", csv_path.string().c_str(), json_path.string().c_str()));
}

int cmd_gradcheck(std::uint64_t seed) {
  auto start = std::chrono::steady_clock::now();
  auto reports = run_gradcheck_suite(seed);
  bool all_ok = true;
  for (const auto& r : reports) {
    std::cout << format_report_line(r) << "\n";
    all_ok = all_ok && r.passed;
  }
  double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  info(fmt("gradcheck: %zu checks in %.1fs", reports.size(), secs));
  if (!all_ok) throw NumericError("gradient check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capsule-network weakly supervised segmentation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value config file with a [section] per command");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic labeled dataset");
  s->add_option("--out-dir", synth.out_dir, "dataset directory")->required();
  s->add_option("--patches", synth.cfg.patches)->capture_default_str();
  s->add_option("--classes", synth.cfg.num_classes)->capture_default_str();
  s->add_option("--min-labels", synth.cfg.min_labels)->capture_default_str();
  s->add_option("--max-labels", synth.cfg.max_labels)->capture_default_str();
  s->add_option("--border", synth.cfg.border_fraction)->capture_default_str();
  s->add_option("--size", synth.cfg.size)->capture_default_str();
  s->add_option("--seed", synth.cfg.seed)->capture_default_str();
  s->add_option("--salt", synth.cfg.salt, "stream salt separating splits")->capture_default_str();
  s->add_option("--prefix", synth.cfg.prefix)->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a capsule network");
  t->add_option("--data", tr.data_dir, "dataset directory (images/, labels.csv)")->required();
  t->add_option("--out-dir", tr.out_dir)->capture_default_str();
  t->add_option("--checkpoint", tr.checkpoint_path, "checkpoint path override");
  t->add_option("--log", tr.log_path, "training log path override");
  t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  t->add_option("--batch", tr.cfg.batch_size)->capture_default_str();
  t->add_option("--lr", tr.cfg.learning_rate)->capture_default_str();
  t->add_option("--seed", tr.cfg.seed)->capture_default_str();
  t->add_option("--threads", tr.cfg.threads, "0 = all cores")->capture_default_str();
  t->add_flag("--deterministic,!--no-deterministic", tr.cfg.deterministic,
              "single-threaded reductions for bit-stable results")
      ->capture_default_str();
  t->add_option("--threshold", tr.cfg.threshold)->capture_default_str();
  t->add_option("--checkpoint-every", tr.cfg.checkpoint_every)->capture_default_str();
  add_arch_options(t, tr.arch);

  ClassifyArgs cl;
  auto* c = app.add_subcommand("classify", "score patches against the label set");
  c->add_option("--checkpoint", cl.checkpoint)->required();
  c->add_option("--data", cl.data_dir, "dataset directory");
  c->add_option("--images", cl.images, "individual patch PNGs");
  c->add_option("--out-dir", cl.out_dir)->capture_default_str();
  c->add_option("--out", cl.out_csv, "scores CSV path override");
  c->add_option("--threads", cl.threads, "0 = all cores")->capture_default_str();

  SegmentArgs sg;
  auto* g = app.add_subcommand("segment", "segment patches into tissue-type masks");
  g->add_option("--checkpoint", sg.checkpoint)->required();
  g->add_option("--images", sg.images, "patch PNGs")->required();
  g->add_option("--mode", sg.mode_str, "label mode")
      ->check(CLI::IsMember({"morph", "func"}))
      ->required();
  g->add_option("--out-dir", sg.out_dir)->required();
  g->add_option("--threshold", sg.threshold)->capture_default_str();
  g->add_option("--sigma", sg.sigma, "SmoothGrad noise level")->capture_default_str();
  g->add_option("--samples", sg.samples, "SmoothGrad sample count")->capture_default_str();
  g->add_option("--blur-sigma", sg.blur_sigma)->capture_default_str();
  g->add_option("--seed", sg.seed)->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score segmentation against ground-truth masks");
  e->add_option("--checkpoint", ev.checkpoint);
  e->add_option("--data", ev.data_dir, "dataset directory (needs masks/)")->required();
  e->add_option("--pred-dir", ev.pred_dir, "precomputed id-mask PNGs instead of a model");
  e->add_option("--mode", ev.mode_str, "label mode")
      ->check(CLI::IsMember({"morph", "func"}))
      ->required();
  e->add_option("--out-dir", ev.out_dir)->capture_default_str();
  e->add_option("--threshold", ev.threshold)->capture_default_str();
  e->add_option("--sigma", ev.sigma)->capture_default_str();
  e->add_option("--samples", ev.samples)->capture_default_str();
  e->add_option("--blur-sigma", ev.blur_sigma)->capture_default_str();
  e->add_option("--seed", ev.seed)->capture_default_str();
  e->add_option("--threads", ev.threads, "0 = all cores")->capture_default_str();

  std::uint64_t gc_seed = 42;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gc->add_option("--seed", gc_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
    if (*s) cmd_synth(synth);
    if (*t) cmd_train(tr);
    if (*c) cmd_classify(cl);
    if (*g) cmd_segment(sg);
    if (*e) cmd_eval(ev);
    if (*gc) cmd_gradcheck(gc_seed);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  } catch (const ValueError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const NumericError& err) {
    std::cerr << "numeric error: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& err) {
    std::cerr << "io error: " << err.what() << "\n";
    return kExitIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
