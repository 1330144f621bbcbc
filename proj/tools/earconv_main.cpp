// earconv command line: train, evaluate, predict, export feature maps,
// inspect the architecture, and generate the bundled synthetic corpus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "earconv/data.hpp"
#include "earconv/image_io.hpp"
#include "earconv/metrics.hpp"
#include "earconv/model.hpp"
#include "earconv/runtime.hpp"
#include "earconv/synthetic.hpp"
#include "earconv/train.hpp"

namespace fs = std::filesystem;
using namespace earconv;

namespace {

std::string with_commas(std::int64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  int count = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (count != 0 && count % 3 == 0 && *it != '-') {
      out += ',';
    }
    out += *it;
    ++count;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::string shape_string(const Shape& s) {
  std::string out = "(None";
  for (int e : s) {
    out += ", " + std::to_string(e);
  }
  out += ")";
  return out;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + "  " : s + std::string(width - s.size(), ' ');
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::string config_string(const std::vector<LayerSpec>& layers,
                          const LayerSpec& l) {
  std::ostringstream cfg;
  const char* padname = l.padding == Padding::kSame ? "same" : "valid";
  switch (l.kind) {
    case LayerKind::kConv:
    case LayerKind::kMaxPool:
      cfg << l.kernel << "x" << l.kernel << " s" << l.stride << " " << padname;
      break;
    case LayerKind::kDense:
      cfg << l.in_ch << " -> " << l.out_ch;
      break;
    case LayerKind::kDropout:
      cfg << "rate " << l.rate;
      break;
    default:
      break;
  }
  std::string out = cfg.str();
  if (!l.in.empty()) {
    if (!out.empty()) {
      out += " ";
    }
    out += "<- ";
    for (std::size_t i = 0; i < l.in.size(); ++i) {
      out += (i != 0 ? " + " : "") +
             layers[static_cast<std::size_t>(l.in[i])].id;
    }
  }
  return out;
}

void print_architecture(const ModelGraph<float>& model) {
  const auto shapes =
      infer_output_shapes(model.layers, model.input_h, model.input_w,
                          model.input_c);
  std::cout << pad("Layer (type)", 30) << pad("Output Shape", 24)
            << pad("Param #", 12) << "Config\n";
  std::cout << std::string(88, '-') << "\n";
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    std::cout << pad(l.display + " (" + l.id + ")", 30)
              << pad(shape_string(shapes[i]), 24)
              << pad(with_commas(l.param_count()), 12)
              << config_string(model.layers, l) << "\n";
  }
  std::cout << std::string(88, '-') << "\n";
  std::cout << "Total params: " << with_commas(model.total_params()) << "\n";
}

ModelGraph<float> build_by_arch(const std::string& arch, std::uint64_t seed) {
  if (arch == "earnet") {
    return build_earnet<float>(seed);
  }
  if (arch == "earnet-small") {
    return build_earnet_small<float>(seed);
  }
  throw ConfigError("unknown architecture '" + arch +
                    "'; expected earnet or earnet-small");
}

// Feature-map grid: first min(64, C) channels, 8 per row, each channel
// min-max normalized to [0, 255]; constant channels render mid-gray.
void write_feature_grid(const std::string& path, const Tensor& map) {
  if (map.rank() != 4 || map.extent(0) != 1) {
    throw ShapeError("feature map must have shape (1, h, w, c)");
  }
  const int h = map.extent(1);
  const int w = map.extent(2);
  const int c = map.extent(3);
  const int cells = std::min(64, c);
  const int cols = 8;
  const int rows = (cells + cols - 1) / cols;
  std::vector<std::uint8_t> grid(
      static_cast<std::size_t>(rows) * h * cols * w, 0);
  for (int cell = 0; cell < cells; ++cell) {
    float lo = map.at(0, 0, 0, cell);
    float hi = lo;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        lo = std::min(lo, map.at(0, y, x, cell));
        hi = std::max(hi, map.at(0, y, x, cell));
      }
    }
    const bool constant = !(hi > lo);
    const int gy = cell / cols;
    const int gx = cell % cols;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::uint8_t v = 128;
        if (!constant) {
          v = static_cast<std::uint8_t>(std::lround(
              255.0 * (map.at(0, y, x, cell) - lo) / (hi - lo)));
        }
        grid[(static_cast<std::size_t>(gy) * h + y) * cols * w +
             static_cast<std::size_t>(gx) * w + x] = v;
      }
    }
  }
  write_png_gray(path, rows * h, cols * w, grid);
}

int run(int argc, char** argv) {
  CLI::App app{"ear-image gender classifier: dual-pooling CNN toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: all cores)")
      ->envname("EARCONV_THREADS");

  // ---- train ----------------------------------------------------------
  auto* train = app.add_subcommand("train", "train a model from a manifest");
  std::string manifest_path, out_dir, arch = "earnet";
  TrainConfig cfg;
  bool subject_disjoint = false, no_augment = false, dry_run = false;
  double split_ratio = 0.7;
  train->add_option("--manifest", manifest_path, "dataset manifest CSV")
      ->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--arch", arch, "earnet | earnet-small");
  train->add_option("--epochs", cfg.epochs, "training epochs");
  train->add_option("--batch", cfg.batch_size, "mini-batch size");
  train->add_option("--lr", cfg.learning_rate, "Adam learning rate");
  train->add_option("--dropout", cfg.dropout_rate, "dropout rate");
  train->add_option("--seed", cfg.seed, "master seed")->envname("EARCONV_SEED");
  train->add_option("--split", split_ratio, "train fraction of the manifest");
  train->add_flag("--subject-disjoint", subject_disjoint,
                  "keep whole subjects on one side of the split");
  train->add_flag("--no-augment", no_augment, "disable flips and rotations");
  train->add_flag("--dry-run", dry_run, "validate config, print the banner, exit");
  auto apply_threads = [&threads] {
    if (threads > 0) {
      set_thread_count(threads);
    }
  };

  train->callback([&] {
    apply_threads();
    cfg.augment = !no_augment;
    cfg.validate();
    if (arch != "earnet" && arch != "earnet-small") {
      throw ConfigError("unknown architecture '" + arch + "'");
    }
    if (!(split_ratio > 0.0) || !(split_ratio < 1.0)) {
      throw ConfigError("--split must lie strictly between 0 and 1");
    }
    std::printf(
        "[train] arch=%s seed=%llu lr=%g epochs=%d batch=%d dropout=%g "
        "augment=%s split=%.2f subject_disjoint=%s\n",
        arch.c_str(), static_cast<unsigned long long>(cfg.seed),
        cfg.learning_rate, cfg.epochs, cfg.batch_size, cfg.dropout_rate,
        cfg.augment ? "on" : "off", split_ratio,
        subject_disjoint ? "on" : "off");
    if (dry_run) {
      return;
    }
    const auto records = load_manifest(manifest_path);
    const auto split =
        subject_disjoint
            ? split_dataset_subject_disjoint(records, split_ratio, cfg.seed)
            : split_dataset(records, split_ratio, cfg.seed);
    if (!split.stratified) {
      std::printf("[train] warning: single-class manifest, unstratified split\n");
    }
    auto model = build_by_arch(arch, cfg.seed);
    std::printf("[train] %zu train / %zu test images at %dx%d\n",
                split.train.size(), split.test.size(), model.input_h,
                model.input_w);
    const Dataset train_set = load_dataset(records, split.train, model.input_h);
    const Dataset test_set = load_dataset(records, split.test, model.input_h);
    const TrainLog log =
        train_loop(model, train_set, test_set, cfg, [](const TrainLogRow& row) {
          std::printf("[train] epoch %d loss=%.6f acc=%.4f test_acc=%.4f\n",
                      row.epoch, row.train_loss, row.train_acc, row.test_acc);
        });
    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    save_checkpoint(model, (out / "checkpoint.earconv").string());
    write_train_log_csv((out / "train_log.csv").string(), log);
    const EvalReport report = evaluate(model, test_set, cfg.batch_size);
    write_report_json((out / "eval_report.json").string(), report);
    std::cout << render_report_table(arch, report, model.total_params());
    std::printf("[train] wrote %s\n", (out / "checkpoint.earconv").c_str());
  });

  // ---- eval -----------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_manifest, eval_checkpoint, eval_json;
  int eval_batch = 32;
  eval->add_option("--manifest", eval_manifest, "dataset manifest CSV")
      ->required();
  eval->add_option("--checkpoint", eval_checkpoint, "model checkpoint")
      ->required();
  eval->add_option("--json", eval_json, "write the report JSON here");
  eval->add_option("--batch", eval_batch, "evaluation batch size");
  eval->callback([&] {
    apply_threads();
    const auto model = load_checkpoint(eval_checkpoint);
    const auto records = load_manifest(eval_manifest);
    const Dataset data = load_dataset(records, {}, model.input_h);
    const EvalReport report = evaluate(model, data, eval_batch);
    std::cout << render_report_table(model.arch, report, model.total_params());
    if (!eval_json.empty()) {
      write_report_json(eval_json, report);
      std::printf("[eval] wrote %s\n", eval_json.c_str());
    }
  });

  // ---- predict --------------------------------------------------------
  auto* predict = app.add_subcommand("predict", "classify a single image");
  std::string pred_image, pred_checkpoint;
  predict->add_option("--image", pred_image, "PNG or JPEG image")->required();
  predict->add_option("--checkpoint", pred_checkpoint, "model checkpoint")
      ->required();
  predict->callback([&] {
    apply_threads();
    const auto model = load_checkpoint(pred_checkpoint);
    const Tensor img = decode_and_resize(pred_image, model.input_h);
    Tensor batch(Shape{1, model.input_h, model.input_w, model.input_c});
    std::copy(img.data(), img.data() + img.numel(), batch.data());
    const auto cache = forward(model, batch, Mode::kEval);
    const float p0 = cache.probs().at(0, 0);
    const float p1 = cache.probs().at(0, 1);
    std::printf("female %.6f male %.6f -> %s\n", p0, p1,
                p1 >= p0 ? "male" : "female");
  });

  // ---- featuremaps ----------------------------------------------------
  auto* fmaps = app.add_subcommand(
      "featuremaps", "export convolution feature maps as PNG grids");
  std::string fm_image, fm_checkpoint, fm_out;
  std::vector<std::string> fm_layers;
  fmaps->add_option("--image", fm_image, "PNG or JPEG image")->required();
  fmaps->add_option("--checkpoint", fm_checkpoint, "model checkpoint")
      ->required();
  fmaps->add_option("--layers", fm_layers, "conv layer ids (e.g. Conv1,Conv7)")
      ->required()
      ->delimiter(',');
  fmaps->add_option("--out", fm_out, "output directory")->required();
  fmaps->callback([&] {
    apply_threads();
    const auto model = load_checkpoint(fm_checkpoint);
    const Tensor img = decode_and_resize(fm_image, model.input_h);
    Tensor batch(Shape{1, model.input_h, model.input_w, model.input_c});
    std::copy(img.data(), img.data() + img.numel(), batch.data());
    const auto maps = extract_feature_maps(model, batch, fm_layers);
    fs::create_directories(fm_out);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const std::string path =
          (fs::path(fm_out) / (fm_layers[i] + ".png")).string();
      write_feature_grid(path, maps[i]);
      std::printf("[featuremaps] wrote %s\n", path.c_str());
    }
  });

  // ---- inspect --------------------------------------------------------
  auto* inspect = app.add_subcommand(
      "inspect", "print the layer table with shapes and parameter counts");
  std::string ins_checkpoint, ins_arch = "earnet";
  inspect->add_option("--checkpoint", ins_checkpoint, "model checkpoint");
  inspect->add_option("--arch", ins_arch, "earnet | earnet-small");
  inspect->callback([&] {
    if (!ins_checkpoint.empty()) {
      print_architecture(load_checkpoint(ins_checkpoint));
    } else {
      print_architecture(build_by_arch(ins_arch, 0));
    }
  });

  // ---- synth ----------------------------------------------------------
  auto* synth = app.add_subcommand(
      "synth", "generate the bundled two-class synthetic corpus");
  std::string synth_out;
  int synth_count = 16, synth_size = 256;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "number of images");
  synth->add_option("--size", synth_size, "image side length");
  synth->add_option("--seed", synth_seed, "corpus seed")->envname("EARCONV_SEED");
  synth->callback([&] {
    const std::string manifest =
        write_synthetic_corpus(synth_out, synth_count, synth_size, synth_seed);
    std::printf("[synth] wrote %d images, manifest %s\n", synth_count,
                manifest.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const RangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const LookupError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DecodeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const LabelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const MetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
