#include "refseg/calibrate.hpp"
#include "refseg/config.hpp"
#include "refseg/io.hpp"
#include "refseg/metrics.hpp"
#include "refseg/model.hpp"
#include "refseg/scene.hpp"
#include "refseg/training.hpp"
#include "refseg/verify.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace refseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void require_empty_or_force(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw UsageError(dir.string() + " is not empty (pass --force to write into it)");
  }
}

// ---- gen ----------------------------------------------------------------

struct GenArgs {
  fs::path out;
  std::uint64_t seed = 1;
  int count = 2000;
  int canvas = 64;
  int first_id = 0;
  int min_shapes = 2;
  int max_shapes = 5;
  bool previews = false;
  bool force = false;
};

int cmd_gen(const GenArgs& a) {
  SceneConfig cfg;
  cfg.canvas = a.canvas;
  cfg.min_shapes = a.min_shapes;
  cfg.max_shapes = a.max_shapes;
  if (a.count < 0) throw UsageError("--count must be non-negative");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  require_empty_or_force(a.out, a.force);

  const auto samples = gen_samples(a.seed, a.count, cfg, a.first_id);
  write_dataset(a.out, samples, DatasetWriteOptions{a.previews});
  write_text(a.out / "gen.cfg", format_config({{"seed", std::to_string(a.seed)},
                                                 {"count", std::to_string(a.count)},
                                                 {"canvas", std::to_string(a.canvas)},
                                                 {"first_id", std::to_string(a.first_id)},
                                                 {"min_shapes", std::to_string(a.min_shapes)},
                                                 {"max_shapes", std::to_string(a.max_shapes)}}));

  std::array<int, kLengthBuckets.size()> buckets{};
  std::map<int, int> shapes;
  double area = 0.0;
  for (const auto& s : samples) {
    const int b = length_bucket(static_cast<int>(tokenize(s.expression).size()));
    if (b >= 0) buckets[static_cast<std::size_t>(b)]++;
    shapes[static_cast<int>(s.meta.objects.size())]++;
    area += s.mask.values().sum();
  }
  std::cout << "wrote " << samples.size() << " samples to " << a.out.string() << "\n";
  if (!samples.empty()) {
    std::cout << "mean target area: " << area / static_cast<double>(samples.size()) << " px\n";
    std::cout << "shapes per scene:";
    for (const auto& [n, c] : shapes) std::cout << "  " << n << ":" << c;
    std::cout << "\nexpression length:";
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      std::cout << "  " << kLengthBuckets[b].lo << "-" << kLengthBuckets[b].hi << ":" << buckets[b];
    }
    std::cout << "\n";
  }
  return kExitOk;
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
  fs::path data;
  fs::path eval_data;
  fs::path config;
  fs::path out;
  std::optional<int> max_iters, batch_size, eval_every, eval_limit, checkpoint_every, threads;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::string> precision, profile;
  bool resume = false;
  bool force = false;
};

template <typename T>
int run_training(const RunConfig& run, const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set) {
  TrainPaths paths{run.out};
  Checkpoint<T> start;
  if (run.resume) {
    start = load_checkpoint<T>(paths.latest());
    start.train.max_iters = run.train.max_iters;
    std::cout << "resuming from iteration " << start.iteration << "\n";
  } else {
    std::vector<std::string> corpus;
    for (const auto& s : train_set) corpus.push_back(s.expression);
    start.vocab = Vocabulary::build(corpus);
    start.dims = run.dims;
    start.dims.vocab_size = start.vocab.size();
    start.train = run.train;
    start.params = ModelParams<T>::init(start.dims, run.train.seed);
    if (run.train.init == InitScheme::calibrated) {
      const std::size_t n = std::min(train_set.size(), static_cast<std::size_t>(run.train.calibration_samples));
      const std::vector<Sample> head(train_set.begin(), train_set.begin() + static_cast<std::ptrdiff_t>(n));
      const auto examples = prepare<T>(head, start.vocab, start.dims.max_length);
      calibrate(start.params, start.dims, std::span<const Example<T>>(examples));
    }
  }
  try {
    const auto done = train(std::move(start), train_set, eval_set, paths, &std::cout);
    std::cout << "finished at iteration " << done.iteration << "; checkpoint " << paths.latest().string() << "\n";
  } catch (const TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_train(const TrainArgs& a) {
  ConfigMap cfg = a.config.empty() ? ConfigMap{} : read_config_file(a.config);
  auto set = [&](const char* key, const auto& value) {
    if (value) {
      std::ostringstream os;
      os << *value;
      cfg[key] = os.str();
    }
  };
  set("train.max_iters", a.max_iters);
  set("train.batch_size", a.batch_size);
  set("train.eval_every", a.eval_every);
  set("train.eval_limit", a.eval_limit);
  set("train.checkpoint_every", a.checkpoint_every);
  set("train.threads", a.threads);
  set("train.seed", a.seed);
  set("train.base_lr", a.lr);
  set("train.precision", a.precision);
  set("model.profile", a.profile);
  if (!a.data.empty()) cfg["data"] = a.data.string();
  if (!a.eval_data.empty()) cfg["eval_data"] = a.eval_data.string();
  if (!a.out.empty()) cfg["out"] = a.out.string();
  if (a.resume) cfg["resume"] = "true";

  RunConfig run;
  try {
    run = RunConfig::from(cfg);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (!run.resume) require_empty_or_force(run.out, a.force);

  const auto train_set = read_dataset(run.data, &std::cerr);
  if (train_set.empty()) throw UsageError("training set " + run.data.string() + " is empty");
  const auto eval_set = run.eval_data.empty() ? std::vector<Sample>{} : read_dataset(run.eval_data, &std::cerr);
  for (const auto* set_ptr : {&train_set, &eval_set}) {
    for (const auto& s : *set_ptr) {
      if (s.meta.canvas != run.dims.image_size) {
        throw UsageError("sample " + std::to_string(s.id) + " has canvas " + std::to_string(s.meta.canvas) +
                         " but the model expects " + std::to_string(run.dims.image_size));
      }
    }
  }

  fs::create_directories(run.out);
  write_text(run.out / "config.txt", format_config(run.to_map()));
  return run.train.precision == Precision::f32 ? run_training<float>(run, train_set, eval_set)
                                               : run_training<double>(run, train_set, eval_set);
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
  fs::path data;
  fs::path ckpt;
  fs::path json_out;
  bool dcrf = false;
};

template <typename T>
int run_eval(const EvalArgs& a, const std::vector<Sample>& samples) {
  const auto ckpt = load_checkpoint<T>(a.ckpt);
  for (const auto& s : samples) {
    if (s.meta.canvas != ckpt.dims.image_size) {
      throw UsageError("checkpoint expects " + std::to_string(ckpt.dims.image_size) + "px images but sample " +
                       std::to_string(s.id) + " is " + std::to_string(s.meta.canvas) + "px");
    }
  }
  const auto examples = prepare<T>(samples, ckpt.vocab, ckpt.dims.max_length, &std::cerr);
  const EvalResult r = evaluate(ckpt.params, ckpt.dims, std::span<const Example<T>>(examples), env_threads(1));
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(r.report.to_json());
  j["mean_loss"] = r.mean_loss;
  std::cout << j.dump() << "\n\n" << r.report.to_table() << "mean loss   " << r.mean_loss << "\n";
  if (!a.json_out.empty()) write_text(a.json_out, j.dump(2) + "\n");
  return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
  if (a.dcrf) std::cerr << "--dcrf: DCRF post-processing is not implemented; reporting thresholded masks\n";
  const auto samples = read_dataset(a.data, &std::cerr);
  if (samples.empty()) throw UsageError("dataset " + a.data.string() + " is empty");
  return checkpoint_precision(a.ckpt) == Precision::f32 ? run_eval<float>(a, samples) : run_eval<double>(a, samples);
}

// ---- infer --------------------------------------------------------------

struct InferArgs {
  fs::path image;
  std::string expr;
  fs::path ckpt;
  fs::path out = "infer_out";
  bool dump_attention = false;
};

// Channel mean of [C, H, W], min-max scaled to [0, 1].
Tensor<float> channel_mean_map(const Tensor<float>& x) {
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Buffer<float> m = Buffer<float>::Zero(h * w);
  for (Index ch = 0; ch < c; ++ch) m += x.values().segment(ch * h * w, h * w);
  m /= static_cast<float>(c);
  const float lo = m.minCoeff(), hi = m.maxCoeff();
  if (hi > lo) m = (m - lo) / (hi - lo);
  else m.setZero();
  return Tensor<float>({h, w}, std::move(m));
}

template <typename T>
int run_infer(const InferArgs& a) {
  const auto ckpt = load_checkpoint<T>(a.ckpt);
  const Tensor<float> image = a.image.extension() == ".ppm" ? read_ppm(a.image) : load_tensor<float>(a.image);
  const Index n = ckpt.dims.image_size;
  if (image.shape() != Shape{3, n, n}) {
    throw UsageError("image must be 3x" + std::to_string(n) + "x" + std::to_string(n) + " for this checkpoint, got " +
                     to_string(image.shape()));
  }
  int unknown = 0;
  TokenSequence tokens;
  try {
    tokens = ckpt.vocab.encode(a.expr, ckpt.dims.max_length, &unknown);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (unknown > 0) std::cerr << "warning: " << unknown << " word(s) not in the vocabulary, using <unk>\n";

  const auto fwd = forward(ckpt.params, ckpt.dims, image.cast<T>(), tokens, a.dump_attention);
  fs::create_directories(a.out);
  const Tensor<float> prob = fwd.output.prob.template cast<float>().reshaped({n, n});
  write_pgm(a.out / "prob.pgm", prob);
  write_pgm(a.out / "mask.pgm", fwd.output.mask());
  save_tensor(a.out / "prob.bin", prob);

  if (a.dump_attention) {
    const auto words = tokenize(a.expr);
    nlohmann::ordered_json att;
    att["tokens"] = words;
    std::vector<double> weights;
    for (Index i = 0; i < fwd.words.a.size(); ++i) weights.push_back(static_cast<double>(fwd.words.a[i]));
    att["weights"] = weights;
    write_text(a.out / "word_attention.json", att.dump(2) + "\n");
    for (std::size_t s = 0; s < fwd.spatial_gates.size(); ++s) {
      const auto& g = fwd.spatial_gates[s];
      write_pgm(a.out / ("spatial_attention_level" + std::to_string(s) + ".pgm"),
                g.template cast<float>().reshaped({g.dim(1), g.dim(2)}));
      const auto& steps = fwd.encoded[s].step_hidden;
      for (std::size_t l = 0; l < steps.size(); ++l) {
        write_pgm(a.out / ("encoder_level" + std::to_string(s) + "_word" + std::to_string(l) + ".pgm"),
                  channel_mean_map(steps[l].template cast<float>()));
      }
    }
    for (std::size_t s = 0; s < fwd.decoded.level_hidden.size(); ++s) {
      write_pgm(a.out / ("decoder_level" + std::to_string(s) + ".pgm"),
                channel_mean_map(fwd.decoded.level_hidden[s].template cast<float>()));
    }
  }
  const auto mask = fwd.output.mask();
  std::cout << "foreground pixels: " << mask.values().sum() << " of " << mask.size() << "\n"
            << "outputs written to " << a.out.string() << "\n";
  return kExitOk;
}

int cmd_infer(const InferArgs& a) {
  if (tokenize(a.expr).empty()) throw UsageError("--expr must contain at least one word");
  return checkpoint_precision(a.ckpt) == Precision::f32 ? run_infer<float>(a) : run_infer<double>(a);
}

// ---- verify -------------------------------------------------------------

int cmd_verify(const std::string& suite, const VerifyOptions& options) {
  const std::vector<std::string> suites =
      suite == "all" ? std::vector<std::string>{"grad", "invariants", "oracle"} : std::vector<std::string>{suite};
  bool ok = true;
  for (const auto& name : suites) {
    const SuiteReport report = run_suite(name, options);
    std::cout << report.to_text();
    ok &= report.passed();
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Referring image segmentation with dual convolutional LSTMs"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic referring-segmentation dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed");
  gen_cmd->add_option("--count", gen.count, "Number of samples");
  gen_cmd->add_option("--canvas", gen.canvas, "Image side in pixels");
  gen_cmd->add_option("--first-id", gen.first_id, "Id of the first sample");
  gen_cmd->add_option("--min-shapes", gen.min_shapes, "Fewest shapes per scene");
  gen_cmd->add_option("--max-shapes", gen.max_shapes, "Most shapes per scene");
  gen_cmd->add_flag("--previews", gen.previews, "Also write PPM/PGM previews");
  gen_cmd->add_flag("--force", gen.force, "Write into a non-empty directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", tr.data, "Training dataset directory");
  train_cmd->add_option("--eval-data", tr.eval_data, "Held-out dataset for periodic evaluation");
  train_cmd->add_option("--config", tr.config, "Config file (key = value)");
  train_cmd->add_option("--out", tr.out, "Output directory");
  train_cmd->add_option("--max-iters", tr.max_iters, "Optimizer steps");
  train_cmd->add_option("--batch-size", tr.batch_size, "Samples averaged per step");
  train_cmd->add_option("--seed", tr.seed, "Initialization and sampling seed");
  train_cmd->add_option("--lr", tr.lr, "Base learning rate");
  train_cmd->add_option("--precision", tr.precision, "f32 or f64");
  train_cmd->add_option("--profile", tr.profile, "Model dimension profile: desk, paper or toy");
  train_cmd->add_option("--eval-every", tr.eval_every, "Evaluation period in iterations");
  train_cmd->add_option("--eval-limit", tr.eval_limit, "Held-out samples per evaluation (0 = all)");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint period in iterations");
  train_cmd->add_option("--threads", tr.threads, "Worker threads (default: REFSEG_THREADS or 1)");
  train_cmd->add_flag("--resume", tr.resume, "Continue from <out>/latest.ckpt");
  train_cmd->add_flag("--force", tr.force, "Write into a non-empty directory");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--json", ev.json_out, "Also write the report to this file");
  eval_cmd->add_flag("--dcrf", ev.dcrf, "DCRF post-processing (not implemented)");

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Segment one image for one expression");
  infer_cmd->add_option("--image", inf.image, "Image (.ppm or tensor file)")->required();
  infer_cmd->add_option("--expr", inf.expr, "Referring expression")->required();
  infer_cmd->add_option("--ckpt", inf.ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--out", inf.out, "Output directory");
  infer_cmd->add_flag("--dump-attention", inf.dump_attention, "Write word and spatial attention dumps");

  std::string suite = "all";
  VerifyOptions vopts;
  auto* verify_cmd = app.add_subcommand("verify", "Run verification suites");
  verify_cmd->add_option("--suite", suite, "grad, invariants, oracle or all")
      ->check(CLI::IsMember({"grad", "invariants", "oracle", "all"}));
  verify_cmd->add_option("--seed", vopts.seed, "Base seed");
  verify_cmd->add_option("--seeds", vopts.seeds, "Random trials per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(gen);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (infer_cmd->parsed()) return cmd_infer(inf);
    if (verify_cmd->parsed()) return cmd_verify(suite, vopts);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
