#include "refseg/training.hpp"

#include "refseg/config.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>
#include <thread>
#include <unordered_map>

namespace refseg {

std::string_view name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view s) {
  if (s == "f32" || s == "float") return Precision::f32;
  if (s == "f64" || s == "double") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + std::string(s) + "' (expected f32 or f64)");
}

std::string_view name(InitScheme s) { return s == InitScheme::uniform ? "uniform" : "calibrated"; }

InitScheme parse_init_scheme(std::string_view s) {
  if (s == "uniform") return InitScheme::uniform;
  if (s == "calibrated") return InitScheme::calibrated;
  throw std::invalid_argument("unknown init scheme '" + std::string(s) + "' (expected uniform or calibrated)");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(base_lr > 0.0 && std::isfinite(base_lr), "base_lr must be positive");
  require(power > 0.0 && std::isfinite(power), "power must be positive");
  require(max_iters >= 0, "max_iters must be non-negative");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(adam.beta2 >= 0.0 && adam.beta2 < 1.0, "beta2 must lie in [0, 1)");
  require(adam.epsilon > 0.0, "epsilon must be positive");
  require(adam.weight_decay >= 0.0, "weight_decay must be non-negative");
  require(eval_every >= 0 && eval_limit >= 0 && checkpoint_every >= 0, "periods must be non-negative");
  require(threads >= 0, "threads must be non-negative");
  require(calibration_samples >= 1, "calibration_samples must be at least 1");
}

double poly_lr(int iter, const TrainConfig& config) {
  if (config.max_iters < 1) throw std::invalid_argument("poly_lr: max_iters must be at least 1");
  if (iter < 0 || iter > config.max_iters) {
    throw std::out_of_range("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                            std::to_string(config.max_iters) + "]");
  }
  const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(config.max_iters);
  return config.base_lr * std::pow(frac, config.power);
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<const Tensor<T>> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(Buffer<T>::Zero(p.size()));
    s.v.push_back(Buffer<T>::Zero(p.size()));
  }
  return s;
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, std::span<const std::string> names,
               AdamState<T>& state, double lr, const AdamHyper& hyper) {
  if (grads.size() != params.size() || names.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and name counts differ");
  }
  if (state.m.empty() && state.t == 0) state = AdamState<T>::zeros_like(std::span<const Tensor<T>>(params));
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state does not match the parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_step", 0,
                       "parameter " + names[i] + " has shape " + to_string(params[i].shape()) + " but gradient " +
                           to_string(grads[i].shape()));
    }
    if (!grads[i].values().isFinite().all()) {
      throw NonFiniteError("non-finite gradient for parameter " + names[i], names[i]);
    }
  }
  state.t += 1;
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(hyper.beta1, static_cast<double>(state.t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(hyper.beta2, static_cast<double>(state.t)));
  const T step = static_cast<T>(lr), eps = static_cast<T>(hyper.epsilon), decay = static_cast<T>(hyper.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Buffer<T>& p = params[i].values();
    const Buffer<T> g = grads[i].values() + decay * p;
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g.square();
    const Buffer<T> m_hat = state.m[i] / bc1;
    const Buffer<T> v_hat = state.v[i] / bc2;
    Buffer<T> updated = p - step * m_hat / (v_hat.sqrt() + eps);
    params[i] = Tensor<T>(params[i].shape(), std::move(updated));
  }
}

template <typename T>
std::vector<Tensor<T>> flatten(const ModelParams<T>& params) {
  std::vector<Tensor<T>> out;
  params.visit([&](const std::string&, const Tensor<T>& t) { out.push_back(t); });
  return out;
}

template <typename T>
void unflatten(ModelParams<T>& params, std::span<const Tensor<T>> values) {
  std::size_t i = 0;
  params.visit([&](const std::string& n, Tensor<T>& t) {
    if (i >= values.size()) throw std::invalid_argument("unflatten: too few tensors");
    if (values[i].shape() != t.shape()) {
      throw ShapeError("unflatten", 0, n + " expects " + to_string(t.shape()) + ", got " + to_string(values[i].shape()));
    }
    t = values[i++].detach();
  });
  if (i != values.size()) throw std::invalid_argument("unflatten: too many tensors");
}

template <typename T>
std::vector<Example<T>> prepare(const std::vector<Sample>& samples, const Vocabulary& vocab, int max_length,
                                std::ostream* warnings) {
  std::vector<Example<T>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Example<T> ex;
    ex.id = s.id;
    int unknown = 0;
    ex.tokens = vocab.encode(s.expression, max_length, &unknown);
    if (unknown > 0 && warnings) {
      *warnings << "warning: sample " << s.id << " has " << unknown << " out-of-vocabulary word(s)\n";
    }
    ex.image = s.image.cast<T>();
    ex.mask = s.mask;
    ex.target = s.mask.cast<T>().reshaped({1, s.mask.dim(0), s.mask.dim(1)});
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

template <typename T>
Buffer<T> flip_width(const Buffer<T>& v, Index width) {
  Buffer<T> out(v.size());
  for (Index row = 0; row < v.size() / width; ++row) out.segment(row * width, width) = v.segment(row * width, width).reverse();
  return out;
}

}  // namespace

template <typename T>
Example<T> mirror(const Example<T>& ex, const Vocabulary& vocab) {
  static const std::pair<const char*, const char*> swaps[] = {{"left", "right"}, {"leftmost", "rightmost"}};
  std::vector<int> ids = ex.tokens.ids;
  for (int& id : ids) {
    for (const auto& [a, b] : swaps) {
      const std::string& w = vocab.word(id);
      if (w == a) {
        id = vocab.id(b);
        break;
      }
      if (w == b) {
        id = vocab.id(a);
        break;
      }
    }
  }
  Example<T> out;
  out.id = ex.id;
  out.tokens = ex.tokens;
  out.tokens.ids = std::move(ids);
  const Index width = ex.mask.dim(1);
  out.image = Tensor<T>(ex.image.shape(), flip_width(ex.image.values(), width));
  out.target = Tensor<T>(ex.target.shape(), flip_width(ex.target.values(), width));
  out.mask = Tensor<float>(ex.mask.shape(), flip_width(ex.mask.values(), width));
  return out;
}

template <typename T>
SampleGrad<T> sample_gradient(const ModelParams<T>& params, const ModelDims& dims, const Example<T>& ex) {
  Tape<T> tape;
  const ModelParams<T> bound = watch_all(params, tape);
  Tensor<T> loss;
  {
    auto fwd = forward(bound, dims, ex.image, ex.tokens);
    loss = bce_loss(fwd.output.prob, ex.target);
  }
  tape.backward(loss);
  SampleGrad<T> out;
  out.loss = static_cast<double>(loss.item());
  bound.visit([&](const std::string&, const Tensor<T>& t) { out.grads.push_back(tape.grad(t)); });
  return out;
}

namespace {

// Runs f(i) for i in [0, n) over `threads` workers with a static split.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const ModelDims& dims, std::span<const Example<T>> examples,
                    int threads) {
  EvalResult r;
  r.ious.resize(examples.size());
  r.losses.resize(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto& ex = examples[i];
    auto fwd = forward(params, dims, ex.image, ex.tokens);
    r.losses[i] = static_cast<double>(bce_loss(fwd.output.prob, ex.target).item());
    r.ious[i] = iou(fwd.output.mask(), ex.mask);
  });
  std::vector<int> lengths;
  for (const auto& ex : examples) lengths.push_back(static_cast<int>(ex.tokens.length()));
  r.report = make_report(r.ious, lengths);
  r.mean_loss = std::accumulate(r.losses.begin(), r.losses.end(), 0.0) / static_cast<double>(r.losses.size());
  return r;
}

namespace {

template <typename T>
constexpr Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated checkpoint");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, std::uint32_t limit) {
  const std::uint32_t n = get_u32(is);
  if (n > limit) throw CheckpointError("corrupt checkpoint: string length " + std::to_string(n));
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw CheckpointError("truncated checkpoint");
  return s;
}

struct Header {
  std::uint32_t version = 0;
  Precision precision = Precision::f32;
};

Header read_header(std::istream& is) {
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic)) throw CheckpointError("truncated checkpoint header");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointError("not a checkpoint file");
  Header h;
  h.version = get_u32(is);
  if (h.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(h.version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t p = get_u32(is);
  if (p > 1) throw CheckpointError("corrupt checkpoint: unknown precision tag");
  h.precision = p == 0 ? Precision::f32 : Precision::f64;
  return h;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ckpt) {
  ConfigMap config = model_config(ckpt.dims);
  for (auto& [k, v] : train_config(ckpt.train)) config[k] = v;
  config["model.profile"] = ckpt.train.profile;
  config["state.iteration"] = std::to_string(ckpt.iteration);
  config["state.adam_t"] = std::to_string(ckpt.adam.t);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw CheckpointError("cannot write " + tmp);
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(os, kCheckpointVersion);
    put_u32(os, precision_of<T>() == Precision::f32 ? 0u : 1u);
    put_string(os, format_config(config));
    put_u32(os, static_cast<std::uint32_t>(ckpt.vocab.size()));
    for (const auto& w : ckpt.vocab.words()) put_string(os, w);

    const auto names = parameter_names(ckpt.params);
    const auto values = flatten(ckpt.params);
    const bool moments = !ckpt.adam.m.empty();
    put_u32(os, static_cast<std::uint32_t>(values.size() * (moments ? 3 : 1)));
    for (std::size_t i = 0; i < values.size(); ++i) {
      put_string(os, names[i]);
      write_tensor(os, values[i]);
    }
    if (moments) {
      for (std::size_t i = 0; i < values.size(); ++i) {
        put_string(os, "adam.m/" + names[i]);
        write_tensor(os, Tensor<T>(values[i].shape(), ckpt.adam.m[i]));
        put_string(os, "adam.v/" + names[i]);
        write_tensor(os, Tensor<T>(values[i].shape(), ckpt.adam.v[i]));
      }
    }
    if (!os) throw CheckpointError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Precision checkpoint_precision(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("missing checkpoint " + path.string());
  return read_header(is).precision;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("missing checkpoint " + path.string());
  try {
    const Header header = read_header(is);
    if (header.precision != precision_of<T>()) {
      throw CheckpointError("checkpoint holds " + std::string(name(header.precision)) +
                            " parameters but this session runs " + std::string(name(precision_of<T>())));
    }
    const ConfigMap config = parse_config(get_string(is, 1u << 20));
    Checkpoint<T> ckpt;
    ConfigMap model_keys, train_keys;
    for (const auto& [k, v] : config) {
      if (k.rfind("model.", 0) == 0) model_keys[k] = v;
      if (k.rfind("train.", 0) == 0) train_keys[k] = v;
    }
    ckpt.dims = model_from_config(model_keys);
    train_keys["model.profile"] = config.count("model.profile") ? config.at("model.profile") : "desk";
    ckpt.train = train_from_config(train_keys);
    ckpt.iteration = std::stoi(config.at("state.iteration"));
    const std::int64_t adam_t = std::stoll(config.at("state.adam_t"));

    const std::uint32_t vocab_count = get_u32(is);
    if (vocab_count == 0 || vocab_count > (1u << 24)) throw CheckpointError("corrupt checkpoint: vocabulary size");
    std::vector<std::string> words;
    for (std::uint32_t i = 0; i < vocab_count; ++i) words.push_back(get_string(is, 1u << 16));
    if (words.front() != kUnknownWord) throw CheckpointError("corrupt checkpoint: vocabulary lacks <unk> at id 0");
    ckpt.vocab = Vocabulary::from_words(std::vector<std::string>(words.begin() + 1, words.end()));
    if (ckpt.vocab.size() != ckpt.dims.vocab_size) {
      throw CheckpointError("checkpoint vocabulary size disagrees with its model config");
    }

    ckpt.params = ModelParams<T>::init(ckpt.dims, 0);
    const auto names = parameter_names(ckpt.params);
    std::vector<Tensor<T>> values = flatten(ckpt.params);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = i;
    std::vector<bool> seen(names.size(), false);
    ckpt.adam.t = adam_t;
    const std::uint32_t records = get_u32(is);
    const bool moments = records == names.size() * 3;
    if (records != names.size() && !moments) throw CheckpointError("checkpoint record count does not match the model");
    if (moments) ckpt.adam = AdamState<T>::zeros_like(std::span<const Tensor<T>>(values));
    ckpt.adam.t = adam_t;
    for (std::uint32_t r = 0; r < records; ++r) {
      const std::string record_name = get_string(is, 1u << 12);
      Tensor<T> t = read_tensor<T>(is);
      std::string base = record_name;
      int slot = 0;
      if (record_name.rfind("adam.m/", 0) == 0) {
        base = record_name.substr(7);
        slot = 1;
      } else if (record_name.rfind("adam.v/", 0) == 0) {
        base = record_name.substr(7);
        slot = 2;
      }
      auto it = index.find(base);
      if (it == index.end()) throw CheckpointError("checkpoint has unknown record '" + record_name + "'");
      if (t.shape() != values[it->second].shape()) {
        throw CheckpointError("record '" + record_name + "' has shape " + to_string(t.shape()) + ", expected " +
                              to_string(values[it->second].shape()));
      }
      if (slot == 0) {
        values[it->second] = t;
        seen[it->second] = true;
      } else if (!moments) {
        throw CheckpointError("unexpected optimizer record '" + record_name + "'");
      } else {
        (slot == 1 ? ckpt.adam.m : ckpt.adam.v)[it->second] = t.values();
      }
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!seen[i]) throw CheckpointError("checkpoint lacks parameter '" + names[i] + "'");
    }
    if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint records");
    unflatten(ckpt.params, std::span<const Tensor<T>>(values));
    return ckpt;
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": corrupt checkpoint (" + e.what() + ")");
  } catch (const std::out_of_range& e) {
    throw CheckpointError(path.string() + ": corrupt checkpoint (" + e.what() + ")");
  }
}

std::filesystem::path TrainPaths::at(int iteration) const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint-%06d.ckpt", iteration);
  return out / buf;
}

std::size_t batch_index(std::uint64_t seed, int iteration, int slot, int batch_size, std::size_t dataset_size) {
  if (dataset_size == 0) throw std::invalid_argument("batch_index: empty dataset");
  const std::uint64_t pos = static_cast<std::uint64_t>(iteration) * static_cast<std::uint64_t>(batch_size) +
                            static_cast<std::uint64_t>(slot);
  const std::uint64_t epoch = pos / dataset_size;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x0b47c4u};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = dataset_size - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  return order[pos % dataset_size];
}

int env_threads(int fallback) {
  if (const char* v = std::getenv("REFSEG_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end != v && *end == '\0' && n >= 1) return static_cast<int>(std::min<long>(n, 256));
  }
  return fallback;
}

template <typename T>
Checkpoint<T> train(Checkpoint<T> state, const std::vector<Sample>& train_set, const std::vector<Sample>& eval_set,
                    const TrainPaths& paths, std::ostream* progress) {
  const TrainConfig& cfg = state.train;
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (state.iteration < 0 || state.iteration > cfg.max_iters) {
    throw std::invalid_argument("train: start iteration outside [0, max_iters]");
  }
  std::filesystem::create_directories(paths.out);
  const int threads = cfg.threads > 0 ? cfg.threads : env_threads(1);
  const auto examples = prepare<T>(train_set, state.vocab, state.dims.max_length);
  std::vector<Sample> held = eval_set;
  if (cfg.eval_limit > 0 && held.size() > static_cast<std::size_t>(cfg.eval_limit)) held.resize(cfg.eval_limit);
  const auto eval_examples = prepare<T>(held, state.vocab, state.dims.max_length, progress);
  const auto names = parameter_names(state.params);

  auto write_checkpoint = [&](int iteration) {
    save_checkpoint(paths.at(iteration), state);
    save_checkpoint(paths.latest(), state);
  };

  std::ofstream log(paths.log(), state.iteration == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot write " + paths.log().string());
  if (state.iteration == 0) write_checkpoint(0);

  const auto started = std::chrono::steady_clock::now();
  double window_loss = 0.0;
  int window = 0;
  for (int it = state.iteration; it < cfg.max_iters; ++it) {
    const double lr = poly_lr(it, cfg);
    std::vector<SampleGrad<T>> parts(static_cast<std::size_t>(cfg.batch_size));
    parallel_for(parts.size(), threads, [&](std::size_t b) {
      const std::size_t pool = examples.size() * (cfg.mirror ? 2 : 1);
      const std::size_t idx = batch_index(cfg.seed, it, static_cast<int>(b), cfg.batch_size, pool);
      parts[b] = idx < examples.size()
                     ? sample_gradient(state.params, state.dims, examples[idx])
                     : sample_gradient(state.params, state.dims, mirror(examples[idx - examples.size()], state.vocab));
    });
    double loss = 0.0;
    std::vector<Buffer<T>> sums;
    for (auto& part : parts) {
      loss += part.loss;
      for (std::size_t i = 0; i < part.grads.size(); ++i) {
        if (sums.size() <= i) {
          sums.push_back(part.grads[i].values());
        } else {
          sums[i] += part.grads[i].values();
        }
      }
    }
    loss /= cfg.batch_size;
    const std::string last_good = paths.latest().string();
    if (!std::isfinite(loss)) {
      throw TrainingAborted("non-finite loss at iteration " + std::to_string(it) + "; last good checkpoint kept at " +
                                last_good,
                            it);
    }
    std::vector<Tensor<T>> grads;
    const T inv = T(1) / static_cast<T>(cfg.batch_size);
    for (std::size_t i = 0; i < sums.size(); ++i) grads.emplace_back(parts.front().grads[i].shape(), sums[i] * inv);
    std::vector<Tensor<T>> values = flatten(state.params);
    try {
      adam_step(std::span<Tensor<T>>(values), std::span<const Tensor<T>>(grads), std::span<const std::string>(names),
                state.adam, lr, cfg.adam);
    } catch (const NonFiniteError& e) {
      throw TrainingAborted(std::string(e.what()) + " at iteration " + std::to_string(it) +
                                "; last good checkpoint kept at " + last_good,
                            it);
    }
    unflatten(state.params, std::span<const Tensor<T>>(values));
    state.iteration = it + 1;

    nlohmann::ordered_json record{{"iter", it}, {"lr", lr}, {"loss", loss}};
    const bool last = state.iteration == cfg.max_iters;
    if (!eval_examples.empty() && (last || (cfg.eval_every > 0 && state.iteration % cfg.eval_every == 0))) {
      const EvalResult ev = evaluate(state.params, state.dims, std::span<const Example<T>>(eval_examples), threads);
      record["eval"] = {{"loss", ev.mean_loss},
                        {"mean_iou", ev.report.mean_iou},
                        {"prec@0.5", ev.report.precision[0]},
                        {"count", ev.report.count}};
      if (progress) {
        *progress << "eval @" << state.iteration << ": loss " << ev.mean_loss << " mean IoU " << ev.report.mean_iou
                  << " Prec@0.5 " << ev.report.precision[0] << "\n";
      }
    }
    log << record.dump() << '\n';
    log.flush();

    window_loss += loss;
    ++window;
    if (progress && (state.iteration % 100 == 0 || last)) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      *progress << "iter " << state.iteration << "/" << cfg.max_iters << "  lr " << lr << "  loss "
                << window_loss / window << "  (" << static_cast<int>(secs) << " s)\n";
      progress->flush();
      window_loss = 0.0;
      window = 0;
    }
    if (last || (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0)) {
      write_checkpoint(state.iteration);
    }
  }
  return state;
}

#define REFSEG_INSTANTIATE_TRAINING(T)                                                                          \
  template struct AdamState<T>;                                                                                 \
  template void adam_step(std::span<Tensor<T>>, std::span<const Tensor<T>>, std::span<const std::string>,        \
                          AdamState<T>&, double, const AdamHyper&);                                             \
  template std::vector<Tensor<T>> flatten(const ModelParams<T>&);                                               \
  template void unflatten(ModelParams<T>&, std::span<const Tensor<T>>);                                         \
  template std::vector<Example<T>> prepare(const std::vector<Sample>&, const Vocabulary&, int, std::ostream*);   \
  template Example<T> mirror(const Example<T>&, const Vocabulary&);                                             \
  template SampleGrad<T> sample_gradient(const ModelParams<T>&, const ModelDims&, const Example<T>&);           \
  template EvalResult evaluate(const ModelParams<T>&, const ModelDims&, std::span<const Example<T>>, int);      \
  template void save_checkpoint(const std::filesystem::path&, const Checkpoint<T>&);                            \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&);                                         \
  template Checkpoint<T> train(Checkpoint<T>, const std::vector<Sample>&, const std::vector<Sample>&,           \
                               const TrainPaths&, std::ostream*);

REFSEG_INSTANTIATE_TRAINING(float)
REFSEG_INSTANTIATE_TRAINING(double)

}  // namespace refseg
