#include "refseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace refseg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& value) {
  N out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid boolean '" + value + "' for " + key);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<Index> parse_list(const std::string& key, const std::string& value) {
  std::vector<Index> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<Index>(key, std::string(trim(item))));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

void apply(const ConfigMap& config, const std::string& prefix, const std::map<std::string, Setter>& setters,
           bool reject_unknown) {
  for (const auto& [key, value] : config) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string field = key.substr(prefix.size());
    auto it = setters.find(field);
    if (it == setters.end()) {
      if (reject_unknown) throw ConfigError("unknown config key '" + key + "'");
      continue;
    }
    it->second(key, value);
  }
}

}  // namespace

ConfigMap parse_config(std::string_view text) {
  ConfigMap out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ConfigMap& config) {
  std::string out;
  for (const auto& [key, value] : config) out += key + " = " + value + "\n";
  return out;
}

ConfigMap model_config(const ModelDims& d) {
  std::string stems;
  for (Index w : d.backbone.stem_widths) stems += (stems.empty() ? "" : ",") + std::to_string(w);
  return {
      {"model.vocab_size", std::to_string(d.vocab_size)},
      {"model.embed", std::to_string(d.embed)},
      {"model.lstm_hidden", std::to_string(d.lstm_hidden)},
      {"model.attention", std::to_string(d.attention)},
      {"model.visual", std::to_string(d.visual)},
      {"model.encoder_hidden", std::to_string(d.encoder_hidden)},
      {"model.decoder_hidden", std::to_string(d.decoder_hidden)},
      {"model.conv_kernel", std::to_string(d.conv_kernel)},
      {"model.attention_kernel", std::to_string(d.attention_kernel)},
      {"model.image_size", std::to_string(d.image_size)},
      {"model.max_length", std::to_string(d.max_length)},
      {"model.share_encoder_params", d.share_encoder_params ? "true" : "false"},
      {"model.stem_widths", stems},
      {"model.block_width", std::to_string(d.backbone.block_width)},
      {"model.blocks", std::to_string(d.backbone.blocks)},
  };
}

ModelDims model_from_config(const ConfigMap& config) {
  ModelDims d;
  try {
    auto it = config.find("model.profile");
    d = ModelDims::profile(it == config.end() ? "desk" : it->second);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto index = [](Index& slot) { return [&slot](const std::string& k, const std::string& v) { slot = parse_number<Index>(k, v); }; };
  auto integer = [](int& slot) { return [&slot](const std::string& k, const std::string& v) { slot = parse_number<int>(k, v); }; };
  const std::map<std::string, Setter> setters{
      {"profile", [](const std::string&, const std::string&) {}},
      {"vocab_size", integer(d.vocab_size)},
      {"embed", index(d.embed)},
      {"lstm_hidden", index(d.lstm_hidden)},
      {"attention", index(d.attention)},
      {"visual",
       [&](const std::string& k, const std::string& v) {
         d.visual = parse_number<Index>(k, v);
         d.backbone.visual_channels = d.visual;
       }},
      {"encoder_hidden", index(d.encoder_hidden)},
      {"decoder_hidden", index(d.decoder_hidden)},
      {"conv_kernel", integer(d.conv_kernel)},
      {"attention_kernel", integer(d.attention_kernel)},
      {"image_size", index(d.image_size)},
      {"max_length", integer(d.max_length)},
      {"share_encoder_params",
       [&](const std::string& k, const std::string& v) { d.share_encoder_params = parse_bool(k, v); }},
      {"stem_widths", [&](const std::string& k, const std::string& v) { d.backbone.stem_widths = parse_list(k, v); }},
      {"block_width", index(d.backbone.block_width)},
      {"blocks", integer(d.backbone.blocks)},
  };
  apply(config, "model.", setters, true);
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return d;
}

ConfigMap train_config(const TrainConfig& t) {
  return {
      {"train.base_lr", format_double(t.base_lr)},
      {"train.power", format_double(t.power)},
      {"train.max_iters", std::to_string(t.max_iters)},
      {"train.batch_size", std::to_string(t.batch_size)},
      {"train.seed", std::to_string(t.seed)},
      {"train.precision", std::string(name(t.precision))},
      {"train.beta1", format_double(t.adam.beta1)},
      {"train.beta2", format_double(t.adam.beta2)},
      {"train.epsilon", format_double(t.adam.epsilon)},
      {"train.weight_decay", format_double(t.adam.weight_decay)},
      {"train.eval_every", std::to_string(t.eval_every)},
      {"train.eval_limit", std::to_string(t.eval_limit)},
      {"train.checkpoint_every", std::to_string(t.checkpoint_every)},
      {"train.mirror", t.mirror ? "true" : "false"},
      {"train.init", std::string(name(t.init))},
      {"train.calibration_samples", std::to_string(t.calibration_samples)},
  };
}

TrainConfig train_from_config(const ConfigMap& config) {
  TrainConfig t;
  auto real = [](double& slot) { return [&slot](const std::string& k, const std::string& v) { slot = parse_number<double>(k, v); }; };
  auto integer = [](int& slot) { return [&slot](const std::string& k, const std::string& v) { slot = parse_number<int>(k, v); }; };
  const std::map<std::string, Setter> setters{
      {"base_lr", real(t.base_lr)},
      {"power", real(t.power)},
      {"max_iters", integer(t.max_iters)},
      {"batch_size", integer(t.batch_size)},
      {"seed", [&](const std::string& k, const std::string& v) { t.seed = parse_number<std::uint64_t>(k, v); }},
      {"precision",
       [&](const std::string& k, const std::string& v) {
         try {
           t.precision = parse_precision(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError("invalid value '" + v + "' for " + k + " (expected f32 or f64)");
         }
       }},
      {"beta1", real(t.adam.beta1)},
      {"beta2", real(t.adam.beta2)},
      {"epsilon", real(t.adam.epsilon)},
      {"weight_decay", real(t.adam.weight_decay)},
      {"eval_every", integer(t.eval_every)},
      {"eval_limit", integer(t.eval_limit)},
      {"checkpoint_every", integer(t.checkpoint_every)},
      {"threads", integer(t.threads)},
      {"init",
       [&](const std::string& k, const std::string& v) {
         try {
           t.init = parse_init_scheme(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError("invalid value '" + v + "' for " + k + " (expected uniform or calibrated)");
         }
       }},
      {"calibration_samples", integer(t.calibration_samples)},
      {"mirror", [&](const std::string& k, const std::string& v) { t.mirror = parse_bool(k, v); }},
  };
  apply(config, "train.", setters, true);
  if (auto it = config.find("model.profile"); it != config.end()) t.profile = it->second;
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return t;
}

RunConfig RunConfig::from(const ConfigMap& config) {
  for (const auto& [key, value] : config) {
    const bool known = key.rfind("model.", 0) == 0 || key.rfind("train.", 0) == 0 || key == "data" ||
                       key == "eval_data" || key == "out" || key == "resume";
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }
  RunConfig r;
  r.dims = model_from_config(config);
  r.train = train_from_config(config);
  if (auto it = config.find("data"); it != config.end()) r.data = it->second;
  if (auto it = config.find("eval_data"); it != config.end()) r.eval_data = it->second;
  if (auto it = config.find("out"); it != config.end()) r.out = it->second;
  if (auto it = config.find("resume"); it != config.end()) r.resume = parse_bool("resume", it->second);
  r.validate();
  return r;
}

ConfigMap RunConfig::to_map() const {
  ConfigMap m = model_config(dims);
  m.erase("model.vocab_size");
  m["model.profile"] = train.profile;
  for (auto& [k, v] : train_config(train)) m[k] = v;
  m["data"] = data.string();
  if (!eval_data.empty()) m["eval_data"] = eval_data.string();
  m["out"] = out.string();
  m["resume"] = resume ? "true" : "false";
  return m;
}

void RunConfig::validate() const {
  train.validate();
  try {
    dims.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  if (data.empty()) throw ConfigError("no training data directory given");
  if (out.empty()) throw ConfigError("no output directory given");
}

}  // namespace refseg
