#include "msnc/training.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace msnc {

namespace {

std::vector<int64_t> parse_int_list(const std::string& s) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

std::string int_list_to_string(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("config: bad boolean '" + v + "'");
}

ShiftPreset parse_preset(const std::string& v) {
  if (v == "peaked") return ShiftPreset::kPeaked;
  if (v == "uniform") return ShiftPreset::kUniform;
  if (v == "point") return ShiftPreset::kPointMass;
  throw FormatError("config: unknown shift preset '" + v + "'");
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  bool versioned = false;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (!blank) throw FormatError("config: line " + std::to_string(lineno) + " is not key = value");
      continue;
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw FormatError("config: empty key or value at line " + std::to_string(lineno));

    if (key == "msnc_config_version") {
      if (value != "1") throw FormatError("config: unsupported version " + value);
      versioned = true;
    } else if (key == "lambda") {
      cfg.lambda = std::stod(value);
    } else if (key == "epochs") {
      cfg.epochs = std::stoll(value);
    } else if (key == "batch_size") {
      cfg.batch_size = std::stoll(value);
    } else if (key == "patch") {
      cfg.patch = std::stoll(value);
    } else if (key == "lr_init") {
      cfg.lr_init = std::stod(value);
    } else if (key == "lr_final") {
      cfg.lr_final = std::stod(value);
    } else if (key == "seed") {
      cfg.seed = std::stoull(value);
    } else if (key == "steps_override") {
      cfg.steps_override = std::stoll(value);
    } else if (key == "eval_images") {
      cfg.eval_images = std::stoll(value);
    } else if (key == "split_cut") {
      cfg.split_cut = std::stod(value);
    } else if (key == "swin_baseline") {
      cfg.swin_baseline = parse_bool(value);
    } else if (key == "uniform_shift") {
      cfg.uniform_shift = parse_bool(value);
    } else if (key == "model.stage_dims") {
      cfg.model.stage_dims = parse_int_list(value);
    } else if (key == "model.window") {
      cfg.model.window = std::stoll(value);
    } else if (key == "model.topk") {
      cfg.model.topk = std::stoll(value);
    } else if (key == "model.head_width") {
      cfg.model.head_width = std::stoll(value);
    } else if (key == "model.latent_channels") {
      cfg.model.latent_channels = std::stoll(value);
    } else if (key == "model.hyper_channels") {
      cfg.model.hyper_channels = std::stoll(value);
    } else if (key == "model.mlp_ratio") {
      cfg.model.mlp_ratio = std::stoll(value);
    } else if (key == "model.aggregated_blocks") {
      cfg.model.aggregated_blocks = std::stoll(value);
    } else if (key == "model.shift_pairs") {
      cfg.model.shift_pairs = std::stoll(value);
    } else if (key == "model.spectral_channels") {
      cfg.model.spectral_channels = std::stoll(value);
    } else if (key == "model.shift_preset") {
      cfg.model.shift_preset = parse_preset(value);
    } else if (key == "model.groups") {
      cfg.model.groups = parse_int_list(value);
    } else if (key == "data.dir") {
      cfg.data.dir = value;
    } else if (key == "data.synth_n") {
      cfg.data.synth_n = std::stoll(value);
    } else if (key == "data.synth_size") {
      cfg.data.synth_size = std::stoll(value);
    } else if (key == "data.synth_channels") {
      cfg.data.synth_channels = std::stoll(value);
    } else if (key == "data.synth_seed") {
      cfg.data.synth_seed = std::stoull(value);
    } else {
      throw FormatError("config: unknown key '" + key + "'");
    }
  }
  if (!versioned) throw FormatError("config: missing msnc_config_version");
  return cfg;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("config: cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str());
}

std::string train_config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "msnc_config_version = 1\n";
  os << "lambda = " << cfg.lambda << "\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "patch = " << cfg.patch << "\n";
  os << "lr_init = " << cfg.lr_init << "\n";
  os << "lr_final = " << cfg.lr_final << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "steps_override = " << cfg.steps_override << "\n";
  os << "eval_images = " << cfg.eval_images << "\n";
  os << "split_cut = " << cfg.split_cut << "\n";
  os << "swin_baseline = " << (cfg.swin_baseline ? "true" : "false") << "\n";
  os << "uniform_shift = " << (cfg.uniform_shift ? "true" : "false") << "\n";
  os << "model.stage_dims = " << int_list_to_string(cfg.model.stage_dims) << "\n";
  os << "model.window = " << cfg.model.window << "\n";
  os << "model.topk = " << cfg.model.topk << "\n";
  os << "model.head_width = " << cfg.model.head_width << "\n";
  os << "model.latent_channels = " << cfg.model.latent_channels << "\n";
  os << "model.hyper_channels = " << cfg.model.hyper_channels << "\n";
  os << "model.mlp_ratio = " << cfg.model.mlp_ratio << "\n";
  os << "model.aggregated_blocks = " << cfg.model.aggregated_blocks << "\n";
  os << "model.shift_pairs = " << cfg.model.shift_pairs << "\n";
  os << "model.spectral_channels = " << cfg.model.spectral_channels << "\n";
  os << "model.shift_preset = " << shift_preset_name(cfg.model.shift_preset) << "\n";
  if (!cfg.model.groups.empty())
    os << "model.groups = " << int_list_to_string(cfg.model.groups) << "\n";
  if (!cfg.data.dir.empty()) os << "data.dir = " << cfg.data.dir << "\n";
  os << "data.synth_n = " << cfg.data.synth_n << "\n";
  os << "data.synth_size = " << cfg.data.synth_size << "\n";
  os << "data.synth_channels = " << cfg.data.synth_channels << "\n";
  os << "data.synth_seed = " << cfg.data.synth_seed << "\n";
  return os.str();
}

void TrainLog::write_steps_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw FormatError("trainlog: cannot open for write: " + path);
  f << "step,loss,bpp,mse,lr,wall_ms\n";
  for (const auto& s : steps) {
    f << s.step << ',' << s.loss << ',' << s.bpp << ',' << s.mse << ',' << s.lr << ','
      << s.wall_ms << "\n";
  }
}

std::vector<MultiSpectralImage> load_corpus(const DataConfig& data) {
  if (data.dir.empty())
    return synth_generate(data.synth_seed, data.synth_n, data.synth_size, data.synth_size,
                          data.synth_channels);
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(data.dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".msim")
      paths.push_back(entry.path().string());
  }
  if (paths.empty()) throw FormatError("corpus: no .msim files in " + data.dir);
  std::sort(paths.begin(), paths.end());
  std::vector<MultiSpectralImage> out;
  out.reserve(paths.size());
  for (size_t i = 0; i < paths.size(); ++i) {
    out.push_back(read_msi(paths[i]));
    out.back().sample_index = static_cast<int64_t>(i);
  }
  return out;
}

}  // namespace msnc
