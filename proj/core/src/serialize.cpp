#include "vilong/serialize.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vilong {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error(std::string("weight stream: truncated while reading ") + what);
  }
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_u32(in, what));
}

}  // namespace

void write_weights(Model<float>& model, std::ostream& out) {
  auto tensors = named_tensors(model);
  out.write("VILW", 4);
  put_u32(out, kWeightFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (auto& [name, tensor] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(tensor->rank()));
    for (std::size_t i = 0; i < tensor->rank(); ++i)
      put_u32(out, static_cast<std::uint32_t>(tensor->dim(i)));
    for (std::size_t i = 0; i < tensor->size(); ++i) put_f32(out, (*tensor)[i]);
  }
  if (!out) throw std::runtime_error("weight stream: write failed");
}

void save_weights(Model<float>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_weights(model, out);
}

void read_weights(Model<float>& model, std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "VILW") {
    throw std::runtime_error("weight stream: bad magic, expected VILW");
  }
  const std::uint32_t version = get_u32(in, "version");
  if (version != kWeightFormatVersion) {
    throw std::runtime_error("weight stream: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in, "tensor count");
  auto tensors = named_tensors(model);
  std::map<std::string, Tensor<float>*> by_name;
  for (auto& [name, tensor] : tensors) by_name[name] = tensor;
  if (count != tensors.size()) {
    throw std::runtime_error("weight stream: holds " + std::to_string(count) +
                             " tensors, the model has " + std::to_string(tensors.size()));
  }
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = get_u32(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw std::runtime_error("weight stream: truncated while reading a tensor name");
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw std::runtime_error("weight stream: tensor \"" + name + "\" is not in the model");
    }
    Tensor<float>& dst = *it->second;
    const std::uint32_t rank = get_u32(in, "rank");
    std::vector<std::size_t> dims(rank);
    for (std::uint32_t i = 0; i < rank; ++i) dims[i] = get_u32(in, "dim");
    if (rank != dst.rank()) {
      throw std::runtime_error("weight stream: tensor \"" + name + "\" has rank " +
                               std::to_string(rank) + ", the model expects " +
                               std::to_string(dst.rank()));
    }
    for (std::uint32_t i = 0; i < rank; ++i) {
      if (dims[i] != dst.dim(i)) {
        throw std::runtime_error("weight stream: tensor \"" + name + "\" dim " +
                                 std::to_string(i) + " is " + std::to_string(dims[i]) +
                                 ", the model expects " + std::to_string(dst.dim(i)));
      }
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_f32(in, name.c_str());
    by_name.erase(it);
  }
}

void load_weights(Model<float>& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path + " for reading");
  read_weights(model, in);
}

std::string config_to_text(const ModelConfig& config) {
  std::string out;
  out += "pos_mode=" + to_string(config.pos_mode) + "\n";
  out += "head_mode=" + to_string(config.head_mode) + "\n";
  out += "num_classes=" + std::to_string(config.num_classes) + "\n";
  out += "in_channels=" + std::to_string(config.in_channels) + "\n";
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const StageConfig& s = config.stages[i];
    const AttentionSpec& a = s.attention;
    const std::string p = "stage" + std::to_string(i) + ".";
    out += p + "blocks=" + std::to_string(s.blocks) + "\n";
    out += p + "patch=" + std::to_string(s.patch) + "\n";
    out += p + "kind=" + to_string(a.kind) + "\n";
    out += p + "heads=" + std::to_string(a.heads) + "\n";
    out += p + "dim=" + std::to_string(a.dim) + "\n";
    out += p + "n_global=" + std::to_string(a.n_global) + "\n";
    out += p + "window=" + std::to_string(a.window) + "\n";
    out += p + "masking=" + to_string(a.masking) + "\n";
    out += p + "shift_mode=" + std::to_string(a.shift_mode) + "\n";
    out += p + "linformer_k=" + std::to_string(a.linformer_k) + "\n";
    out += p + "sra_ratio=" + std::to_string(a.sra_ratio) + "\n";
    out += p + "performer_features=" + std::to_string(a.performer_features) + "\n";
  }
  return out;
}

namespace {

std::size_t parse_size(const std::string& value, const std::string& key) {
  try {
    const long long v = std::stoll(value);
    if (v < 0) throw std::invalid_argument("negative");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::runtime_error("config: key " + key + " has a bad integer value \"" + value +
                             "\"");
  }
}

}  // namespace

ModelConfig config_from_text(const std::string& text) {
  ModelConfig config;
  std::map<std::size_t, StageConfig> stages;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const std::size_t last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key=value, got \"" + line + "\"");
    }
    const auto trim = [](std::string s) {
      const std::size_t a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      return s.substr(a, s.find_last_not_of(" \t") - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "pos_mode") {
      if (!pos_mode_from_string(value, config.pos_mode)) {
        throw std::runtime_error("config: unknown pos_mode \"" + value + "\"");
      }
    } else if (key == "head_mode") {
      if (!head_mode_from_string(value, config.head_mode)) {
        throw std::runtime_error("config: unknown head_mode \"" + value + "\"");
      }
    } else if (key == "num_classes") {
      config.num_classes = parse_size(value, key);
    } else if (key == "in_channels") {
      config.in_channels = parse_size(value, key);
    } else if (key.rfind("stage", 0) == 0) {
      const std::size_t dot = key.find('.');
      if (dot == std::string::npos || dot == 5) {
        throw std::runtime_error("config: bad stage key \"" + key + "\"");
      }
      const std::size_t idx = parse_size(key.substr(5, dot - 5), key);
      const std::string field = key.substr(dot + 1);
      StageConfig& s = stages[idx];
      AttentionSpec& a = s.attention;
      if (field == "blocks") s.blocks = parse_size(value, key);
      else if (field == "patch") s.patch = parse_size(value, key);
      else if (field == "kind") {
        if (!attn_kind_from_string(value, a.kind)) {
          throw std::runtime_error("config: unknown attention kind \"" + value + "\"");
        }
      } else if (field == "heads") a.heads = parse_size(value, key);
      else if (field == "dim") a.dim = parse_size(value, key);
      else if (field == "n_global") a.n_global = parse_size(value, key);
      else if (field == "window") a.window = parse_size(value, key);
      else if (field == "masking") {
        if (!masking_mode_from_string(value, a.masking)) {
          throw std::runtime_error("config: unknown masking mode \"" + value + "\"");
        }
      } else if (field == "shift_mode") a.shift_mode = static_cast<int>(std::stol(value));
      else if (field == "linformer_k") a.linformer_k = parse_size(value, key);
      else if (field == "sra_ratio") a.sra_ratio = parse_size(value, key);
      else if (field == "performer_features") a.performer_features = parse_size(value, key);
      else throw std::runtime_error("config: unknown stage field \"" + field + "\"");
    } else {
      throw std::runtime_error("config: unknown key \"" + key + "\"");
    }
  }
  if (stages.empty()) throw std::runtime_error("config: no stages defined");
  std::size_t expect = 0;
  for (const auto& [idx, s] : stages) {
    if (idx != expect) {
      throw std::runtime_error("config: stage indices must be contiguous from 0, missing stage" +
                               std::to_string(expect));
    }
    ++expect;
    config.stages.push_back(s);
  }
  validate_config(config);
  return config;
}

ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path + " for reading");
  std::ostringstream text;
  text << in.rdbuf();
  return config_from_text(text.str());
}

}  // namespace vilong
