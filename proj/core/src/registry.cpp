#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "vilong/model.hpp"

namespace vilong {

namespace {

struct StageTuple {
  std::size_t blocks, patch, heads, dim;
};

StageConfig vil_stage(const StageTuple& t) {
  StageConfig s;
  s.blocks = t.blocks;
  s.patch = t.patch;
  s.attention.kind = AttnKind::ViL;
  s.attention.heads = t.heads;
  s.attention.dim = t.dim;
  s.attention.n_global = 1;
  s.attention.window = 15;
  s.attention.masking = MaskingMode::SlidingChunkNoPad;
  s.attention.shift_mode = 0;
  return s;
}

ModelConfig vil_config(const std::vector<StageTuple>& tuples) {
  ModelConfig c;
  for (const StageTuple& t : tuples) c.stages.push_back(vil_stage(t));
  c.pos_mode = PosMode::RPB;
  c.head_mode = HeadMode::AvgPool;
  return c;
}

ModelConfig deit_config(std::size_t blocks, std::size_t heads, std::size_t dim) {
  ModelConfig c;
  StageConfig s;
  s.blocks = blocks;
  s.patch = 16;
  s.attention.kind = AttnKind::Full;
  s.attention.heads = heads;
  s.attention.dim = dim;
  s.attention.n_global = 1;
  c.stages.push_back(s);
  c.pos_mode = PosMode::APE;
  c.head_mode = HeadMode::CLS;
  return c;
}

struct RegistryEntry {
  const char* name;
  ModelConfig (*build)();
};

const RegistryEntry kRegistry[] = {
    {"ViL-Tiny",
     [] { return vil_config({{1, 4, 1, 48}, {1, 2, 3, 96}, {9, 2, 3, 192}, {1, 2, 6, 384}}); }},
    {"ViL-Small",
     [] { return vil_config({{1, 4, 3, 96}, {2, 2, 3, 192}, {8, 2, 6, 384}, {1, 2, 12, 768}}); }},
    {"ViL-Medium",
     [] { return vil_config({{1, 4, 3, 96}, {4, 2, 3, 192}, {16, 2, 6, 384}, {1, 2, 12, 768}}); }},
    {"ViL-Base",
     [] { return vil_config({{1, 4, 3, 96}, {8, 2, 3, 192}, {24, 2, 6, 384}, {1, 2, 12, 768}}); }},
    {"Small-3stage",
     [] { return vil_config({{2, 8, 3, 192}, {9, 2, 6, 384}, {1, 2, 12, 768}}); }},
    {"Tiny-1-10-1",
     [] { return vil_config({{1, 8, 3, 96}, {10, 2, 3, 192}, {1, 2, 6, 384}}); }},
    {"Tiny-2-9-1",
     [] { return vil_config({{2, 8, 3, 96}, {9, 2, 3, 192}, {1, 2, 6, 384}}); }},
    {"Tiny-1-9-2",
     [] { return vil_config({{1, 8, 3, 96}, {9, 2, 3, 192}, {2, 2, 6, 384}}); }},
    {"Tiny-2-8-2",
     [] { return vil_config({{2, 8, 3, 96}, {8, 2, 3, 192}, {2, 2, 6, 384}}); }},
    {"Tiny-1-1-9-1",
     [] { return vil_config({{1, 4, 1, 48}, {1, 2, 3, 96}, {9, 2, 3, 192}, {1, 2, 6, 384}}); }},
    {"Tiny-1-2-8-1",
     [] { return vil_config({{1, 4, 1, 48}, {2, 2, 3, 96}, {8, 2, 3, 192}, {1, 2, 6, 384}}); }},
    {"Small-1-10-1",
     [] { return vil_config({{1, 8, 3, 192}, {10, 2, 6, 384}, {1, 2, 12, 768}}); }},
    {"Small-2-9-1",
     [] { return vil_config({{2, 8, 3, 192}, {9, 2, 6, 384}, {1, 2, 12, 768}}); }},
    {"Small-1-9-2",
     [] { return vil_config({{1, 8, 3, 192}, {9, 2, 6, 384}, {2, 2, 12, 768}}); }},
    {"Small-2-8-2",
     [] { return vil_config({{2, 8, 3, 192}, {8, 2, 6, 384}, {2, 2, 12, 768}}); }},
    {"Small-1-1-9-1",
     [] { return vil_config({{1, 4, 3, 96}, {1, 2, 3, 192}, {9, 2, 6, 384}, {1, 2, 12, 768}}); }},
    {"Small-1-2-8-1",
     [] { return vil_config({{1, 4, 3, 96}, {2, 2, 3, 192}, {8, 2, 6, 384}, {1, 2, 12, 768}}); }},
    {"DeiT-Tiny/16", [] { return deit_config(12, 3, 192); }},
    {"DeiT-Small/16", [] { return deit_config(12, 6, 384); }},
};

}  // namespace

ModelConfig registry_lookup(const std::string& name) {
  for (const RegistryEntry& e : kRegistry) {
    if (name == e.name) return e.build();
  }
  std::string known;
  for (const RegistryEntry& e : kRegistry) {
    if (!known.empty()) known += ", ";
    known += e.name;
  }
  throw std::invalid_argument("registry_lookup: unknown config \"" + name +
                              "\"; known configs: " + known);
}

std::vector<std::string> registry_names() {
  std::vector<std::string> out;
  for (const RegistryEntry& e : kRegistry) out.emplace_back(e.name);
  return out;
}

}  // namespace vilong
