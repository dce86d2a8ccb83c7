#pragma once

#include <iosfwd>
#include <string>

#include "vilong/model.hpp"

namespace vilong {

// Weight snapshot format: magic "VILW", then little-endian u32 version and
// tensor count, then per tensor a u32 name length, the name bytes, a u32
// rank, u32 dims, and the f32 payload, all little-endian. Every named tensor
// of the model is written, empty ones with rank 0 and no payload.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

void write_weights(Model<float>& model, std::ostream& out);
void save_weights(Model<float>& model, const std::string& path);

// Loading requires the stream to carry exactly the tensors of the model,
// with matching shapes; anything else is an error naming the offender.
void read_weights(Model<float>& model, std::istream& in);
void load_weights(Model<float>& model, const std::string& path);

// Plain-text config: one key=value per line, '#' comments, model-level keys
// bare (pos_mode, head_mode, num_classes, in_channels) and stage keys
// prefixed stage<i>. (blocks, patch, kind, heads, dim, n_global, window,
// masking, shift_mode, linformer_k, sra_ratio, performer_features).
std::string config_to_text(const ModelConfig& config);
ModelConfig config_from_text(const std::string& text);
ModelConfig load_config_file(const std::string& path);

}  // namespace vilong
