#pragma once

#include "nlens/dataset.hpp"

#include <filesystem>

namespace nlens {

// Neuron Dump Archive: a directory holding
//   manifest.json   {"magic": "NDA1", "model", "task", "kind", "num_items",
//                    "num_layers", "hidden_size", "labels", "seed"}
//   items.jsonl     {"text": ..., "label": <int>} per line, in item order
//   layer_<i>.f32   little-endian float32, row-major num_items x hidden_size
inline constexpr const char* kNdaMagic = "NDA1";

// Only datasets with the full L*H column layout can be written.
void save_dataset(const ActivationDataset& ds, const std::filesystem::path& dir);

ActivationDataset load_dataset(const std::filesystem::path& dir);

// Raw little-endian float32 helpers shared with the probe weight format.
void write_f32_le(std::ostream& out, const float* data, std::size_t count);
void read_f32_le(std::istream& in, float* data, std::size_t count);

}  // namespace nlens
