#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lpe/dataset.hpp"
#include "lpe/ensembler.hpp"
#include "lpe/nn.hpp"

// LPE1 container:
//   bytes 0..3   magic "LPE1"
//   bytes 4..7   header length H, uint32 little-endian
//   bytes 8..    H bytes of UTF-8 JSON: {"kind", "spec", "tensors": [{name, dtype, shape, offset, length}], ...}
//   payload      raw little-endian tensor data; offsets and lengths are in bytes from the payload start
// dtype is "f32" (IEEE-754 binary32) or "i8" (two's complement byte).
namespace lpe {

inline constexpr char kMagic[4] = {'L', 'P', 'E', '1'};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// A member file holds only the member's own layers: "layer_i/W.codes" (i8) with
// "layer_i/W.scales" (f32) for quantized layers, "layer_i/W" (f32) for perturbed ones and
// "layer_i/W.keep" (i8) for dropout masks.
void save_member(const std::filesystem::path& path, const ModelSpec& spec, const Member& member);
Member load_member(const std::filesystem::path& path, const ModelSpec& spec);

// Writes shared.lpe1 (the base checkpoint), member_NNN.lpe1 and manifest.json into dir.
// Returns the paths written, manifest last.
std::vector<std::filesystem::path> save_member_set(const std::filesystem::path& dir, const MemberSet& ms);
MemberSet load_member_set(const std::filesystem::path& manifest);

// "checkpoint", "member" or "" when the file is not an LPE1 container.
std::string file_kind(const std::filesystem::path& path);

// A full model from either a checkpoint file or a member file; a member is completed with the
// shared.lpe1 that sits next to it.
Checkpoint load_model(const std::filesystem::path& path);

// CSV with header f0,...,f{d-1},label. num_classes defaults to max label + 1.
Dataset load_dataset_csv(const std::filesystem::path& path, std::size_t num_classes = 0);
void save_dataset_csv(const std::filesystem::path& path, const Dataset& data);

// Balanced Gaussian clusters around seeded centers drawn uniformly from [-4, 4]^d.
// Rows are grouped by class.
Dataset make_blobs(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread, std::uint64_t seed);

}  // namespace lpe
