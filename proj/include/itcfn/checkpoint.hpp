#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "itcfn/tensor.hpp"

namespace itcfn {

// Binary parameter file:
//   "ITCK" | u32 version | u32 count |
//   count x (u32 name_len, name bytes, u32 rank, rank x u32 dim, numel x f32) |
//   u32 meta_len, meta bytes (UTF-8 JSON, may be empty)
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    std::vector<NamedTensor> tensors;
    std::string metadata;

    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                     const std::string& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies values from a checkpoint into existing tensors, checking names and shapes.
void restore_tensors(const Checkpoint& ckpt, const std::vector<NamedTensor>& targets);

// FNV-1a over the float32 images of all values, in order. Used to detect any
// parameter change.
std::uint64_t parameter_checksum(const std::vector<NamedTensor>& tensors);

}  // namespace itcfn
