#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmref/model.hpp"
#include "mmref/optim.hpp"

namespace mmref {

struct NamedArray {
    std::string name;
    Tensor value;
    friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// Complete training state. Data order and mask draws are derived from
/// (seed, step), so these fields are enough to resume bit-identically.
struct Checkpoint {
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::int64_t optimizer_step = 0;
    std::vector<NamedArray> parameters;
    std::vector<NamedArray> first_moments;
    std::vector<NamedArray> second_moments;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

Checkpoint capture_checkpoint(Model& model, const Adam& optimizer, std::uint64_t seed, std::uint64_t step);

/// Validates every name and shape against the model before assigning anything.
void restore_checkpoint(const Checkpoint& ckpt, Model& model, Adam& optimizer);

/// Magic, version, manifest of (name, shape, offset), little-endian doubles.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mmref
