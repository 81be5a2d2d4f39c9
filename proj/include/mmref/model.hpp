#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmref/encoders.hpp"
#include "mmref/reference.hpp"

namespace mmref {

/// Everything learnable: both encoders, the reconstruction network and the bank.
struct Model {
    EncoderConfig encoder;
    TextEncoder text;
    ImageEncoder image;
    LocalReconstruction reconstruction;
    ReferenceBank bank;

    /// Deterministic in `seed`; one reference row per entry of `train_identities`.
    Model(const EncoderConfig& cfg, std::span<const int> train_identities, std::uint64_t seed);

    /// Stable order; names are unique.
    ParameterList parameters();
    ParameterList encoder_parameters();
};

}  // namespace mmref
