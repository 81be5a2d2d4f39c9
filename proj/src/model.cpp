#include "mmref/model.hpp"

#include "mmref/rng.hpp"

namespace mmref {
namespace {

enum InitTag : std::uint64_t { kText = 11, kImage = 12, kReconstruction = 13, kBank = 14 };

template <typename T, typename... Args>
T seeded(std::uint64_t seed, std::uint64_t tag, const Args&... args) {
    Rng rng(derive_seed(seed, tag));
    return T(args..., rng);
}

}  // namespace

Model::Model(const EncoderConfig& cfg, std::span<const int> train_identities, std::uint64_t seed)
    : encoder(cfg),
      text(seeded<TextEncoder>(seed, kText, cfg)),
      image(seeded<ImageEncoder>(seed, kImage, cfg)),
      reconstruction(seeded<LocalReconstruction>(
          seed, kReconstruction, ReconstructionConfig{cfg.d, cfg.vocab_size, cfg.n_heads, 3})),
      bank(train_identities, cfg.d, derive_seed(seed, kBank)) {}

ParameterList Model::encoder_parameters() {
    ParameterList out;
    text.collect(out);
    image.collect(out);
    return out;
}

ParameterList Model::parameters() {
    ParameterList out = encoder_parameters();
    reconstruction.collect(out);
    out.push_back(&bank.parameter());
    return out;
}

}  // namespace mmref
