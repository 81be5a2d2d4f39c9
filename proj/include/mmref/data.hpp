#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mmref/tensor.hpp"

namespace mmref {

struct CorpusConfig {
    std::size_t train_identities = 200;
    std::size_t test_identities = 50;
    std::size_t pairs_per_identity = 4;
    std::size_t slots = 6;
    std::size_t values_per_slot = 8;
    double image_noise = 0.1;
    std::size_t background_dims = 16;
    double p_drop = 0.3;
    double p_swap = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
    std::size_t image_dim() const { return slots * values_per_slot + background_dims; }
    /// Vocabulary needed by the tokenizer: specials, slot markers, values.
    std::size_t vocab_size() const;
    /// Longest text: BOS + (marker, value) per slot + EOS.
    std::size_t max_tokens() const { return 2 + 2 * slots; }
};

struct ObjectSpec {
    int identity = 0;
    std::vector<int> attributes;  ///< one value per slot
};

/// One attribute mention: "value v of slot k".
struct Phrase {
    int slot = 0;
    int value = 0;
    friend bool operator==(const Phrase&, const Phrase&) = default;
};

/// Closed vocabulary: ids 0-3 are PAD, MASK, BOS, EOS, then one marker per
/// slot, then values_per_slot value tokens per slot.
class Tokenizer {
public:
    Tokenizer(std::size_t slots, std::size_t values_per_slot);

    std::vector<int> tokenize(std::span<const Phrase> phrases) const;
    std::vector<Phrase> detokenize(std::span<const int> ids) const;

    int slot_token(int slot) const;
    int value_token(int slot, int value) const;
    std::size_t vocab_size() const;

private:
    std::size_t slots_;
    std::size_t values_;
};

struct Pair {
    int identity = 0;
    std::vector<double> image;
    std::vector<int> tokens;
    std::uint32_t dropped = 0;  ///< bit k: slot k omitted from the text
    std::uint32_t swapped = 0;  ///< bit k: slot k mentioned with a wrong value
};

enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct Corpus {
    CorpusConfig config;
    std::vector<ObjectSpec> objects;  ///< indexed by identity
    std::vector<Pair> train;
    std::vector<Pair> test;

    const std::vector<Pair>& split(Split s) const { return s == Split::Train ? train : test; }
    std::vector<int> identities(Split s) const;
    /// Indices into split(s) of the pairs of one identity.
    std::vector<std::size_t> pairs_of(Split s, int identity) const;
};

/// Deterministic per seed; train identities are 0..T-1, test identities T..T+U-1.
Corpus generate_corpus(const CorpusConfig& cfg);

struct PairBatch {
    std::vector<std::size_t> indices;  ///< into the train split
    std::vector<int> labels;
    std::vector<std::vector<int>> texts;
    Tensor images;  ///< n x image_dim
};

/// Gathers the listed train pairs into a batch.
PairBatch make_batch(const Corpus& corpus, std::span<const std::size_t> indices);

/// `identities_per_batch` distinct train identities, each with exactly
/// `pairs_per_identity` distinct pairs, in a seeded shuffled order.
PairBatch sample_batch(const Corpus& corpus, std::size_t identities_per_batch, std::size_t pairs_per_identity,
                       std::uint64_t seed);

/// One epoch: train identities shuffled and cut into consecutive groups of
/// `identities_per_batch` (remainder dropped); pairs drawn per identity.
std::vector<PairBatch> epoch_batches(const Corpus& corpus, std::size_t identities_per_batch,
                                     std::size_t pairs_per_identity, std::uint64_t seed);

std::size_t batches_per_epoch(const Corpus& corpus, std::size_t identities_per_batch);

/// Binary corpus file; layout in docs/formats.md.
void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

}  // namespace mmref
