#include "mmref/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "mmref/binary_io.hpp"
#include "mmref/encoders.hpp"
#include "mmref/rng.hpp"

namespace mmref {
namespace {

constexpr std::uint32_t kCorpusVersion = 1;
constexpr char kCorpusMagic[5] = "MRFC";

enum StreamTag : std::uint64_t { kAttributes = 1, kText = 2, kImage = 3, kBatch = 4, kEpoch = 5 };

Pair make_pair(const CorpusConfig& cfg, const Tokenizer& tok, const ObjectSpec& obj, std::size_t pair_index) {
    Pair p;
    p.identity = obj.identity;

    Rng text_rng(derive_seed(cfg.seed, kText, obj.identity, pair_index));
    std::vector<Phrase> phrases;
    for (std::size_t k = 0; k < cfg.slots; ++k) {
        const bool drop = text_rng.bernoulli(cfg.p_drop);
        const bool swap = text_rng.bernoulli(cfg.p_swap);
        // Always consume the same number of draws per slot.
        const auto offset = static_cast<int>(cfg.values_per_slot > 1 ? 1 + text_rng.index(cfg.values_per_slot - 1) : 0);
        if (drop) {
            p.dropped |= 1u << k;
            continue;
        }
        int value = obj.attributes[k];
        if (swap) {
            p.swapped |= 1u << k;
            value = (value + offset) % static_cast<int>(cfg.values_per_slot);
        }
        phrases.push_back(Phrase{static_cast<int>(k), value});
    }
    p.tokens = tok.tokenize(phrases);

    Rng image_rng(derive_seed(cfg.seed, kImage, obj.identity, pair_index));
    p.image.assign(cfg.image_dim(), 0.0);
    for (std::size_t k = 0; k < cfg.slots; ++k) {
        p.image[k * cfg.values_per_slot + static_cast<std::size_t>(obj.attributes[k])] = 1.0;
    }
    for (std::size_t i = 0; i < cfg.slots * cfg.values_per_slot; ++i) p.image[i] += image_rng.normal(0.0, cfg.image_noise);
    for (std::size_t i = cfg.slots * cfg.values_per_slot; i < p.image.size(); ++i) p.image[i] = image_rng.normal();
    return p;
}

}  // namespace

void CorpusConfig::validate() const {
    if (train_identities == 0 || test_identities == 0) throw DomainError("corpus: need train and test identities");
    if (pairs_per_identity == 0) throw DomainError("corpus: pairs-per-identity must be >= 1");
    if (slots == 0 || slots > 32) throw DomainError("corpus: slots must lie in [1, 32]");
    if (values_per_slot == 0) throw DomainError("corpus: values-per-slot must be >= 1");
    if (!(p_drop >= 0.0 && p_drop <= 1.0) || !(p_swap >= 0.0 && p_swap <= 1.0)) {
        throw DomainError("corpus: p_drop and p_swap must lie in [0, 1]");
    }
    if (p_swap > 0.0 && values_per_slot < 2) throw DomainError("corpus: swapping needs values-per-slot >= 2");
    if (!(image_noise >= 0.0)) throw DomainError("corpus: image noise must be >= 0");
}

std::size_t CorpusConfig::vocab_size() const { return Tokenizer(slots, values_per_slot).vocab_size(); }

Tokenizer::Tokenizer(std::size_t slots, std::size_t values_per_slot) : slots_(slots), values_(values_per_slot) {}

std::size_t Tokenizer::vocab_size() const { return tokens::kReserved + slots_ + slots_ * values_; }

int Tokenizer::slot_token(int slot) const {
    if (slot < 0 || static_cast<std::size_t>(slot) >= slots_) throw DomainError("tokenize: unknown slot " + std::to_string(slot));
    return tokens::kReserved + slot;
}

int Tokenizer::value_token(int slot, int value) const {
    if (slot < 0 || static_cast<std::size_t>(slot) >= slots_ || value < 0 || static_cast<std::size_t>(value) >= values_) {
        throw DomainError("tokenize: unknown phrase (slot " + std::to_string(slot) + ", value " + std::to_string(value) + ")");
    }
    return tokens::kReserved + static_cast<int>(slots_) + slot * static_cast<int>(values_) + value;
}

std::vector<int> Tokenizer::tokenize(std::span<const Phrase> phrases) const {
    std::vector<int> ids{tokens::kBos};
    for (const Phrase& p : phrases) {
        const int value = value_token(p.slot, p.value);
        ids.push_back(slot_token(p.slot));
        ids.push_back(value);
    }
    ids.push_back(tokens::kEos);
    return ids;
}

std::vector<Phrase> Tokenizer::detokenize(std::span<const int> ids) const {
    if (ids.size() < 2 || ids.front() != tokens::kBos || ids.back() != tokens::kEos || ids.size() % 2 != 0) {
        throw DomainError("detokenize: not a BOS ... EOS phrase sequence");
    }
    std::vector<Phrase> out;
    const int first_value = tokens::kReserved + static_cast<int>(slots_);
    for (std::size_t i = 1; i + 1 < ids.size(); i += 2) {
        const int slot = ids[i] - tokens::kReserved;
        const int rel = ids[i + 1] - first_value;
        if (slot < 0 || static_cast<std::size_t>(slot) >= slots_ || rel < 0 ||
            rel / static_cast<int>(values_) != slot || static_cast<std::size_t>(rel) >= slots_ * values_) {
            throw DomainError("detokenize: malformed phrase at position " + std::to_string(i));
        }
        out.push_back(Phrase{slot, rel % static_cast<int>(values_)});
    }
    return out;
}

std::vector<int> Corpus::identities(Split s) const {
    std::vector<int> ids;
    const std::size_t begin = s == Split::Train ? 0 : config.train_identities;
    const std::size_t count = s == Split::Train ? config.train_identities : config.test_identities;
    for (std::size_t i = 0; i < count; ++i) ids.push_back(static_cast<int>(begin + i));
    return ids;
}

std::vector<std::size_t> Corpus::pairs_of(Split s, int identity) const {
    const auto& pairs = split(s);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (pairs[i].identity == identity) out.push_back(i);
    }
    return out;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    Corpus corpus;
    corpus.config = cfg;
    const Tokenizer tok(cfg.slots, cfg.values_per_slot);
    const std::size_t total = cfg.train_identities + cfg.test_identities;
    for (std::size_t id = 0; id < total; ++id) {
        Rng rng(derive_seed(cfg.seed, kAttributes, id));
        ObjectSpec obj{static_cast<int>(id), {}};
        for (std::size_t k = 0; k < cfg.slots; ++k) obj.attributes.push_back(static_cast<int>(rng.index(cfg.values_per_slot)));
        auto& dst = id < cfg.train_identities ? corpus.train : corpus.test;
        for (std::size_t p = 0; p < cfg.pairs_per_identity; ++p) dst.push_back(make_pair(cfg, tok, obj, p));
        corpus.objects.push_back(std::move(obj));
    }
    return corpus;
}

PairBatch make_batch(const Corpus& corpus, std::span<const std::size_t> indices) {
    PairBatch b;
    const std::size_t dim = corpus.config.image_dim();
    std::vector<double> images;
    images.reserve(indices.size() * dim);
    for (std::size_t i : indices) {
        const Pair& p = corpus.train.at(i);
        b.indices.push_back(i);
        b.labels.push_back(p.identity);
        b.texts.push_back(p.tokens);
        images.insert(images.end(), p.image.begin(), p.image.end());
    }
    b.images = Tensor({indices.size(), dim}, std::move(images));
    return b;
}

namespace {

std::vector<std::size_t> draw_pairs(const Corpus& corpus, std::span<const int> identities, std::size_t per_identity,
                                    Rng& rng) {
    std::vector<std::size_t> chosen;
    for (int id : identities) {
        auto pairs = corpus.pairs_of(Split::Train, id);
        if (pairs.size() < per_identity) {
            throw DomainError("sample_batch: identity " + std::to_string(id) + " has only " +
                              std::to_string(pairs.size()) + " pairs");
        }
        for (std::size_t i = 0; i < per_identity; ++i) std::swap(pairs[i], pairs[i + rng.index(pairs.size() - i)]);
        chosen.insert(chosen.end(), pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(per_identity));
    }
    rng.shuffle(std::span<std::size_t>(chosen));
    return chosen;
}

}  // namespace

PairBatch sample_batch(const Corpus& corpus, std::size_t identities_per_batch, std::size_t pairs_per_identity,
                       std::uint64_t seed) {
    auto ids = corpus.identities(Split::Train);
    if (identities_per_batch == 0 || identities_per_batch > ids.size()) {
        throw DomainError("sample_batch: need " + std::to_string(identities_per_batch) + " identities, corpus has " +
                          std::to_string(ids.size()));
    }
    Rng rng(derive_seed(seed, kBatch));
    for (std::size_t i = 0; i < identities_per_batch; ++i) std::swap(ids[i], ids[i + rng.index(ids.size() - i)]);
    ids.resize(identities_per_batch);
    const auto chosen = draw_pairs(corpus, ids, pairs_per_identity, rng);
    return make_batch(corpus, chosen);
}

std::size_t batches_per_epoch(const Corpus& corpus, std::size_t identities_per_batch) {
    if (identities_per_batch == 0) throw DomainError("epoch: identities-per-batch must be >= 1");
    const std::size_t n = corpus.config.train_identities / identities_per_batch;
    if (n == 0) throw DomainError("epoch: fewer train identities than one batch needs");
    return n;
}

std::vector<PairBatch> epoch_batches(const Corpus& corpus, std::size_t identities_per_batch,
                                     std::size_t pairs_per_identity, std::uint64_t seed) {
    const std::size_t n = batches_per_epoch(corpus, identities_per_batch);
    auto ids = corpus.identities(Split::Train);
    Rng rng(derive_seed(seed, kEpoch));
    rng.shuffle(std::span<int>(ids));
    std::vector<PairBatch> batches;
    for (std::size_t b = 0; b < n; ++b) {
        std::span<const int> group(ids.data() + b * identities_per_batch, identities_per_batch);
        batches.push_back(make_batch(corpus, draw_pairs(corpus, group, pairs_per_identity, rng)));
    }
    return batches;
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
    using namespace binary;
    const CorpusConfig& c = corpus.config;
    out.write(kCorpusMagic, 4);
    write_le<std::uint32_t>(out, kCorpusVersion);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.train_identities));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.test_identities));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.pairs_per_identity));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.slots));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.values_per_slot));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.background_dims));
    write_le<double>(out, c.image_noise);
    write_le<double>(out, c.p_drop);
    write_le<double>(out, c.p_swap);
    write_le<std::uint64_t>(out, c.seed);

    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.objects.size()));
    for (const ObjectSpec& o : corpus.objects) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(o.identity));
        for (int a : o.attributes) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a));
    }
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.train.size() + corpus.test.size()));
    for (Split s : {Split::Train, Split::Test}) {
        for (const Pair& p : corpus.split(s)) {
            write_le<std::uint8_t>(out, static_cast<std::uint8_t>(s));
            write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.identity));
            write_le<std::uint32_t>(out, p.dropped);
            write_le<std::uint32_t>(out, p.swapped);
            write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tokens.size()));
            for (int t : p.tokens) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t));
            write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.image.size()));
            for (double v : p.image) write_le<double>(out, v);
        }
    }
    if (!out) throw FormatError("write_corpus: stream failure");
}

Corpus read_corpus(std::istream& in) {
    using namespace binary;
    expect_magic(in, kCorpusMagic);
    const auto version = read_le<std::uint32_t>(in);
    if (version != kCorpusVersion) throw FormatError("corpus: unsupported version " + std::to_string(version));
    Corpus corpus;
    CorpusConfig& c = corpus.config;
    c.train_identities = read_le<std::uint32_t>(in);
    c.test_identities = read_le<std::uint32_t>(in);
    c.pairs_per_identity = read_le<std::uint32_t>(in);
    c.slots = read_le<std::uint32_t>(in);
    c.values_per_slot = read_le<std::uint32_t>(in);
    c.background_dims = read_le<std::uint32_t>(in);
    c.image_noise = read_le<double>(in);
    c.p_drop = read_le<double>(in);
    c.p_swap = read_le<double>(in);
    c.seed = read_le<std::uint64_t>(in);
    c.validate();

    const auto n_objects = read_le<std::uint32_t>(in);
    if (n_objects != c.train_identities + c.test_identities) throw FormatError("corpus: object count mismatch");
    for (std::uint32_t i = 0; i < n_objects; ++i) {
        ObjectSpec o;
        o.identity = static_cast<int>(read_le<std::uint32_t>(in));
        if (o.identity != static_cast<int>(i)) throw FormatError("corpus: identities must be dense and ordered");
        for (std::size_t k = 0; k < c.slots; ++k) o.attributes.push_back(static_cast<int>(read_le<std::uint32_t>(in)));
        corpus.objects.push_back(std::move(o));
    }
    const auto n_pairs = read_le<std::uint32_t>(in);
    const std::size_t vocab = c.vocab_size();
    for (std::uint32_t i = 0; i < n_pairs; ++i) {
        const auto split = read_le<std::uint8_t>(in);
        if (split > 1) throw FormatError("corpus: bad split tag");
        Pair p;
        p.identity = static_cast<int>(read_le<std::uint32_t>(in));
        p.dropped = read_le<std::uint32_t>(in);
        p.swapped = read_le<std::uint32_t>(in);
        const auto n_tokens = read_le<std::uint32_t>(in);
        if (n_tokens > c.max_tokens()) throw FormatError("corpus: token count exceeds maximum");
        for (std::uint32_t t = 0; t < n_tokens; ++t) {
            const auto id = read_le<std::uint32_t>(in);
            if (id >= vocab) throw FormatError("corpus: token id outside vocabulary");
            p.tokens.push_back(static_cast<int>(id));
        }
        const auto n_image = read_le<std::uint32_t>(in);
        if (n_image != c.image_dim()) throw FormatError("corpus: image length mismatch");
        for (std::uint32_t t = 0; t < n_image; ++t) p.image.push_back(read_le<double>(in));
        (split == 0 ? corpus.train : corpus.test).push_back(std::move(p));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("corpus: trailing bytes");
    return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    write_corpus(out, corpus);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return read_corpus(in);
}

}  // namespace mmref
